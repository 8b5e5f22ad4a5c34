//! Where a session sends its requests: an engine in this process, or a
//! running service over HTTP.

use anyhow::{anyhow, bail, Context, Result};
use cytotune_core::engine::{assess_on, preview_on};
use cytotune_core::explain::WhatIf;
use cytotune_core::tree::evaluate;
use cytotune_core::{Assessment, CellSample, Engine, FeatureSchema, Intervention, StepEdit};
use cytotune_server::api::{InterventionResponse, Metrics, AUTHOR_HEADER};
use serde::Deserialize;
use serde_json::json;

#[derive(Debug, Clone, PartialEq)]
pub struct Committed {
    pub seq: u64,
    pub new_version: u64,
    pub retrained: bool,
}

pub trait Backend {
    fn schema(&mut self) -> Result<FeatureSchema>;
    fn assess(&mut self, sample_id: &str) -> Result<Assessment>;
    fn whatif(&mut self, sample_id: &str, edits: &[StepEdit]) -> Result<WhatIf>;
    fn commit(&mut self, intervention: Intervention) -> Result<Committed>;
    fn holdout_accuracy(&mut self) -> Result<f64>;
    fn current_hash(&mut self) -> Result<String>;
    fn version_count(&mut self) -> Result<usize>;
    fn current_version(&mut self) -> Result<u64>;
}

pub struct InProcess {
    pub engine: Engine,
    pub holdout: Vec<CellSample>,
}

impl Backend for InProcess {
    fn schema(&mut self) -> Result<FeatureSchema> {
        Ok(self.engine.setup().schema.clone())
    }

    fn assess(&mut self, sample_id: &str) -> Result<Assessment> {
        let sample = self.engine.sample(sample_id)?;
        Ok(assess_on(self.engine.current(), sample)?)
    }

    fn whatif(&mut self, sample_id: &str, edits: &[StepEdit]) -> Result<WhatIf> {
        let sample = self.engine.sample(sample_id)?;
        Ok(preview_on(self.engine.current(), sample, edits)?)
    }

    fn commit(&mut self, intervention: Intervention) -> Result<Committed> {
        let c = self.engine.commit(intervention)?;
        Ok(Committed {
            seq: c.seq,
            new_version: c.final_version().version,
            retrained: c.retrained.is_some(),
        })
    }

    fn holdout_accuracy(&mut self) -> Result<f64> {
        Ok(evaluate(&self.engine.current().model, &self.holdout)?.accuracy)
    }

    fn current_hash(&mut self) -> Result<String> {
        Ok(self.engine.current().content_hash.clone())
    }

    fn version_count(&mut self) -> Result<usize> {
        Ok(self.engine.versions().len())
    }

    fn current_version(&mut self) -> Result<u64> {
        Ok(self.engine.current().version)
    }
}

/// Client for the HTTP service.
pub struct Http {
    base: String,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct VersionEntry {
    content_hash: String,
}

#[derive(Deserialize)]
struct VersionList {
    versions: Vec<VersionEntry>,
}

impl Http {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            base: base_url.trim_end_matches('/').to_string(),
            agent,
        }
    }

    fn get<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<T> {
        let mut resp = self
            .agent
            .get(format!("{}{path}", self.base))
            .call()
            .with_context(|| format!("GET {path}"))?;
        if !resp.status().is_success() {
            bail!("GET {path}: {} {}", resp.status(), resp.body_mut().read_to_string()?);
        }
        Ok(resp.body_mut().read_json()?)
    }

    fn post<T: serde::de::DeserializeOwned>(&self, path: &str, author: &str, body: serde_json::Value) -> Result<T> {
        let mut resp = self
            .agent
            .post(format!("{}{path}", self.base))
            .header(AUTHOR_HEADER, author)
            .send_json(&body)
            .with_context(|| format!("POST {path}"))?;
        if !resp.status().is_success() {
            bail!("POST {path}: {} {}", resp.status(), resp.body_mut().read_to_string()?);
        }
        Ok(resp.body_mut().read_json()?)
    }

    fn versions(&self) -> Result<VersionList> {
        self.get("/model/versions")
    }
}

impl Backend for Http {
    fn schema(&mut self) -> Result<FeatureSchema> {
        self.get("/schema")
    }

    fn assess(&mut self, sample_id: &str) -> Result<Assessment> {
        self.get(&format!("/samples/{sample_id}/assessment"))
    }

    fn whatif(&mut self, sample_id: &str, edits: &[StepEdit]) -> Result<WhatIf> {
        self.post("/whatif", "sim-expert", json!({"sample_id": sample_id, "edits": edits}))
    }

    fn commit(&mut self, iv: Intervention) -> Result<Committed> {
        let body = json!({
            "id": iv.id,
            "sample_id": iv.sample_id,
            "base_model_version": iv.base_model_version,
            "action": iv.action,
        });
        let r: InterventionResponse = self.post("/interventions", &iv.author, body)?;
        Ok(Committed {
            seq: r.accepted_seq,
            new_version: r.new_version,
            retrained: r.retrained,
        })
    }

    fn holdout_accuracy(&mut self) -> Result<f64> {
        let m: Metrics = self.get("/metrics")?;
        m.accuracy_on_holdout
            .ok_or_else(|| anyhow!("the service has no holdout data configured"))
    }

    fn current_hash(&mut self) -> Result<String> {
        self.versions()?
            .versions
            .pop()
            .map(|v| v.content_hash)
            .ok_or_else(|| anyhow!("service reported no versions"))
    }

    fn version_count(&mut self) -> Result<usize> {
        Ok(self.versions()?.versions.len())
    }

    fn current_version(&mut self) -> Result<u64> {
        let m: Metrics = self.get("/metrics")?;
        Ok(m.current_version)
    }
}
