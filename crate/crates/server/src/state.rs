//! Shared service state.
//!
//! All writes go through one engine behind an async mutex. Reads never touch
//! that mutex: they use an immutable snapshot that is swapped in after each
//! commit, so a long retrain does not hold up GET requests.

use std::sync::{Arc, RwLock};

use cytotune_core::tree::evaluate;
use cytotune_core::{CellSample, Engine, FeatureSchema, ModelVersion, VersionOrigin};
use serde::Serialize;
use tokio::sync::Mutex;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VersionInfo {
    pub version: u64,
    pub content_hash: String,
    pub origin: VersionOrigin,
    pub base_version: Option<u64>,
    pub interventions: Vec<String>,
    pub leaf_count: usize,
    pub depth: usize,
    pub accuracy_on_holdout: Option<f64>,
}

/// What readers see: one consistent view of the engine.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub current: Arc<ModelVersion>,
    pub versions: Arc<Vec<VersionInfo>>,
    /// Reviewable samples, ordered by id.
    pub samples: Arc<Vec<CellSample>>,
    pub interventions_total: usize,
    pub interventions_since_retrain: usize,
    pub log_events: usize,
}

impl Snapshot {
    pub fn sample(&self, id: &str) -> Option<&CellSample> {
        self.samples
            .binary_search_by(|s| s.id.as_str().cmp(id))
            .ok()
            .map(|i| &self.samples[i])
    }
}

pub struct AppState {
    writer: Arc<Mutex<Engine>>,
    snapshot: RwLock<Arc<Snapshot>>,
    holdout: Vec<CellSample>,
    schema: FeatureSchema,
}

impl AppState {
    pub fn new(engine: Engine, holdout: Vec<CellSample>) -> Arc<Self> {
        let schema = engine.setup().schema.clone();
        let samples = Arc::new(engine.samples().cloned().collect());
        let snapshot = build_snapshot(&engine, &holdout, samples, &[]);
        Arc::new(Self {
            writer: Arc::new(Mutex::new(engine)),
            snapshot: RwLock::new(Arc::new(snapshot)),
            holdout,
            schema,
        })
    }

    pub fn snapshot(&self) -> Arc<Snapshot> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn holdout(&self) -> &[CellSample] {
        &self.holdout
    }

    /// Runs `f` on the engine on a blocking thread, one writer at a time, and
    /// publishes a fresh snapshot afterwards.
    pub async fn write<T, F>(self: &Arc<Self>, f: F) -> T
    where
        F: FnOnce(&mut Engine) -> T + Send + 'static,
        T: Send + 'static,
    {
        let mut guard = self.writer.clone().lock_owned().await;
        let state = self.clone();
        tokio::task::spawn_blocking(move || {
            let out = f(&mut guard);
            state.publish(&guard);
            out
        })
        .await
        .expect("engine task panicked")
    }

    fn publish(&self, engine: &Engine) {
        let prev = self.snapshot();
        if prev.log_events == engine.log().len() {
            return;
        }
        let next = build_snapshot(engine, &self.holdout, prev.samples.clone(), &prev.versions);
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
    }
}

fn build_snapshot(
    engine: &Engine,
    holdout: &[CellSample],
    samples: Arc<Vec<CellSample>>,
    known: &[VersionInfo],
) -> Snapshot {
    let mut versions = known.to_vec();
    for v in &engine.versions()[known.len()..] {
        versions.push(VersionInfo {
            version: v.version,
            content_hash: v.content_hash.clone(),
            origin: v.lineage.origin,
            base_version: v.lineage.base_version,
            interventions: v.lineage.interventions.clone(),
            leaf_count: v.model.leaf_count(),
            depth: v.model.depth(),
            accuracy_on_holdout: holdout_accuracy(v, holdout),
        });
    }
    Snapshot {
        current: engine.current().clone(),
        versions: Arc::new(versions),
        samples,
        interventions_total: engine.interventions_total(),
        interventions_since_retrain: engine.interventions_since_retrain(),
        log_events: engine.log().len(),
    }
}

fn holdout_accuracy(version: &ModelVersion, holdout: &[CellSample]) -> Option<f64> {
    if holdout.is_empty() {
        return None;
    }
    evaluate(&version.model, holdout).ok().map(|e| e.accuracy)
}
