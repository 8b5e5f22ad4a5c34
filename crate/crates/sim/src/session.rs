//! A scripted review session and its report.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use chrono::{DateTime, Duration};
use cytotune_core::{CellClass, Intervention, InterventionAction};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::Backend;
use crate::expert::{flip_candidates, override_or_accept, ExpertKind, ExpertPolicy};

pub const AUTHOR: &str = "sim-expert";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSpec {
    pub expert: ExpertPolicy,
    pub k_interventions: usize,
    /// Seeds the review order and the expert's random choices.
    pub seed: u64,
    pub pool: crate::ReviewPool,
    pub order: ReviewOrder,
}

/// Order in which the expert works through the pool.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewOrder {
    /// Seeded shuffle.
    #[default]
    Random,
    /// Lowest confidence under the starting model first, ties by id.
    LeastConfident,
}

impl Default for SessionSpec {
    fn default() -> Self {
        Self {
            expert: ExpertPolicy::default(),
            k_interventions: 200,
            seed: 0,
            pool: crate::ReviewPool::default(),
            order: ReviewOrder::Random,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurvePoint {
    pub intervention_index: usize,
    pub holdout_accuracy: f64,
    pub version: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ActionCounts {
    pub accept: usize,
    pub label_override: usize,
    pub explanation_edit: usize,
    pub combined: usize,
}

impl ActionCounts {
    fn count(&mut self, action: &InterventionAction) {
        match action {
            InterventionAction::Accept => self.accept += 1,
            InterventionAction::LabelOverride { .. } => self.label_override += 1,
            InterventionAction::ExplanationEdit { .. } => self.explanation_edit += 1,
            InterventionAction::Combined { .. } => self.combined += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionReport {
    pub initial: CurvePoint,
    /// One point per intervention, after it was applied.
    pub accuracy_curve: Vec<CurvePoint>,
    pub versions: usize,
    pub retrains: usize,
    pub wrong_before_review: usize,
    pub actions: ActionCounts,
    pub final_hash: String,
    pub log_path: Option<String>,
}

impl SessionReport {
    pub fn final_accuracy(&self) -> f64 {
        self.accuracy_curve
            .last()
            .unwrap_or(&self.initial)
            .holdout_accuracy
    }

    /// `intervention_index,holdout_accuracy,version`, starting with the
    /// state before any intervention.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_curve(out, std::iter::once(&self.initial).chain(&self.accuracy_curve))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "interventions: {}", self.accuracy_curve.len());
        let _ = writeln!(
            s,
            "actions: {} accept, {} label_override, {} explanation_edit, {} combined",
            self.actions.accept, self.actions.label_override, self.actions.explanation_edit, self.actions.combined
        );
        let _ = writeln!(s, "samples wrong when reviewed: {}", self.wrong_before_review);
        let _ = writeln!(s, "holdout accuracy: {:.4} -> {:.4}", self.initial.holdout_accuracy, self.final_accuracy());
        let _ = writeln!(s, "model versions: {} ({} retrains)", self.versions, self.retrains);
        let _ = writeln!(s, "final content hash: {}", self.final_hash);
        if let Some(p) = &self.log_path {
            let _ = writeln!(s, "log: {p}");
        }
        s
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let csv = dir.join("report.csv");
        self.write_csv(std::fs::File::create(&csv).with_context(|| format!("creating {}", csv.display()))?)?;
        std::fs::write(dir.join("summary.txt"), self.summary())?;
        Ok(())
    }
}

pub fn write_curve<'a, W: Write>(out: W, rows: impl IntoIterator<Item = &'a CurvePoint>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["intervention_index", "holdout_accuracy", "version"])?;
    for p in rows {
        w.write_record([
            p.intervention_index.to_string(),
            format!("{:.6}", p.holdout_accuracy),
            p.version.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reviews `k` samples from `pool` (id and true label), in a seeded random
/// order that wraps around when `k` exceeds the pool.
pub fn run_session(backend: &mut dyn Backend, pool: &[(String, CellClass)], spec: &SessionSpec) -> Result<SessionReport> {
    anyhow::ensure!(!pool.is_empty() || spec.k_interventions == 0, "no samples to review");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);
    if spec.order == ReviewOrder::LeastConfident {
        let mut confidence = Vec::with_capacity(pool.len());
        for (id, _) in pool {
            let p = backend.assess(id)?.prediction;
            confidence.push(p.confidence_of(p.predicted));
        }
        order.sort_by(|&a, &b| confidence[a].total_cmp(&confidence[b]).then_with(|| pool[a].0.cmp(&pool[b].0)));
    }
    let schema = backend.schema()?;
    let feature_min = |name: &str| schema.index_of(name).map(|i| schema.features()[i].min).unwrap_or(f64::MIN);

    let initial = CurvePoint {
        intervention_index: 0,
        holdout_accuracy: backend.holdout_accuracy()?,
        version: backend.current_version()?,
    };
    let mut curve = Vec::with_capacity(spec.k_interventions);
    let mut actions = ActionCounts::default();
    let mut retrains = 0;
    let mut wrong = 0;
    for k in 0..spec.k_interventions {
        let (sample_id, truth) = &pool[order[k % order.len()]];
        let assessment = backend.assess(sample_id)?;
        let predicted = assessment.prediction.predicted;
        let belief = spec.expert.belief(*truth, &mut rng);
        if predicted != *truth {
            wrong += 1;
        }
        let action = match spec.expert.pick(&mut rng) {
            ExpertKind::AcceptAll => InterventionAction::Accept,
            ExpertKind::AlwaysOverrideWhenWrong => override_or_accept(predicted, belief),
            ExpertKind::Mixed => unreachable!("pick resolves mixed"),
            ExpertKind::EditExplanationWhenWrong if predicted == belief => InterventionAction::Accept,
            ExpertKind::EditExplanationWhenWrong => {
                let candidates = flip_candidates(&assessment, feature_min);
                let mut chosen = None;
                for edit in &candidates {
                    let preview = backend.whatif(sample_id, std::slice::from_ref(edit))?;
                    if preview.new_prediction.predicted == belief {
                        chosen = Some(edit.clone());
                        break;
                    }
                }
                match (chosen, candidates.into_iter().next()) {
                    (Some(edit), _) => InterventionAction::ExplanationEdit { edits: vec![edit] },
                    (None, Some(edit)) => InterventionAction::Combined {
                        new_label: belief,
                        edits: vec![edit],
                    },
                    (None, None) => InterventionAction::LabelOverride { new_label: belief },
                }
            }
        };
        actions.count(&action);
        let intervention = Intervention {
            id: format!("sim-{k:05}"),
            sample_id: sample_id.clone(),
            author: AUTHOR.to_string(),
            timestamp: DateTime::UNIX_EPOCH + Duration::seconds(k as i64),
            base_model_version: assessment.model_version,
            action,
        };
        let committed = backend.commit(intervention)?;
        retrains += committed.retrained as usize;
        curve.push(CurvePoint {
            intervention_index: k + 1,
            holdout_accuracy: backend.holdout_accuracy()?,
            version: committed.new_version,
        });
    }
    Ok(SessionReport {
        initial,
        accuracy_curve: curve,
        versions: backend.version_count()?,
        retrains,
        wrong_before_review: wrong,
        actions,
        final_hash: backend.current_hash()?,
        log_path: None,
    })
}
