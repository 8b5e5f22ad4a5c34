//! Multi-seed convergence experiment: does reviewing with corrections raise
//! held-out accuracy?

use std::io::Write;

use anyhow::Result;
use cytotune_core::{AdaptationPolicy, FeatureSchema, InterventionLog, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::generator::{gen_dataset, GeneratorSpec};
use crate::session::{run_session, SessionSpec};
use crate::{in_process, review_pool};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub base_seed: u64,
    pub seeds: usize,
    pub generator: GeneratorSpec,
    pub session: SessionSpec,
    pub policy: AdaptationPolicy,
    pub train: TrainConfig,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            base_seed: 0,
            seeds: 10,
            generator: GeneratorSpec::default(),
            session: SessionSpec::default(),
            policy: AdaptationPolicy::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub before: f64,
    pub after: f64,
}

impl SeedOutcome {
    pub fn improvement(&self) -> f64 {
        self.after - self.before
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub rows: Vec<SeedOutcome>,
}

impl ExperimentOutcome {
    pub fn strictly_better(&self) -> usize {
        self.rows.iter().filter(|r| r.after > r.before).count()
    }

    pub fn not_worse(&self) -> usize {
        self.rows.iter().filter(|r| r.after >= r.before).count()
    }

    pub fn median_improvement(&self) -> f64 {
        let mut d: Vec<f64> = self.rows.iter().map(SeedOutcome::improvement).collect();
        d.sort_by(f64::total_cmp);
        match d.len() {
            0 => 0.0,
            n if n % 2 == 1 => d[n / 2],
            n => (d[n / 2 - 1] + d[n / 2]) / 2.0,
        }
    }

    /// No seed loses accuracy and at least nine in ten gain some.
    pub fn passes(&self) -> bool {
        let n = self.rows.len();
        n > 0 && self.not_worse() == n && self.strictly_better() * 10 >= n * 9
    }

    /// Per-seed rows, then a `median` row carrying the median improvement.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["seed", "accuracy_before", "accuracy_after", "improvement"])?;
        for r in &self.rows {
            w.write_record([
                r.seed.to_string(),
                format!("{:.6}", r.before),
                format!("{:.6}", r.after),
                format!("{:.6}", r.improvement()),
            ])?;
        }
        w.write_record(["median", "", "", &format!("{:.6}", self.median_improvement())])?;
        w.flush()?;
        Ok(())
    }
}

pub fn run_seed(spec: &ExperimentSpec, seed: u64) -> Result<SeedOutcome> {
    let schema = FeatureSchema::morphological();
    let generator = GeneratorSpec {
        seed,
        ..spec.generator.clone()
    };
    let data = gen_dataset(&generator, &schema)?;
    let mut backend = in_process(&data, &schema, &spec.policy, &spec.train, InterventionLog::in_memory())?;
    let session = SessionSpec {
        seed,
        ..spec.session.clone()
    };
    let report = run_session(&mut backend, &review_pool(&data, spec.session.pool), &session)?;
    Ok(SeedOutcome {
        seed,
        before: report.initial.holdout_accuracy,
        after: report.final_accuracy(),
    })
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    let rows = (0..spec.seeds as u64)
        .map(|i| run_seed(spec, spec.base_seed + i))
        .collect::<Result<_>>()?;
    Ok(ExperimentOutcome { rows })
}
