//! Simulation harness: synthetic data, scripted experts, review sessions
//! against an in-process engine or the HTTP service, and the multi-seed
//! convergence experiment.

pub mod backend;
pub mod experiment;
pub mod expert;
pub mod generator;
pub mod session;

use anyhow::Result;
use cytotune_core::{AdaptationPolicy, CellClass, Clock, Engine, EngineSetup, FeatureSchema, InterventionLog, TrainConfig};

use backend::InProcess;
use generator::GeneratedData;

pub fn engine_setup(data: &GeneratedData, schema: &FeatureSchema, policy: &AdaptationPolicy, train: &TrainConfig) -> EngineSetup {
    let mut setup = EngineSetup::new(schema.clone(), data.train.clone());
    setup.review = data.review.clone();
    setup.policy = policy.clone();
    setup.config = train.clone();
    setup
}

/// Engine over generated data with a stepped clock, so logs are byte-stable.
pub fn in_process(
    data: &GeneratedData,
    schema: &FeatureSchema,
    policy: &AdaptationPolicy,
    train: &TrainConfig,
    log: InterventionLog,
) -> Result<InProcess> {
    let engine = Engine::start(engine_setup(data, schema, policy, train), log, Clock::stepped_from_epoch())?;
    Ok(InProcess {
        engine,
        holdout: data.holdout.clone(),
    })
}

/// Which samples the expert reviews.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewPool {
    /// The training samples, whose recorded labels may be noisy.
    Training,
    /// Only the separate review samples.
    #[default]
    Review,
    All,
}

/// Samples the expert may review, with their true labels.
pub fn review_pool(data: &GeneratedData, pool: ReviewPool) -> Vec<(String, CellClass)> {
    let n_train = data.train.len();
    match pool {
        ReviewPool::Training => data.oracle[..n_train].to_vec(),
        ReviewPool::Review => data.oracle[n_train..].to_vec(),
        ReviewPool::All => data.oracle.clone(),
    }
}
