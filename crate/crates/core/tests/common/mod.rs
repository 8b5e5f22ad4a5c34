#![allow(dead_code)]

use cytotune_core::{CellClass, CellSample, FeatureSchema, FeatureSpec};
use rand::Rng;

pub fn unit_schema(n: usize) -> FeatureSchema {
    FeatureSchema::new(
        (0..n)
            .map(|i| FeatureSpec::new(format!("f{i}"), "", 0.0, 1.0))
            .collect(),
    )
    .unwrap()
}

/// Values on a grid of `steps + 1` points in [0, 1] so ties and repeated
/// values are common.
pub fn grid_value<R: Rng>(rng: &mut R, steps: u32) -> f64 {
    rng.random_range(0..=steps) as f64 / steps as f64
}

pub fn random_dataset<R: Rng>(
    rng: &mut R,
    n: usize,
    n_features: usize,
    n_classes: usize,
    steps: u32,
) -> Vec<CellSample> {
    (0..n)
        .map(|i| {
            let features = (0..n_features).map(|_| grid_value(rng, steps)).collect();
            let label = CellClass::ALL[rng.random_range(0..n_classes)];
            CellSample::labeled(format!("r{i:04}"), features, label)
        })
        .collect()
}

pub fn random_sample<R: Rng>(rng: &mut R, id: &str, n_features: usize) -> CellSample {
    CellSample::new(id, (0..n_features).map(|_| rng.random::<f64>()).collect())
}

pub fn intervention(
    id: &str,
    sample_id: &str,
    base: u64,
    action: cytotune_core::InterventionAction,
) -> cytotune_core::Intervention {
    cytotune_core::Intervention {
        id: id.to_string(),
        sample_id: sample_id.to_string(),
        author: "tester".to_string(),
        timestamp: chrono::DateTime::UNIX_EPOCH,
        base_model_version: base,
        action,
    }
}

/// A deep tree: many distinct values, nine classes, leaves of one sample.
pub fn deep_version(seed: u64, n_features: usize) -> cytotune_core::ModelVersion {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let data = random_dataset(&mut rng, 300, n_features, 9, 1000);
    let config = cytotune_core::TrainConfig {
        max_depth: 6,
        min_leaf_samples: 1,
        ..Default::default()
    };
    let model = cytotune_core::tree::train(&data, None, &unit_schema(n_features), &config).unwrap();
    cytotune_core::ModelVersion::bootstrap(model)
}
