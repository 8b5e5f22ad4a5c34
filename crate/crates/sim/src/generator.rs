//! Synthetic cytology data: truncated Gaussians per cytotype, with uniform
//! label noise on the training split.

use std::path::Path;

use anyhow::{ensure, Context, Result};
use cytotune_core::dataset::save_samples;
use cytotune_core::{CellClass, CellSample, FeatureSchema, NUM_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Feature means and standard deviations of one cytotype, in schema order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassProfile {
    pub class: CellClass,
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_holdout: usize,
    /// Extra unlabeled-for-training samples offered for review.
    pub n_review: usize,
    pub label_noise_rate: f64,
    pub profiles: Vec<ClassProfile>,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 1000,
            n_holdout: 300,
            n_review: 1000,
            label_noise_rate: 0.3,
            profiles: default_profiles(),
        }
    }
}

/// Morphology of the nine cytotypes on the default schema. Classes overlap
/// on every single feature; only combinations separate them.
pub fn default_profiles() -> Vec<ClassProfile> {
    use CellClass::*;
    // area, perimeter, circularity, n/c ratio, R, G, B, granularity
    let rows: [(CellClass, [f64; 8]); NUM_CLASSES] = [
        (Ciliated, [350.0, 90.0, 0.45, 0.35, 170.0, 150.0, 200.0, 0.20]),
        (Muciparous, [420.0, 85.0, 0.70, 0.20, 200.0, 170.0, 215.0, 0.35]),
        (Basal, [120.0, 42.0, 0.85, 0.75, 120.0, 90.0, 160.0, 0.15]),
        (Striated, [260.0, 70.0, 0.55, 0.50, 150.0, 120.0, 190.0, 0.25]),
        (Neutrophil, [150.0, 46.0, 0.88, 0.45, 180.0, 140.0, 190.0, 0.55]),
        (Eosinophil, [180.0, 50.0, 0.87, 0.40, 230.0, 120.0, 140.0, 0.75]),
        (Mast, [200.0, 55.0, 0.83, 0.35, 140.0, 60.0, 160.0, 0.85]),
        (Lymphocyte, [80.0, 33.0, 0.92, 0.85, 100.0, 80.0, 170.0, 0.10]),
        (Metaplastic, [500.0, 110.0, 0.50, 0.30, 190.0, 160.0, 180.0, 0.30]),
    ];
    let sd = [35.0, 7.0, 0.045, 0.045, 14.0, 14.0, 14.0, 0.045];
    rows.into_iter()
        .map(|(class, mean)| ClassProfile {
            class,
            mean: mean.to_vec(),
            sd: sd.to_vec(),
        })
        .collect()
}

impl GeneratorSpec {
    pub fn validate(&self, schema: &FeatureSchema) -> Result<()> {
        ensure!(
            (0.0..0.5).contains(&self.label_noise_rate),
            "label_noise_rate must be in [0, 0.5), got {}",
            self.label_noise_rate
        );
        ensure!(!self.profiles.is_empty(), "at least one class profile is required");
        for p in &self.profiles {
            ensure!(
                p.mean.len() == schema.len() && p.sd.len() == schema.len(),
                "profile for {} must have {} means and sds",
                p.class,
                schema.len()
            );
            ensure!(p.sd.iter().all(|s| s.is_finite() && *s > 0.0), "sds of {} must be positive", p.class);
        }
        for (i, a) in self.profiles.iter().enumerate() {
            for b in &self.profiles[i + 1..] {
                ensure!(a.class != b.class, "duplicate profile for {}", a.class);
                ensure!(a.mean != b.mean, "{} and {} share the same means", a.class, b.class);
            }
        }
        Ok(())
    }
}

/// Generated splits. `oracle` holds the noise-free label of every training
/// and review sample, keyed by id in generation order.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedData {
    pub train: Vec<CellSample>,
    pub holdout: Vec<CellSample>,
    pub review: Vec<CellSample>,
    pub oracle: Vec<(String, CellClass)>,
    pub flipped: usize,
}

impl GeneratedData {
    pub fn oracle_label(&self, id: &str) -> Option<CellClass> {
        self.oracle.iter().find(|(i, _)| i == id).map(|(_, c)| *c)
    }
}

fn draw<R: Rng>(rng: &mut R, mean: f64, sd: f64, lo: f64, hi: f64) -> f64 {
    let normal = Normal::new(mean, sd).expect("validated sd");
    for _ in 0..1000 {
        let x = normal.sample(rng);
        if (lo..=hi).contains(&x) {
            return x;
        }
    }
    mean.clamp(lo, hi)
}

fn cell<R: Rng>(rng: &mut R, schema: &FeatureSchema, profile: &ClassProfile, id: String) -> CellSample {
    let features = schema
        .features()
        .iter()
        .zip(profile.mean.iter().zip(&profile.sd))
        .map(|(f, (&m, &s))| draw(rng, m, s, f.min, f.max))
        .collect();
    CellSample::labeled(id, features, profile.class)
}

pub fn gen_dataset(spec: &GeneratorSpec, schema: &FeatureSchema) -> Result<GeneratedData> {
    spec.validate(schema)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let k = spec.profiles.len();
    let split = |prefix: &str, n: usize, rng: &mut ChaCha8Rng| -> Vec<CellSample> {
        (0..n)
            .map(|i| {
                let p = &spec.profiles[rng.random_range(0..k)];
                cell(rng, schema, p, format!("{prefix}{i:05}"))
            })
            .collect()
    };
    let mut train = split("c", spec.n_train, &mut rng);
    let holdout = split("h", spec.n_holdout, &mut rng);
    let review = split("v", spec.n_review, &mut rng);
    let oracle: Vec<(String, CellClass)> = train
        .iter()
        .chain(&review)
        .map(|s| (s.id.clone(), s.true_label.expect("generated samples are labeled")))
        .collect();
    let mut flipped = 0;
    for s in &mut train {
        if rng.random::<f64>() < spec.label_noise_rate {
            let truth = s.true_label.unwrap();
            let shift = rng.random_range(1..NUM_CLASSES);
            s.true_label = CellClass::from_index((truth.index() + shift) % NUM_CLASSES);
            flipped += 1;
        }
    }
    // review samples are offered without labels
    let review = review
        .into_iter()
        .map(|mut s| {
            s.true_label = None;
            s
        })
        .collect();
    Ok(GeneratedData {
        train,
        holdout,
        review,
        oracle,
        flipped,
    })
}

pub const TRAIN_FILE: &str = "train.csv";
pub const HOLDOUT_FILE: &str = "holdout.csv";
pub const REVIEW_FILE: &str = "review.csv";
pub const ORACLE_FILE: &str = "oracle.csv";

/// Writes the splits and `oracle.csv` (`id,true_label`) into `dir`.
pub fn write_dataset(dir: &Path, schema: &FeatureSchema, data: &GeneratedData) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    save_samples(dir.join(TRAIN_FILE), schema, &data.train, true)?;
    save_samples(dir.join(HOLDOUT_FILE), schema, &data.holdout, true)?;
    if !data.review.is_empty() {
        save_samples(dir.join(REVIEW_FILE), schema, &data.review, false)?;
    }
    let mut w = csv::Writer::from_path(dir.join(ORACLE_FILE))?;
    w.write_record(["id", "true_label"])?;
    for (id, c) in &data.oracle {
        w.write_record([id.as_str(), c.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_oracle(path: &Path) -> Result<Vec<(String, CellClass)>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let label: CellClass = rec[1].parse()?;
        out.push((rec[0].to_string(), label));
    }
    Ok(out)
}
