//! CSV datasets: an optional `id` column, one column per schema feature, and
//! an optional `true_label` column. Rows without an id get `s00000`-style ids
//! from their row number.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::domain::{validate_sample, CellClass, CellSample, FeatureSchema, SampleViolation};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("header is missing feature column `{0}`")]
    MissingColumn(String),
    #[error("row {row}: {message}")]
    BadValue { row: usize, message: String },
    #[error("row {row} (`{id}`) violates the schema: {violations:?}")]
    Schema {
        row: usize,
        id: String,
        violations: Vec<SampleViolation>,
    },
    #[error("duplicate sample id `{0}`")]
    DuplicateId(String),
}

pub fn read_samples<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Vec<CellSample>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let feature_cols = schema
        .names()
        .map(|n| col(n).ok_or_else(|| DatasetError::MissingColumn(n.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    let id_col = col("id");
    let label_col = col("true_label");
    let mut out = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let id = match id_col.map(|c| &record[c]) {
            Some(id) if !id.is_empty() => id.to_string(),
            _ => format!("s{row:05}"),
        };
        let mut features = Vec::with_capacity(feature_cols.len());
        for (&c, name) in feature_cols.iter().zip(schema.names()) {
            let v: f64 = record[c].parse().map_err(|_| DatasetError::BadValue {
                row,
                message: format!("`{}` is not a number for `{name}`", &record[c]),
            })?;
            features.push(v);
        }
        let true_label = match label_col.map(|c| &record[c]) {
            Some(l) if !l.is_empty() => Some(l.parse::<CellClass>().map_err(|e| {
                DatasetError::BadValue {
                    row,
                    message: e.to_string(),
                }
            })?),
            _ => None,
        };
        let sample = CellSample {
            id,
            features,
            true_label,
        };
        let violations = validate_sample(&sample, schema);
        if !violations.is_empty() {
            return Err(DatasetError::Schema {
                row,
                id: sample.id,
                violations,
            });
        }
        if !seen.insert(sample.id.clone()) {
            return Err(DatasetError::DuplicateId(sample.id));
        }
        out.push(sample);
    }
    Ok(out)
}

pub fn load_samples(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Vec<CellSample>, DatasetError> {
    read_samples(std::fs::File::open(path)?, schema)
}

/// Writes `id`, the schema columns, and `true_label` when `with_labels` is set.
pub fn write_samples<W: Write>(
    writer: W,
    schema: &FeatureSchema,
    samples: &[CellSample],
    with_labels: bool,
) -> Result<(), DatasetError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id"];
    header.extend(schema.names());
    if with_labels {
        header.push("true_label");
    }
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![s.id.clone()];
        row.extend(s.features.iter().map(|v| v.to_string()));
        if with_labels {
            row.push(s.true_label.map(|c| c.to_string()).unwrap_or_default());
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_samples(
    path: impl AsRef<Path>,
    schema: &FeatureSchema,
    samples: &[CellSample],
    with_labels: bool,
) -> Result<(), DatasetError> {
    write_samples(std::fs::File::create(path)?, schema, samples, with_labels)
}

/// SHA-256 over the canonical JSON of the samples, in order.
pub fn dataset_hash(samples: &[CellSample]) -> String {
    let bytes = serde_json::to_vec(samples).expect("samples serialize");
    hex::encode(Sha256::digest(bytes))
}
