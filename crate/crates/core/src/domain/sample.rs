use serde::{Deserialize, Serialize};

use super::{CellClass, FeatureSchema};

/// Morphological feature vector for a single cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSample {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<CellClass>,
}

impl CellSample {
    pub fn new(id: impl Into<String>, features: Vec<f64>) -> Self {
        Self {
            id: id.into(),
            features,
            true_label: None,
        }
    }

    pub fn labeled(id: impl Into<String>, features: Vec<f64>, label: CellClass) -> Self {
        Self {
            id: id.into(),
            features,
            true_label: Some(label),
        }
    }
}

/// A single reason a sample does not conform to a schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SampleViolation {
    #[error("feature `{feature}` is missing")]
    Missing { feature: String },
    #[error("sample has {extra} value(s) beyond the schema")]
    Extra { extra: usize },
    #[error("feature `{feature}` = {value} outside [{min}, {max}]")]
    OutOfRange {
        feature: String,
        value: f64,
        min: f64,
        max: f64,
    },
}

/// Every violation of `schema` by `sample`; an empty list means the sample is valid.
pub fn validate_sample(sample: &CellSample, schema: &FeatureSchema) -> Vec<SampleViolation> {
    let mut out = Vec::new();
    for (i, spec) in schema.features().iter().enumerate() {
        match sample.features.get(i) {
            None => out.push(SampleViolation::Missing {
                feature: spec.name.clone(),
            }),
            // NaN fails `contains`
            Some(&v) if !spec.contains(v) => out.push(SampleViolation::OutOfRange {
                feature: spec.name.clone(),
                value: v,
                min: spec.min,
                max: spec.max,
            }),
            Some(_) => {}
        }
    }
    if sample.features.len() > schema.len() {
        out.push(SampleViolation::Extra {
            extra: sample.features.len() - schema.len(),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mid(schema: &FeatureSchema) -> Vec<f64> {
        schema
            .features()
            .iter()
            .map(|f| (f.min + f.max) / 2.0)
            .collect()
    }

    #[test]
    fn interior_point_is_valid() {
        let schema = FeatureSchema::morphological();
        let s = CellSample::new("a", mid(&schema));
        assert!(validate_sample(&s, &schema).is_empty());
    }

    #[test]
    fn closed_interval_accepts_max() {
        let schema = FeatureSchema::morphological();
        let mut v = mid(&schema);
        v[2] = schema.get(2).unwrap().max;
        v[0] = schema.get(0).unwrap().min;
        assert!(validate_sample(&CellSample::new("a", v), &schema).is_empty());
    }

    #[test]
    fn below_min_names_feature() {
        let schema = FeatureSchema::morphological();
        let mut v = mid(&schema);
        v[4] = -1.0;
        let got = validate_sample(&CellSample::new("a", v), &schema);
        assert_eq!(got.len(), 1);
        match &got[0] {
            SampleViolation::OutOfRange { feature, .. } => assert_eq!(feature, "mean_intensity_r"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_every_problem() {
        let schema = FeatureSchema::morphological();
        let s = CellSample::new("a", vec![f64::NAN, 5.0, 2.0]);
        let got = validate_sample(&s, &schema);
        // NaN area, circularity 2.0 out of range, 5 missing features
        assert_eq!(got.len(), 7);
        let long = CellSample::new("b", vec![0.5; 10]);
        let got = validate_sample(&long, &schema);
        assert_eq!(got, vec![SampleViolation::Extra { extra: 2 }]);
    }
}
