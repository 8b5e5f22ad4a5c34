use std::collections::HashSet;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
}

impl FeatureSpec {
    pub fn new(name: impl Into<String>, unit: impl Into<String>, min: f64, max: f64) -> Self {
        Self {
            name: name.into(),
            unit: unit.into(),
            min,
            max,
        }
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    pub fn clamp(&self, value: f64) -> f64 {
        value.clamp(self.min, self.max)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemaError {
    #[error("schema has no features")]
    Empty,
    #[error("duplicate feature name `{0}`")]
    DuplicateName(String),
    #[error("feature `{name}` has min {min} not below max {max}")]
    EmptyRange { name: String, min: f64, max: f64 },
}

/// Ordered list of named features with closed value ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct FeatureSchema {
    features: Vec<FeatureSpec>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    features: Vec<FeatureSpec>,
}

impl TryFrom<RawSchema> for FeatureSchema {
    type Error = SchemaError;

    fn try_from(raw: RawSchema) -> Result<Self, Self::Error> {
        FeatureSchema::new(raw.features)
    }
}

impl From<FeatureSchema> for RawSchema {
    fn from(schema: FeatureSchema) -> Self {
        RawSchema {
            features: schema.features,
        }
    }
}

impl FeatureSchema {
    pub fn new(features: Vec<FeatureSpec>) -> Result<Self, SchemaError> {
        if features.is_empty() {
            return Err(SchemaError::Empty);
        }
        let mut seen = HashSet::new();
        for f in &features {
            if !seen.insert(f.name.as_str()) {
                return Err(SchemaError::DuplicateName(f.name.clone()));
            }
            // `!(min < max)` also rejects NaN bounds
            if !(f.min < f.max) || !f.min.is_finite() || !f.max.is_finite() {
                return Err(SchemaError::EmptyRange {
                    name: f.name.clone(),
                    min: f.min,
                    max: f.max,
                });
            }
        }
        Ok(Self { features })
    }

    /// The default eight-feature morphological schema.
    pub fn morphological() -> Self {
        Self::new(vec![
            FeatureSpec::new("area", "µm²", 0.0, 1000.0),
            FeatureSpec::new("perimeter", "µm", 0.0, 200.0),
            FeatureSpec::new("circularity", "unitless", 0.0, 1.0),
            FeatureSpec::new("nucleus_to_cytoplasm_ratio", "ratio", 0.0, 1.0),
            FeatureSpec::new("mean_intensity_r", "intensity", 0.0, 255.0),
            FeatureSpec::new("mean_intensity_g", "intensity", 0.0, 255.0),
            FeatureSpec::new("mean_intensity_b", "intensity", 0.0, 255.0),
            FeatureSpec::new("granularity", "unitless", 0.0, 1.0),
        ])
        .expect("built-in schema is valid")
    }

    pub fn features(&self) -> &[FeatureSpec] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&FeatureSpec> {
        self.features.get(index)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::morphological()
    }
}
