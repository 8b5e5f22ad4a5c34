use serde::{Deserialize, Serialize};

use super::{CellSample, Prediction};
use crate::tree::{SchemaMismatch, TreeModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VersionOrigin {
    Bootstrap,
    Direct,
    Retrain,
}

/// Where a version came from: its parent and the interventions folded into it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub origin: VersionOrigin,
    pub base_version: Option<u64>,
    pub interventions: Vec<String>,
}

impl Lineage {
    pub fn bootstrap() -> Self {
        Self {
            origin: VersionOrigin::Bootstrap,
            base_version: None,
            interventions: Vec::new(),
        }
    }
}

/// Immutable classifier snapshot. `content_hash` covers the tree only, so
/// two versions with identical trees share a hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub version: u64,
    pub model: TreeModel,
    pub lineage: Lineage,
    pub content_hash: String,
}

impl ModelVersion {
    pub fn new(version: u64, model: TreeModel, lineage: Lineage) -> Self {
        let content_hash = model.content_hash();
        Self {
            version,
            model,
            lineage,
            content_hash,
        }
    }

    pub fn bootstrap(model: TreeModel) -> Self {
        Self::new(0, model, Lineage::bootstrap())
    }

    pub fn predict(&self, sample: &CellSample) -> Result<Prediction, SchemaMismatch> {
        self.model.predict(sample, self.version)
    }

    /// True when the stored hash still matches the tree.
    pub fn verify_hash(&self) -> bool {
        self.model.content_hash() == self.content_hash
    }
}
