//! Domain vocabulary shared by every other module.

mod class;
mod explanation;
mod intervention;
mod prediction;
mod sample;
mod schema;
mod version;

pub use class::{CellClass, UnknownClass, NUM_CLASSES};
pub use explanation::{Comparator, Explanation, ExplanationStep};
pub use intervention::{Intervention, InterventionAction, StepEdit, Verdict};
pub use prediction::Prediction;
pub use sample::{validate_sample, CellSample, SampleViolation};
pub use schema::{FeatureSchema, FeatureSpec, SchemaError};
pub use version::{Lineage, ModelVersion, VersionOrigin};
