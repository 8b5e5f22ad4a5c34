//! Editable explanations: build them from a prediction, check expert edits
//! against them, and preview what the edits would do.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::domain::{
    CellSample, Explanation, ExplanationStep, FeatureSchema, ModelVersion, Prediction, StepEdit,
    Verdict,
};
use crate::tree::{gini, SchemaMismatch, TreeModel, TreeNode};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExplainError {
    #[error("prediction is from version {prediction}, model is version {model}")]
    VersionMismatch { prediction: u64, model: u64 },
    #[error("prediction is for sample `{prediction}`, not `{sample}`")]
    SampleMismatch { prediction: String, sample: String },
    #[error(transparent)]
    Schema(#[from] SchemaMismatch),
}

/// Explains `prediction`, which must come from `version` for `sample`.
pub fn explain(
    version: &ModelVersion,
    sample: &CellSample,
    prediction: &Prediction,
) -> Result<Explanation, ExplainError> {
    if prediction.model_version != version.version {
        return Err(ExplainError::VersionMismatch {
            prediction: prediction.model_version,
            model: version.version,
        });
    }
    if prediction.sample_id != sample.id {
        return Err(ExplainError::SampleMismatch {
            prediction: prediction.sample_id.clone(),
            sample: sample.id.clone(),
        });
    }
    let steps = version.model.decision_path(sample)?;
    let attributions = path_attributions(&version.model, &steps);
    let rendered_text = render(&steps, prediction);
    Ok(Explanation {
        steps,
        attributions,
        rendered_text,
    })
}

/// Share of the path's total weighted impurity decrease owed to each feature.
///
/// A node's decrease is `W_t·G_t − W_l·G_l − W_r·G_r`, from training mass
/// only. The common `1/W_root` factor cancels in the normalization.
pub fn path_attributions(model: &TreeModel, steps: &[ExplanationStep]) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if steps.is_empty() {
        return out;
    }
    let mass = model.subtree_counts();
    let weighted = |id: usize| {
        let c = &mass[id];
        c.iter().sum::<f64>() * gini(c)
    };
    let mut decreases = Vec::with_capacity(steps.len());
    for step in steps {
        let d = match model.node(step.node_id) {
            Some(TreeNode::Internal { left, right, .. }) => {
                (weighted(step.node_id) - weighted(*left) - weighted(*right)).max(0.0)
            }
            _ => 0.0,
        };
        decreases.push(d);
    }
    let total: f64 = decreases.iter().sum();
    for (step, d) in steps.iter().zip(&decreases) {
        // no measurable decrease anywhere on the path: share equally per step
        let share = if total > 0.0 {
            d / total
        } else {
            1.0 / steps.len() as f64
        };
        *out.entry(step.feature.clone()).or_insert(0.0) += share;
    }
    out
}

pub(crate) fn format_value(x: f64) -> String {
    let s = format!("{x:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn render(steps: &[ExplanationStep], prediction: &Prediction) -> String {
    let mut text = String::new();
    for s in steps {
        let _ = write!(
            text,
            "{} = {} is {} {}. ",
            s.feature,
            format_value(s.sample_value),
            s.comparator,
            format_value(s.threshold)
        );
    }
    let _ = write!(text, "The cell is classified as {}.", prediction.predicted);
    text
}

/// A single problem with a proposed list of step edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum EditViolation {
    #[error("node {node_id} is not on the explained path")]
    UnknownNode { node_id: usize },
    #[error("node {node_id} tests unknown feature `{feature}`")]
    UnknownFeature { node_id: usize, feature: String },
    #[error("node {node_id}: threshold {value} for `{feature}` outside [{min}, {max}]")]
    ThresholdOutOfRange {
        node_id: usize,
        feature: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("node {node_id}: sample value {value} for `{feature}` outside [{min}, {max}]")]
    SampleValueOutOfRange {
        node_id: usize,
        feature: String,
        value: f64,
        min: f64,
        max: f64,
    },
    #[error("node {node_id} is marked incorrect without any adjustment")]
    MissingAdjustment { node_id: usize },
    #[error("node {node_id} is marked accurate but carries an adjustment")]
    UnexpectedAdjustment { node_id: usize },
}

impl EditViolation {
    pub fn node_id(&self) -> usize {
        match self {
            EditViolation::UnknownNode { node_id }
            | EditViolation::UnknownFeature { node_id, .. }
            | EditViolation::ThresholdOutOfRange { node_id, .. }
            | EditViolation::SampleValueOutOfRange { node_id, .. }
            | EditViolation::MissingAdjustment { node_id }
            | EditViolation::UnexpectedAdjustment { node_id } => *node_id,
        }
    }
}

/// Step edits that passed [`validate_edit`] against one explanation.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
#[serde(transparent)]
pub struct ValidatedEdit {
    edits: Vec<StepEdit>,
}

impl ValidatedEdit {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn edits(&self) -> &[StepEdit] {
        &self.edits
    }

    pub fn is_empty(&self) -> bool {
        self.edits.is_empty()
    }
}

pub fn validate_edit(
    explanation: &Explanation,
    edits: &[StepEdit],
    schema: &FeatureSchema,
) -> Result<ValidatedEdit, Vec<EditViolation>> {
    let mut violations = Vec::new();
    for edit in edits {
        let node_id = edit.node_id;
        match edit.verdict {
            Verdict::Incorrect if !edit.has_adjustment() => {
                violations.push(EditViolation::MissingAdjustment { node_id })
            }
            Verdict::Accurate if edit.has_adjustment() => {
                violations.push(EditViolation::UnexpectedAdjustment { node_id })
            }
            _ => {}
        }
        let Some(step) = explanation.step(node_id) else {
            violations.push(EditViolation::UnknownNode { node_id });
            continue;
        };
        let Some(spec) = schema.index_of(&step.feature).and_then(|i| schema.get(i)) else {
            violations.push(EditViolation::UnknownFeature {
                node_id,
                feature: step.feature.clone(),
            });
            continue;
        };
        if let Some(value) = edit.adjusted_threshold.filter(|v| !spec.contains(*v)) {
            violations.push(EditViolation::ThresholdOutOfRange {
                node_id,
                feature: spec.name.clone(),
                value,
                min: spec.min,
                max: spec.max,
            });
        }
        if let Some(value) = edit.adjusted_sample_value.filter(|v| !spec.contains(*v)) {
            violations.push(EditViolation::SampleValueOutOfRange {
                node_id,
                feature: spec.name.clone(),
                value,
                min: spec.min,
                max: spec.max,
            });
        }
    }
    if violations.is_empty() {
        Ok(ValidatedEdit {
            edits: edits.to_vec(),
        })
    } else {
        Err(violations)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WhatIfError {
    #[error("edit targets node {0}, which is not an internal node of this model")]
    InvalidEdit(usize),
    #[error(transparent)]
    Schema(#[from] SchemaMismatch),
}

/// Preview of a prediction under hypothetical edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhatIf {
    pub new_path: Vec<ExplanationStep>,
    pub new_prediction: Prediction,
}

/// Threshold overrides and substituted feature values implied by `edits`,
/// applied in listed order so later edits win.
pub(crate) struct EditOverlay {
    pub thresholds: BTreeMap<usize, f64>,
    pub values: Vec<f64>,
}

pub(crate) fn overlay(
    model: &TreeModel,
    sample: &CellSample,
    edits: &[StepEdit],
) -> Result<EditOverlay, WhatIfError> {
    let mut thresholds = BTreeMap::new();
    let mut values = sample.features.clone();
    for e in edits {
        let Some(TreeNode::Internal { feature, .. }) = model.node(e.node_id) else {
            return Err(WhatIfError::InvalidEdit(e.node_id));
        };
        if let Some(t) = e.adjusted_threshold {
            thresholds.insert(e.node_id, t);
        }
        if let Some(v) = e.adjusted_sample_value {
            values[*feature] = v;
        }
    }
    Ok(EditOverlay { thresholds, values })
}

/// Re-traverses the tree with the edited thresholds and sample values. The
/// model itself is never modified.
pub fn whatif(
    version: &ModelVersion,
    sample: &CellSample,
    edits: &ValidatedEdit,
) -> Result<WhatIf, WhatIfError> {
    let model = &version.model;
    model.check_sample(sample)?;
    let EditOverlay { thresholds, values } = overlay(model, sample, edits.edits())?;
    let threshold_of = |id: usize, t: f64| thresholds.get(&id).copied().unwrap_or(t);
    let (_, leaf) = model.traverse_with(&values, threshold_of);
    Ok(WhatIf {
        new_path: model.steps_for(&values, threshold_of),
        new_prediction: Prediction::from_distribution(
            sample.id.clone(),
            model.leaf_distribution(leaf),
            version.version,
        ),
    })
}
