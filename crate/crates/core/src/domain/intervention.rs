use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::CellClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accurate,
    Incorrect,
}

/// Expert judgement on one explanation step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepEdit {
    pub node_id: usize,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjusted_threshold: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjusted_sample_value: Option<f64>,
}

impl StepEdit {
    pub fn accurate(node_id: usize) -> Self {
        Self {
            node_id,
            verdict: Verdict::Accurate,
            adjusted_threshold: None,
            adjusted_sample_value: None,
        }
    }

    pub fn threshold(node_id: usize, threshold: f64) -> Self {
        Self {
            node_id,
            verdict: Verdict::Incorrect,
            adjusted_threshold: Some(threshold),
            adjusted_sample_value: None,
        }
    }

    pub fn sample_value(node_id: usize, value: f64) -> Self {
        Self {
            node_id,
            verdict: Verdict::Incorrect,
            adjusted_threshold: None,
            adjusted_sample_value: Some(value),
        }
    }

    pub fn has_adjustment(&self) -> bool {
        self.adjusted_threshold.is_some() || self.adjusted_sample_value.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum InterventionAction {
    Accept,
    LabelOverride {
        new_label: CellClass,
    },
    ExplanationEdit {
        edits: Vec<StepEdit>,
    },
    Combined {
        new_label: CellClass,
        edits: Vec<StepEdit>,
    },
}

impl InterventionAction {
    pub fn edits(&self) -> &[StepEdit] {
        match self {
            InterventionAction::ExplanationEdit { edits }
            | InterventionAction::Combined { edits, .. } => edits,
            _ => &[],
        }
    }

    pub fn new_label(&self) -> Option<CellClass> {
        match self {
            InterventionAction::LabelOverride { new_label }
            | InterventionAction::Combined { new_label, .. } => Some(*new_label),
            _ => None,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            InterventionAction::Accept => "accept",
            InterventionAction::LabelOverride { .. } => "label_override",
            InterventionAction::ExplanationEdit { .. } => "explanation_edit",
            InterventionAction::Combined { .. } => "combined",
        }
    }
}

/// A logged expert action on one assessment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Intervention {
    pub id: String,
    pub sample_id: String,
    pub author: String,
    pub timestamp: DateTime<Utc>,
    pub base_model_version: u64,
    pub action: InterventionAction,
}
