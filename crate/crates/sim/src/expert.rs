//! Scripted experts.

use std::str::FromStr;

use cytotune_core::{Assessment, CellClass, Comparator, ExplanationStep, InterventionAction, StepEdit, Verdict, NUM_CLASSES};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpertKind {
    AlwaysOverrideWhenWrong,
    EditExplanationWhenWrong,
    AcceptAll,
    /// Picks one of the other three at random for each sample.
    Mixed,
}

impl FromStr for ExpertKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "always_override_when_wrong" | "always_override" | "override" => Ok(Self::AlwaysOverrideWhenWrong),
            "edit_explanation_when_wrong" | "edit_explanation" | "edit" => Ok(Self::EditExplanationWhenWrong),
            "accept_all" | "accept" => Ok(Self::AcceptAll),
            "mixed" => Ok(Self::Mixed),
            other => Err(format!("unknown expert policy `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertPolicy {
    pub kind: ExpertKind,
    /// Probability that the expert believes a wrong label for a sample.
    pub error_rate: f64,
}

impl Default for ExpertPolicy {
    fn default() -> Self {
        Self {
            kind: ExpertKind::AlwaysOverrideWhenWrong,
            error_rate: 0.0,
        }
    }
}

impl ExpertPolicy {
    /// Label the expert believes, drawn once per reviewed sample.
    pub fn belief<R: Rng>(&self, truth: CellClass, rng: &mut R) -> CellClass {
        if self.error_rate > 0.0 && rng.random::<f64>() < self.error_rate {
            let shift = rng.random_range(1..NUM_CLASSES);
            CellClass::from_index((truth.index() + shift) % NUM_CLASSES).expect("index in range")
        } else {
            truth
        }
    }

    /// Concrete behavior for one sample; `Mixed` draws it here.
    pub fn pick<R: Rng>(&self, rng: &mut R) -> ExpertKind {
        match self.kind {
            ExpertKind::Mixed => [
                ExpertKind::AlwaysOverrideWhenWrong,
                ExpertKind::EditExplanationWhenWrong,
                ExpertKind::AcceptAll,
            ][rng.random_range(0..3)],
            k => k,
        }
    }
}

/// Threshold that sends the sample down the other branch of `step`, if the
/// feature range leaves room for one.
pub fn flip_threshold(step: &ExplanationStep, min: f64) -> Option<f64> {
    match step.comparator {
        Comparator::Greater => Some(step.sample_value),
        Comparator::LessOrEqual => {
            let below = step.sample_value.next_down();
            (below >= min).then_some(below)
        }
    }
}

/// Edits that flip one step each, deepest step first.
pub fn flip_candidates(assessment: &Assessment, feature_min: impl Fn(&str) -> f64) -> Vec<StepEdit> {
    assessment
        .explanation
        .steps
        .iter()
        .rev()
        .filter_map(|s| {
            flip_threshold(s, feature_min(&s.feature)).map(|t| StepEdit {
                node_id: s.node_id,
                verdict: Verdict::Incorrect,
                adjusted_threshold: Some(t),
                adjusted_sample_value: None,
            })
        })
        .collect()
}

/// Action of an expert who only overrides or accepts.
pub fn override_or_accept(predicted: CellClass, belief: CellClass) -> InterventionAction {
    if predicted == belief {
        InterventionAction::Accept
    } else {
        InterventionAction::LabelOverride { new_label: belief }
    }
}
