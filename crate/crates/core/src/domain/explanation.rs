use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Direction taken at an internal node: `<=` goes left, `>` goes right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Comparator {
    #[serde(rename = "<=")]
    LessOrEqual,
    #[serde(rename = ">")]
    Greater,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::LessOrEqual => value <= threshold,
            Comparator::Greater => value > threshold,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::LessOrEqual => "≤",
            Comparator::Greater => ">",
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// One internal node on the root-to-leaf path of a sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationStep {
    pub node_id: usize,
    pub feature: String,
    pub comparator: Comparator,
    pub threshold: f64,
    pub sample_value: f64,
    pub satisfied: bool,
}

impl ExplanationStep {
    /// Re-evaluates the comparator; `satisfied` must equal this.
    pub fn evaluate(&self) -> bool {
        self.comparator.holds(self.sample_value, self.threshold)
    }
}

/// The editable justification shown next to a prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub steps: Vec<ExplanationStep>,
    pub attributions: BTreeMap<String, f64>,
    pub rendered_text: String,
}

impl Explanation {
    pub fn step(&self, node_id: usize) -> Option<&ExplanationStep> {
        self.steps.iter().find(|s| s.node_id == node_id)
    }
}
