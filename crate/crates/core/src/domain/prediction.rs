use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{CellClass, NUM_CLASSES};

/// Class decision for one sample, pinned to the model version that made it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub predicted: CellClass,
    pub confidence: BTreeMap<CellClass, f64>,
    pub model_version: u64,
}

impl Prediction {
    /// Builds a prediction from a normalized per-class distribution in class order.
    pub fn from_distribution(
        sample_id: impl Into<String>,
        distribution: [f64; NUM_CLASSES],
        model_version: u64,
    ) -> Self {
        Self {
            sample_id: sample_id.into(),
            predicted: CellClass::argmax(&distribution),
            confidence: CellClass::ALL.iter().copied().zip(distribution).collect(),
            model_version,
        }
    }

    pub fn distribution(&self) -> [f64; NUM_CLASSES] {
        let mut out = [0.0; NUM_CLASSES];
        for (c, p) in &self.confidence {
            out[c.index()] = *p;
        }
        out
    }

    pub fn confidence_of(&self, class: CellClass) -> f64 {
        self.confidence.get(&class).copied().unwrap_or(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn predicted_is_argmax_with_fixed_tie_rule() {
        let mut d = [0.0; NUM_CLASSES];
        d[8] = 0.4;
        d[5] = 0.4;
        d[0] = 0.2;
        let a = Prediction::from_distribution("s", d, 3);
        let b = Prediction::from_distribution("s", d, 3);
        assert_eq!(a.predicted, CellClass::Eosinophil);
        assert_eq!(a, b);
        assert_eq!(a.distribution(), d);
        assert!((a.confidence.values().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn confidence_serializes_as_class_keyed_object() {
        let mut d = [0.0; NUM_CLASSES];
        d[1] = 1.0;
        let p = Prediction::from_distribution("s1", d, 0);
        let v = serde_json::to_value(&p).unwrap();
        assert_eq!(v["confidence"]["muciparous"], 1.0);
        assert_eq!(v["predicted"], "muciparous");
        let back: Prediction = serde_json::from_value(v).unwrap();
        assert_eq!(back, p);
    }
}
