use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Number of cytotypes the classifier distinguishes.
pub const NUM_CLASSES: usize = 9;

/// One of the nine nasal-mucosa cytotypes.
///
/// The declaration order is the fixed class order used everywhere a
/// per-class vector appears, and it is the tie-break order for argmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    Ciliated,
    Muciparous,
    Basal,
    Striated,
    Neutrophil,
    Eosinophil,
    Mast,
    Lymphocyte,
    Metaplastic,
}

impl CellClass {
    pub const ALL: [CellClass; NUM_CLASSES] = [
        CellClass::Ciliated,
        CellClass::Muciparous,
        CellClass::Basal,
        CellClass::Striated,
        CellClass::Neutrophil,
        CellClass::Eosinophil,
        CellClass::Mast,
        CellClass::Lymphocyte,
        CellClass::Metaplastic,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<CellClass> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CellClass::Ciliated => "ciliated",
            CellClass::Muciparous => "muciparous",
            CellClass::Basal => "basal",
            CellClass::Striated => "striated",
            CellClass::Neutrophil => "neutrophil",
            CellClass::Eosinophil => "eosinophil",
            CellClass::Mast => "mast",
            CellClass::Lymphocyte => "lymphocyte",
            CellClass::Metaplastic => "metaplastic",
        }
    }

    /// Index of the largest entry; ties go to the lowest index.
    pub fn argmax(values: &[f64; NUM_CLASSES]) -> CellClass {
        let mut best = 0;
        for (i, &v) in values.iter().enumerate().skip(1) {
            if v > values[best] {
                best = i;
            }
        }
        Self::ALL[best]
    }
}

impl fmt::Display for CellClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown cell class `{0}`")]
pub struct UnknownClass(pub String);

impl FromStr for CellClass {
    type Err = UnknownClass;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        Self::ALL
            .iter()
            .copied()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownClass(s.to_string()))
    }
}
