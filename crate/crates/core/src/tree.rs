//! CART decision tree over a [`FeatureSchema`].
//!
//! Nodes live in an arena indexed by node id. Training grows the tree in
//! preorder, so the root is node 0 and every child id is larger than its
//! parent's. Leaves keep training mass (`class_counts`) apart from mass added
//! by expert overrides (`pseudo_counts`); a retrain starts with no pseudo mass.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::domain::{
    validate_sample, CellClass, CellSample, Comparator, ExplanationStep, FeatureSchema,
    Prediction, SampleViolation, NUM_CLASSES,
};

pub type ClassVector = [f64; NUM_CLASSES];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Internal {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        class_counts: ClassVector,
        pseudo_counts: ClassVector,
    },
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        matches!(self, TreeNode::Leaf { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCriterion {
    #[default]
    Gini,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_depth: usize,
    pub min_leaf_samples: usize,
    pub split_criterion: SplitCriterion,
    /// Recorded with every model for reproducibility. The split search is
    /// exhaustive, so no draw is ever taken from it.
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_leaf_samples: 5,
            split_criterion: SplitCriterion::Gini,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample `{sample_id}` does not match the schema: {violations:?}")]
    SchemaMismatch {
        sample_id: String,
        violations: Vec<SampleViolation>,
    },
    #[error("sample `{0}` has no label")]
    Unlabeled(String),
    #[error("weights must be positive, finite, and one per sample")]
    InvalidWeights,
    #[error("max_depth and min_leaf_samples must be at least 1")]
    InvalidConfig,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("sample `{sample_id}` does not match the model schema: {violations:?}")]
pub struct SchemaMismatch {
    pub sample_id: String,
    pub violations: Vec<SampleViolation>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TreeError {
    #[error("tree has no nodes")]
    Empty,
    #[error("root {0} is out of bounds")]
    BadRoot(usize),
    #[error("node {node} references missing child {child}")]
    DanglingChild { node: usize, child: usize },
    #[error("node {0} is reachable more than once")]
    NotATree(usize),
    #[error("node {node} splits on unknown feature {feature}")]
    UnknownFeature { node: usize, feature: usize },
    #[error("node {0} has a non-finite threshold")]
    BadThreshold(usize),
    #[error("leaf {0} has negative, non-finite, or zero total mass")]
    BadLeaf(usize),
    #[error("node {0} is unreachable from the root")]
    Unreachable(usize),
    #[error("class order must be the fixed nine-class order")]
    ClassOrder,
}

/// Trained decision tree. Immutable to callers; adaptation clones and edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTree", into = "RawTree")]
pub struct TreeModel {
    nodes: Vec<TreeNode>,
    root: usize,
    schema: FeatureSchema,
    class_order: Vec<CellClass>,
}

#[derive(Serialize, Deserialize)]
struct RawTree {
    nodes: Vec<TreeNode>,
    root: usize,
    schema: FeatureSchema,
    class_order: Vec<CellClass>,
}

impl TryFrom<RawTree> for TreeModel {
    type Error = TreeError;

    fn try_from(raw: RawTree) -> Result<Self, Self::Error> {
        TreeModel::from_parts(raw.nodes, raw.root, raw.schema, raw.class_order)
    }
}

impl From<TreeModel> for RawTree {
    fn from(t: TreeModel) -> Self {
        RawTree {
            nodes: t.nodes,
            root: t.root,
            schema: t.schema,
            class_order: t.class_order,
        }
    }
}

impl TreeModel {
    /// Assembles a tree from raw parts, checking every structural invariant.
    pub fn from_parts(
        nodes: Vec<TreeNode>,
        root: usize,
        schema: FeatureSchema,
        class_order: Vec<CellClass>,
    ) -> Result<Self, TreeError> {
        if class_order != CellClass::ALL {
            return Err(TreeError::ClassOrder);
        }
        if nodes.is_empty() {
            return Err(TreeError::Empty);
        }
        if root >= nodes.len() {
            return Err(TreeError::BadRoot(root));
        }
        let mut seen = vec![false; nodes.len()];
        let mut stack = vec![root];
        while let Some(id) = stack.pop() {
            if std::mem::replace(&mut seen[id], true) {
                return Err(TreeError::NotATree(id));
            }
            match &nodes[id] {
                TreeNode::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    if *feature >= schema.len() {
                        return Err(TreeError::UnknownFeature {
                            node: id,
                            feature: *feature,
                        });
                    }
                    if !threshold.is_finite() {
                        return Err(TreeError::BadThreshold(id));
                    }
                    for &child in [left, right] {
                        if child >= nodes.len() {
                            return Err(TreeError::DanglingChild { node: id, child });
                        }
                        stack.push(child);
                    }
                }
                TreeNode::Leaf {
                    class_counts,
                    pseudo_counts,
                } => {
                    let ok = class_counts
                        .iter()
                        .chain(pseudo_counts)
                        .all(|c| c.is_finite() && *c >= 0.0);
                    let total: f64 = class_counts.iter().chain(pseudo_counts).sum();
                    if !ok || total <= 0.0 {
                        return Err(TreeError::BadLeaf(id));
                    }
                }
            }
        }
        if let Some(id) = seen.iter().position(|s| !s) {
            return Err(TreeError::Unreachable(id));
        }
        Ok(Self {
            nodes,
            root,
            schema,
            class_order,
        })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn node(&self, id: usize) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn class_order(&self) -> &[CellClass] {
        &self.class_order
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf()).count()
    }

    /// Number of internal nodes on the longest root-to-leaf path.
    pub fn depth(&self) -> usize {
        fn go(t: &TreeModel, id: usize) -> usize {
            match t.nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Internal { left, right, .. } => 1 + go(t, left).max(go(t, right)),
            }
        }
        go(self, self.root)
    }

    /// Serialized form whose SHA-256 is the content hash.
    pub fn canonical_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("tree serialization cannot fail")
    }

    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json()))
    }

    pub fn check_sample(&self, sample: &CellSample) -> Result<(), SchemaMismatch> {
        let violations = validate_sample(sample, &self.schema);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(SchemaMismatch {
                sample_id: sample.id.clone(),
                violations,
            })
        }
    }

    /// Walks from the root with `value <= threshold` going left. Thresholds
    /// are looked up through `threshold_of` so callers can preview edits
    /// without touching the tree. Returns the internal nodes visited, whether
    /// each went left, and the leaf reached.
    pub fn traverse_with<F>(&self, values: &[f64], threshold_of: F) -> (Vec<(usize, bool)>, usize)
    where
        F: Fn(usize, f64) -> f64,
    {
        let mut path = Vec::new();
        let mut id = self.root;
        while let TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } = self.nodes[id]
        {
            let went_left = values[feature] <= threshold_of(id, threshold);
            path.push((id, went_left));
            id = if went_left { left } else { right };
        }
        (path, id)
    }

    pub fn leaf_of(&self, values: &[f64]) -> usize {
        self.traverse_with(values, |_, t| t).1
    }

    /// Normalized `class_counts + pseudo_counts` of a leaf.
    pub fn leaf_distribution(&self, leaf: usize) -> ClassVector {
        match &self.nodes[leaf] {
            TreeNode::Leaf {
                class_counts,
                pseudo_counts,
            } => {
                let mut d = [0.0; NUM_CLASSES];
                for i in 0..NUM_CLASSES {
                    d[i] = class_counts[i] + pseudo_counts[i];
                }
                let total: f64 = d.iter().sum();
                d.iter_mut().for_each(|x| *x /= total);
                d
            }
            TreeNode::Internal { .. } => panic!("node {leaf} is not a leaf"),
        }
    }

    pub fn predict(&self, sample: &CellSample, model_version: u64) -> Result<Prediction, SchemaMismatch> {
        self.check_sample(sample)?;
        let leaf = self.leaf_of(&sample.features);
        Ok(Prediction::from_distribution(
            sample.id.clone(),
            self.leaf_distribution(leaf),
            model_version,
        ))
    }

    pub fn decision_path(&self, sample: &CellSample) -> Result<Vec<ExplanationStep>, SchemaMismatch> {
        self.check_sample(sample)?;
        Ok(self.steps_for(&sample.features, |_, t| t))
    }

    /// Decision path for raw values under (possibly overridden) thresholds.
    pub(crate) fn steps_for<F>(&self, values: &[f64], threshold_of: F) -> Vec<ExplanationStep>
    where
        F: Fn(usize, f64) -> f64,
    {
        let (path, _) = self.traverse_with(values, &threshold_of);
        path.into_iter()
            .map(|(id, went_left)| {
                let TreeNode::Internal {
                    feature, threshold, ..
                } = self.nodes[id]
                else {
                    unreachable!("path holds internal nodes only")
                };
                let threshold = threshold_of(id, threshold);
                let comparator = if went_left {
                    Comparator::LessOrEqual
                } else {
                    Comparator::Greater
                };
                let sample_value = values[feature];
                ExplanationStep {
                    node_id: id,
                    feature: self.schema.features()[feature].name.clone(),
                    comparator,
                    threshold,
                    sample_value,
                    satisfied: comparator.holds(sample_value, threshold),
                }
            })
            .collect()
    }

    /// Training mass (`class_counts` only) below every node.
    pub fn subtree_counts(&self) -> Vec<ClassVector> {
        let mut out = vec![[0.0; NUM_CLASSES]; self.nodes.len()];
        fn fill(t: &TreeModel, id: usize, out: &mut [ClassVector]) -> ClassVector {
            let counts = match &t.nodes[id] {
                TreeNode::Leaf { class_counts, .. } => *class_counts,
                TreeNode::Internal { left, right, .. } => {
                    let l = fill(t, *left, out);
                    let r = fill(t, *right, out);
                    let mut c = [0.0; NUM_CLASSES];
                    for i in 0..NUM_CLASSES {
                        c[i] = l[i] + r[i];
                    }
                    c
                }
            };
            out[id] = counts;
            counts
        }
        fill(self, self.root, &mut out);
        out
    }

    /// Feature index tested at an internal node.
    pub fn split_feature(&self, node: usize) -> Option<usize> {
        match self.nodes.get(node) {
            Some(TreeNode::Internal { feature, .. }) => Some(*feature),
            _ => None,
        }
    }

    pub(crate) fn set_threshold(&mut self, node: usize, value: f64) -> bool {
        match self.nodes.get_mut(node) {
            Some(TreeNode::Internal { threshold, .. }) => {
                *threshold = value;
                true
            }
            _ => false,
        }
    }

    pub(crate) fn add_pseudo_count(&mut self, leaf: usize, class: CellClass, weight: f64) {
        if let Some(TreeNode::Leaf { pseudo_counts, .. }) = self.nodes.get_mut(leaf) {
            pseudo_counts[class.index()] += weight;
        }
    }

    pub fn total_pseudo_mass(&self) -> f64 {
        self.nodes
            .iter()
            .map(|n| match n {
                TreeNode::Leaf { pseudo_counts, .. } => pseudo_counts.iter().sum(),
                TreeNode::Internal { .. } => 0.0,
            })
            .sum()
    }
}

/// Weighted Gini impurity `1 - Σ p²` of a class-mass vector.
pub fn gini(counts: &ClassVector) -> f64 {
    let total: f64 = counts.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total) * (c / total)).sum::<f64>()
}

/// Impurity decreases below this are treated as no improvement.
const MIN_GAIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    /// Mass-weighted mean impurity of the two children.
    pub impurity: f64,
}

struct Trainer<'a> {
    values: Vec<&'a [f64]>,
    labels: Vec<CellClass>,
    weights: Vec<f64>,
    n_features: usize,
    config: &'a TrainConfig,
    nodes: Vec<TreeNode>,
}

impl Trainer<'_> {
    fn counts(&self, idx: &[usize]) -> ClassVector {
        let mut c = [0.0; NUM_CLASSES];
        for &i in idx {
            c[self.labels[i].index()] += self.weights[i];
        }
        c
    }

    fn best_split(&self, idx: &[usize]) -> Option<Split> {
        let min_leaf = self.config.min_leaf_samples;
        let total = self.counts(idx);
        let total_mass: f64 = total.iter().sum();
        let mut best: Option<Split> = None;
        let mut order = idx.to_vec();
        for f in 0..self.n_features {
            order.copy_from_slice(idx);
            order.sort_by(|&a, &b| {
                self.values[a][f]
                    .total_cmp(&self.values[b][f])
                    .then(a.cmp(&b))
            });
            let mut left = [0.0; NUM_CLASSES];
            for pos in 0..order.len() - 1 {
                let i = order[pos];
                left[self.labels[i].index()] += self.weights[i];
                let lo = self.values[i][f];
                let hi = self.values[order[pos + 1]][f];
                let n_left = pos + 1;
                if lo == hi || n_left < min_leaf || order.len() - n_left < min_leaf {
                    continue;
                }
                let mut right = [0.0; NUM_CLASSES];
                for k in 0..NUM_CLASSES {
                    right[k] = total[k] - left[k];
                }
                let wl: f64 = left.iter().sum();
                let wr: f64 = right.iter().sum();
                let impurity = (wl * gini(&left) + wr * gini(&right)) / total_mass;
                if best.is_none_or(|b| impurity < b.impurity) {
                    best = Some(Split {
                        feature: f,
                        threshold: midpoint(lo, hi),
                        impurity,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            class_counts: counts,
            pseudo_counts: [0.0; NUM_CLASSES],
        });
        let pure = counts.iter().filter(|&&c| c > 0.0).count() <= 1;
        if pure || depth >= self.config.max_depth || idx.len() < 2 * self.config.min_leaf_samples {
            return id;
        }
        let Some(split) = self.best_split(&idx) else {
            return id;
        };
        if split.impurity >= gini(&counts) - MIN_GAIN {
            return id;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.values[i][split.feature] <= split.threshold);
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = TreeNode::Internal {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

/// Midpoint of `lo < hi` that still separates them under `<=`.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid >= hi {
        lo
    } else {
        mid
    }
}

/// Greedy CART training minimizing weighted Gini impurity.
pub fn train(
    dataset: &[CellSample],
    weights: Option<&[f64]>,
    schema: &FeatureSchema,
    config: &TrainConfig,
) -> Result<TreeModel, TrainError> {
    if config.max_depth == 0 || config.min_leaf_samples == 0 {
        return Err(TrainError::InvalidConfig);
    }
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let weights = match weights {
        Some(w) => {
            if w.len() != dataset.len() || w.iter().any(|x| !x.is_finite() || *x <= 0.0) {
                return Err(TrainError::InvalidWeights);
            }
            w.to_vec()
        }
        None => vec![1.0; dataset.len()],
    };
    let mut labels = Vec::with_capacity(dataset.len());
    for s in dataset {
        let violations = validate_sample(s, schema);
        if !violations.is_empty() {
            return Err(TrainError::SchemaMismatch {
                sample_id: s.id.clone(),
                violations,
            });
        }
        labels.push(s.true_label.ok_or_else(|| TrainError::Unlabeled(s.id.clone()))?);
    }
    let mut trainer = Trainer {
        values: dataset.iter().map(|s| s.features.as_slice()).collect(),
        labels,
        weights,
        n_features: schema.len(),
        config,
        nodes: Vec::new(),
    };
    let root = trainer.grow((0..dataset.len()).collect(), 0);
    Ok(TreeModel::from_parts(trainer.nodes, root, schema.clone(), CellClass::ALL.to_vec())
        .expect("trainer builds well-formed trees"))
}

/// Root split that `train` would choose, or `None` when the root stays a leaf
/// for lack of any admissible split.
pub fn root_split(
    dataset: &[CellSample],
    schema: &FeatureSchema,
    config: &TrainConfig,
) -> Result<Option<Split>, TrainError> {
    let model = train(dataset, None, schema, config)?;
    let subtree = model.subtree_counts();
    Ok(match model.nodes[model.root] {
        TreeNode::Internal {
            feature,
            threshold,
            left,
            right,
        } => {
            let total: f64 = subtree[model.root].iter().sum();
            let wl: f64 = subtree[left].iter().sum();
            let wr: f64 = subtree[right].iter().sum();
            Some(Split {
                feature,
                threshold,
                impurity: (wl * gini(&subtree[left]) + wr * gini(&subtree[right])) / total,
            })
        }
        TreeNode::Leaf { .. } => None,
    })
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvaluateError {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("sample `{0}` has no label")]
    Unlabeled(String),
    #[error(transparent)]
    Schema(#[from] SchemaMismatch),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    /// Recall for every class present in the dataset.
    pub per_class_recall: BTreeMap<CellClass, f64>,
    pub correct: usize,
    pub total: usize,
    /// `confusion[truth][predicted]`
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

pub fn evaluate(model: &TreeModel, dataset: &[CellSample]) -> Result<Evaluation, EvaluateError> {
    if dataset.is_empty() {
        return Err(EvaluateError::EmptyDataset);
    }
    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for s in dataset {
        let truth = s
            .true_label
            .ok_or_else(|| EvaluateError::Unlabeled(s.id.clone()))?;
        let p = model.predict(s, 0)?;
        confusion[truth.index()][p.predicted.index()] += 1;
    }
    let correct: usize = (0..NUM_CLASSES).map(|i| confusion[i][i]).sum();
    let per_class_recall = CellClass::ALL
        .iter()
        .filter_map(|c| {
            let row = &confusion[c.index()];
            let n: usize = row.iter().sum();
            (n > 0).then(|| (*c, row[c.index()] as f64 / n as f64))
        })
        .collect();
    Ok(Evaluation {
        accuracy: correct as f64 / dataset.len() as f64,
        per_class_recall,
        correct,
        total: dataset.len(),
        confusion,
    })
}
