//! Turns committed interventions into new model versions.
//!
//! Two paths run side by side. The direct path edits the tree immediately:
//! overrides add pseudo-counts at the sample's leaf and threshold edits move
//! split points. The data path turns every intervention into weighted
//! training points that a periodic retrain folds back in, which supersedes
//! the direct edits.

use serde::{Deserialize, Serialize};

use crate::domain::{
    CellClass, CellSample, Explanation, FeatureSchema, Intervention, InterventionAction, Lineage, ModelVersion,
    Prediction, VersionOrigin,
};
use crate::explain::{explain, validate_edit, whatif, EditViolation, ValidatedEdit, WhatIf};
use crate::tree::{train, SchemaMismatch, TrainConfig, TrainError};

/// Upper bound on pseudo-count escalation rounds for one override.
pub const MAX_OVERRIDE_ROUNDS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdaptationMode {
    #[default]
    DirectPlusRetrain,
    RetrainOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptationPolicy {
    pub retrain_every_n: usize,
    pub override_pseudo_weight: f64,
    pub synthetic_point_weight: f64,
    pub mode: AdaptationMode,
}

impl Default for AdaptationPolicy {
    fn default() -> Self {
        Self {
            retrain_every_n: 10,
            override_pseudo_weight: 5.0,
            synthetic_point_weight: 3.0,
            mode: AdaptationMode::DirectPlusRetrain,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid adaptation policy: {0}")]
pub struct PolicyError(pub &'static str);

impl AdaptationPolicy {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.retrain_every_n == 0 {
            return Err(PolicyError("retrain_every_n must be at least 1"));
        }
        let positive = |w: f64| w.is_finite() && w > 0.0;
        if !positive(self.override_pseudo_weight) {
            return Err(PolicyError("override_pseudo_weight must be positive"));
        }
        if !positive(self.synthetic_point_weight) {
            return Err(PolicyError("synthetic_point_weight must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AdaptError {
    #[error("intervention targets version {base}, current version is {current}")]
    StaleBaseVersion { base: u64, current: u64 },
    #[error("intervention is for sample `{intervention}`, got `{sample}`")]
    SampleMismatch { intervention: String, sample: String },
    #[error("invalid edit: {0:?}")]
    InvalidEdit(Vec<EditViolation>),
    #[error("override to `{0}` repeats the predicted label")]
    SameLabelOverride(CellClass),
    #[error("override to `{0}` did not take effect within the escalation bound")]
    OverrideSaturated(CellClass),
    #[error(transparent)]
    Schema(#[from] SchemaMismatch),
}

/// An intervention checked against the version it was made on.
#[derive(Debug, Clone, PartialEq)]
pub struct ReviewedIntervention {
    pub prediction: Prediction,
    pub explanation: Explanation,
    pub edits: ValidatedEdit,
    /// Preview of the edits on the base version.
    pub preview: WhatIf,
}

impl ReviewedIntervention {
    /// Label the expert stands behind once the intervention is applied.
    pub fn confirmed_label(&self, action: &InterventionAction) -> CellClass {
        action
            .new_label()
            .unwrap_or(self.preview.new_prediction.predicted)
    }
}

/// Checks an intervention against `current` and the sample it names.
pub fn review(
    current: &ModelVersion,
    intervention: &Intervention,
    sample: &CellSample,
) -> Result<ReviewedIntervention, AdaptError> {
    if intervention.base_model_version != current.version {
        return Err(AdaptError::StaleBaseVersion {
            base: intervention.base_model_version,
            current: current.version,
        });
    }
    if intervention.sample_id != sample.id {
        return Err(AdaptError::SampleMismatch {
            intervention: intervention.sample_id.clone(),
            sample: sample.id.clone(),
        });
    }
    let prediction = current.predict(sample)?;
    let explanation = explain(current, sample, &prediction).map_err(|e| match e {
        crate::explain::ExplainError::Schema(s) => AdaptError::Schema(s),
        other => unreachable!("prediction was just made on this version: {other}"),
    })?;
    if let InterventionAction::LabelOverride { new_label } = intervention.action {
        if new_label == prediction.predicted {
            return Err(AdaptError::SameLabelOverride(new_label));
        }
    }
    let edits = validate_edit(
        &explanation,
        intervention.action.edits(),
        current.model.schema(),
    )
    .map_err(AdaptError::InvalidEdit)?;
    let preview = whatif(current, sample, &edits).map_err(|e| match e {
        crate::explain::WhatIfError::Schema(s) => AdaptError::Schema(s),
        crate::explain::WhatIfError::InvalidEdit(node_id) => {
            AdaptError::InvalidEdit(vec![EditViolation::UnknownNode { node_id }])
        }
    })?;
    Ok(ReviewedIntervention {
        prediction,
        explanation,
        edits,
        preview,
    })
}

/// Applies an intervention to the tree right away and returns the next version.
pub fn apply_direct(
    current: &ModelVersion,
    intervention: &Intervention,
    sample: &CellSample,
    policy: &AdaptationPolicy,
) -> Result<ModelVersion, AdaptError> {
    let reviewed = review(current, intervention, sample)?;
    apply_reviewed(current, intervention, sample, &reviewed, policy)
}

/// [`apply_direct`] for an intervention that already passed [`review`].
pub fn apply_reviewed(
    current: &ModelVersion,
    intervention: &Intervention,
    sample: &CellSample,
    reviewed: &ReviewedIntervention,
    policy: &AdaptationPolicy,
) -> Result<ModelVersion, AdaptError> {
    let mut model = current.model.clone();
    if policy.mode == AdaptationMode::DirectPlusRetrain {
        for edit in reviewed.edits.edits() {
            if let Some(t) = edit.adjusted_threshold {
                let feature = model
                    .split_feature(edit.node_id)
                    .expect("validated edits name internal nodes");
                let t = model.schema().features()[feature].clamp(t);
                model.set_threshold(edit.node_id, t);
            }
        }
        if let Some(label) = intervention.action.new_label() {
            // leaf of the re-traversed tree, using the sample's own values
            let leaf = model.leaf_of(&sample.features);
            let mut weight = policy.override_pseudo_weight;
            let mut rounds = 0;
            loop {
                model.add_pseudo_count(leaf, label, weight);
                rounds += 1;
                if CellClass::argmax(&model.leaf_distribution(leaf)) == label {
                    break;
                }
                if rounds == MAX_OVERRIDE_ROUNDS {
                    return Err(AdaptError::OverrideSaturated(label));
                }
                weight *= 2.0;
            }
        }
    }
    Ok(ModelVersion::new(
        current.version + 1,
        model,
        Lineage {
            origin: VersionOrigin::Direct,
            base_version: Some(current.version),
            interventions: vec![intervention.id.clone()],
        },
    ))
}

/// Weighted labeled point derived from an intervention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPoint {
    pub sample: CellSample,
    pub label: CellClass,
    pub weight: f64,
}

/// Feedback-as-data conversion.
///
/// * Accept: the sample with its predicted label, weight 1.
/// * LabelOverride: the sample with the new label, synthetic weight.
/// * Each step edit with an adjusted sample value: the sample with that one
///   value substituted, confirmed label, synthetic weight.
/// * An explanation edit with no value adjustments confirms the sample with
///   the previewed label at weight 1, like an accept.
/// * Combined: value points labeled with the new label plus the override point.
pub fn to_training_points(
    intervention: &Intervention,
    sample: &CellSample,
    reviewed: &ReviewedIntervention,
    schema: &FeatureSchema,
    policy: &AdaptationPolicy,
) -> Vec<TrainingPoint> {
    let label = reviewed.confirmed_label(&intervention.action);
    let point = |suffix: String, features: Vec<f64>, weight: f64| TrainingPoint {
        sample: CellSample::labeled(format!("{}#{suffix}", intervention.id), features, label),
        label,
        weight,
    };
    let mut value_points = Vec::new();
    for (k, edit) in reviewed.edits.edits().iter().enumerate() {
        let Some(v) = edit.adjusted_sample_value else {
            continue;
        };
        let step = reviewed
            .explanation
            .step(edit.node_id)
            .expect("validated edits name path nodes");
        let Some(f) = schema.index_of(&step.feature) else {
            continue;
        };
        let mut features = sample.features.clone();
        features[f] = v;
        value_points.push(point(format!("edit{k}"), features, policy.synthetic_point_weight));
    }
    match &intervention.action {
        InterventionAction::Accept => vec![point("accept".into(), sample.features.clone(), 1.0)],
        InterventionAction::LabelOverride { .. } => vec![point(
            "override".into(),
            sample.features.clone(),
            policy.synthetic_point_weight,
        )],
        InterventionAction::ExplanationEdit { .. } => {
            if value_points.is_empty() {
                vec![point("confirm".into(), sample.features.clone(), 1.0)]
            } else {
                value_points
            }
        }
        InterventionAction::Combined { .. } => {
            value_points.push(point(
                "override".into(),
                sample.features.clone(),
                policy.synthetic_point_weight,
            ));
            value_points
        }
    }
}

/// Feedback accumulated since bootstrap, plus the interventions not yet
/// folded in by a retrain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeedbackBuffer {
    pub points: Vec<TrainingPoint>,
    pub since_retrain: Vec<String>,
}

impl FeedbackBuffer {
    pub fn record(&mut self, intervention_id: &str, points: Vec<TrainingPoint>) {
        self.points.extend(points);
        self.since_retrain.push(intervention_id.to_string());
    }

    pub fn is_due(&self, policy: &AdaptationPolicy) -> bool {
        self.since_retrain.len() >= policy.retrain_every_n
    }

    pub fn mark_retrained(&mut self) {
        self.since_retrain.clear();
    }
}

/// Retrains from scratch on `base_dataset` plus every feedback point when the
/// cadence is reached or `force` is set. The new tree carries no pseudo-counts.
pub fn maybe_retrain(
    feedback: &FeedbackBuffer,
    base_dataset: &[CellSample],
    current: &ModelVersion,
    policy: &AdaptationPolicy,
    config: &TrainConfig,
    force: bool,
) -> Result<Option<ModelVersion>, TrainError> {
    if !force && !feedback.is_due(policy) {
        return Ok(None);
    }
    let mut data = Vec::with_capacity(base_dataset.len() + feedback.points.len());
    let mut weights = Vec::with_capacity(data.capacity());
    data.extend_from_slice(base_dataset);
    weights.resize(base_dataset.len(), 1.0);
    for p in &feedback.points {
        let mut s = p.sample.clone();
        s.true_label = Some(p.label);
        data.push(s);
        weights.push(p.weight);
    }
    let model = train(&data, Some(&weights), current.model.schema(), config)?;
    Ok(Some(ModelVersion::new(
        current.version + 1,
        model,
        Lineage {
            origin: VersionOrigin::Retrain,
            base_version: Some(current.version),
            interventions: feedback.since_retrain.clone(),
        },
    )))
}
