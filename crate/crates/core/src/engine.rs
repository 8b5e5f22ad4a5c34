//! The live system: current model, version history, pending feedback, and
//! the log. Live commits and log replay run through the same fold, which is
//! what makes replay reproduce the live content hash.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

use crate::adapt::{
    apply_reviewed, maybe_retrain, review, to_training_points, AdaptError, AdaptationPolicy,
    FeedbackBuffer, PolicyError, TrainingPoint,
};
use crate::dataset::dataset_hash;
use crate::domain::{
    CellSample, Explanation, FeatureSchema, Intervention, ModelVersion, Prediction, StepEdit,
};
use crate::event_log::{
    BootstrapRecord, EventBody, InterventionLog, LogError, LogEvent, RetrainRecord, VersionStamp,
};
use crate::explain::{explain, validate_edit, whatif, EditViolation, WhatIf, WhatIfError};
use crate::tree::{train, SchemaMismatch, TrainConfig, TrainError};

/// Everything needed to build the bootstrap model and to replay a log.
#[derive(Debug, Clone)]
pub struct EngineSetup {
    pub schema: FeatureSchema,
    /// Labeled base training data.
    pub dataset: Vec<CellSample>,
    /// Extra samples that may be assessed but are not trained on.
    pub review: Vec<CellSample>,
    pub policy: AdaptationPolicy,
    pub config: TrainConfig,
}

impl EngineSetup {
    pub fn new(schema: FeatureSchema, dataset: Vec<CellSample>) -> Self {
        Self {
            schema,
            dataset,
            review: Vec::new(),
            policy: AdaptationPolicy::default(),
            config: TrainConfig::default(),
        }
    }

    /// Hash over the training data followed by the review-only samples.
    pub fn dataset_hash(&self) -> String {
        let mut all = self.dataset.clone();
        all.extend(self.review.iter().cloned());
        dataset_hash(&all)
    }

    pub fn train_base(&self) -> Result<ModelVersion, TrainError> {
        let model = train(&self.dataset, None, &self.schema, &self.config)?;
        Ok(ModelVersion::bootstrap(model))
    }
}

/// Source of event timestamps.
#[derive(Debug, Clone)]
pub enum Clock {
    System,
    /// Starts at `next` and advances by `step` per reading, for byte-stable logs.
    Stepped { next: DateTime<Utc>, step: Duration },
}

impl Clock {
    pub fn stepped_from_epoch() -> Self {
        Clock::Stepped {
            next: DateTime::UNIX_EPOCH,
            step: Duration::seconds(1),
        }
    }

    pub fn now(&mut self) -> DateTime<Utc> {
        match self {
            Clock::System => Utc::now(),
            Clock::Stepped { next, step } => {
                let t = *next;
                *next = t + *step;
                t
            }
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("unknown sample `{0}`")]
    UnknownSample(String),
    #[error("duplicate sample id `{0}`")]
    DuplicateSample(String),
    #[error("intervention id `{0}` was already committed")]
    DuplicateIntervention(String),
    #[error(transparent)]
    Adapt(#[from] AdaptError),
    #[error("invalid edit: {0:?}")]
    InvalidEdit(Vec<EditViolation>),
    #[error(transparent)]
    Schema(#[from] SchemaMismatch),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Log(#[from] LogError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Replay(#[from] ReplayError),
}

impl EngineError {
    /// Violations to report for a rejected edit, if this is one.
    pub fn violations(&self) -> Option<&[EditViolation]> {
        match self {
            EngineError::InvalidEdit(v) | EngineError::Adapt(AdaptError::InvalidEdit(v)) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("log does not start with a bootstrap record")]
    MissingBootstrap,
    #[error("seq {seq}: expected content hash {expected}, got {actual}")]
    HashMismatch {
        seq: u64,
        expected: String,
        actual: String,
    },
    #[error("seq {seq}: expected version {expected}, got {actual}")]
    VersionMismatch { seq: u64, expected: u64, actual: u64 },
    #[error("bootstrap dataset hash {logged} does not match the supplied data {actual}")]
    DatasetMismatch { logged: String, actual: String },
    #[error("corrupt event at seq {seq}: {message}")]
    CorruptEvent { seq: u64, message: String },
    #[error("seq {seq}: {source}")]
    Rejected { seq: u64, source: Box<EngineError> },
}

/// A prediction with its explanation, as shown to the expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assessment {
    pub prediction: Prediction,
    pub explanation: Explanation,
    pub model_version: u64,
}

#[derive(Debug, Clone)]
pub struct Commit {
    pub seq: u64,
    /// Version from the direct path.
    pub direct: Arc<ModelVersion>,
    /// Version from the retrain this commit triggered, if any.
    pub retrained: Option<Arc<ModelVersion>>,
    pub whatif_echo: WhatIf,
}

impl Commit {
    pub fn final_version(&self) -> &Arc<ModelVersion> {
        self.retrained.as_ref().unwrap_or(&self.direct)
    }
}

#[derive(Debug, Clone)]
pub struct RetrainOutcome {
    pub seq: u64,
    pub version: Arc<ModelVersion>,
}

struct Folded {
    version: ModelVersion,
    points: Vec<TrainingPoint>,
    whatif: WhatIf,
    retrained: Option<ModelVersion>,
}

pub struct Engine {
    setup: EngineSetup,
    samples: BTreeMap<String, CellSample>,
    versions: Vec<Arc<ModelVersion>>,
    feedback: FeedbackBuffer,
    committed: std::collections::HashSet<String>,
    log: InterventionLog,
    clock: Clock,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("version", &self.current().version)
            .field("log_len", &self.log.len())
            .finish()
    }
}

impl Engine {
    /// Starts from `log`: an empty log gets a fresh bootstrap event, a
    /// non-empty one is replayed to rebuild state.
    pub fn start(mut setup: EngineSetup, log: InterventionLog, clock: Clock) -> Result<Self, EngineError> {
        if let Some(EventBody::Bootstrap(record)) = log.events().first().map(|e| &e.body) {
            setup.policy = record.policy.clone();
            setup.config = record.train_config.clone();
        }
        setup.policy.validate()?;
        let base = setup.train_base()?;
        if log.is_empty() {
            let mut engine = Self::empty(setup, base, log, clock)?;
            let record = BootstrapRecord {
                model_hash: engine.current().content_hash.clone(),
                dataset_hash: engine.setup.dataset_hash(),
                sample_count: engine.setup.dataset.len() + engine.setup.review.len(),
                train_config: engine.setup.config.clone(),
                policy: engine.setup.policy.clone(),
            };
            let timestamp = engine.clock.now();
            engine.log.append(LogEvent {
                seq: 0,
                timestamp,
                body: EventBody::Bootstrap(record),
                outcome: None,
                retrain: None,
            })?;
            Ok(engine)
        } else {
            let events = log.events().to_vec();
            let mut engine = Self::empty(setup, base, InterventionLog::in_memory(), clock)?;
            engine.fold_events(&events, &mut |_, _| {})?;
            engine.log = log;
            Ok(engine)
        }
    }

    /// Rebuilds an engine by replaying `events` on top of `base`, checking
    /// every recorded hash along the way. The result holds an in-memory copy
    /// of the events.
    pub fn replay(setup: EngineSetup, base: ModelVersion, events: &[LogEvent]) -> Result<Self, ReplayError> {
        Self::replay_observed(setup, base, events, |_, _| {})
    }

    /// [`Engine::replay`] that calls `observe` with the engine state after
    /// each event, bootstrap included.
    pub fn replay_observed(
        setup: EngineSetup,
        base: ModelVersion,
        events: &[LogEvent],
        mut observe: impl FnMut(&Engine, &LogEvent),
    ) -> Result<Self, ReplayError> {
        let mut engine = Self::empty(setup, base, InterventionLog::in_memory(), Clock::System)
            .map_err(|e| ReplayError::Rejected {
                seq: 0,
                source: Box::new(e),
            })?;
        engine.fold_events(events, &mut observe)?;
        Ok(engine)
    }

    fn empty(
        setup: EngineSetup,
        base: ModelVersion,
        log: InterventionLog,
        clock: Clock,
    ) -> Result<Self, EngineError> {
        let mut samples = BTreeMap::new();
        for s in setup.dataset.iter().chain(&setup.review) {
            if samples.insert(s.id.clone(), s.clone()).is_some() {
                return Err(EngineError::DuplicateSample(s.id.clone()));
            }
        }
        Ok(Self {
            setup,
            samples,
            versions: vec![Arc::new(base)],
            feedback: FeedbackBuffer::default(),
            committed: Default::default(),
            log,
            clock,
        })
    }

    fn fold_events(&mut self, events: &[LogEvent], observe: &mut dyn FnMut(&Engine, &LogEvent)) -> Result<(), ReplayError> {
        let Some(first) = events.first() else {
            return Err(ReplayError::MissingBootstrap);
        };
        let EventBody::Bootstrap(record) = &first.body else {
            return Err(ReplayError::MissingBootstrap);
        };
        let actual = self.setup.dataset_hash();
        if record.dataset_hash != actual {
            return Err(ReplayError::DatasetMismatch {
                logged: record.dataset_hash.clone(),
                actual,
            });
        }
        if record.model_hash != self.current().content_hash {
            return Err(ReplayError::HashMismatch {
                seq: 0,
                expected: record.model_hash.clone(),
                actual: self.current().content_hash.clone(),
            });
        }
        // the log's parameters govern everything that follows
        self.setup.policy = record.policy.clone();
        self.setup.config = record.train_config.clone();
        self.log.append(first.clone()).map_err(|e| corrupt(0, e))?;
        observe(self, first);

        for event in &events[1..] {
            let seq = event.seq;
            let rejected = |e: EngineError| ReplayError::Rejected {
                seq,
                source: Box::new(e),
            };
            let produced = match &event.body {
                EventBody::Bootstrap(_) => {
                    return Err(ReplayError::CorruptEvent {
                        seq,
                        message: "bootstrap after seq 0".into(),
                    })
                }
                EventBody::Intervention(iv) => {
                    let folded = self.fold_intervention(iv).map_err(rejected)?;
                    match (&folded.retrained, &event.retrain) {
                        (Some(v), Some(r)) => check_stamp(seq, v, &r.content_hash, r.version)?,
                        (None, None) => {}
                        (produced, _) => {
                            return Err(ReplayError::CorruptEvent {
                                seq,
                                message: format!(
                                    "retrain {} by the cadence but {} in the log",
                                    if produced.is_some() { "due" } else { "not due" },
                                    if event.retrain.is_some() { "recorded" } else { "absent" },
                                ),
                            })
                        }
                    }
                    let version = folded.version.clone();
                    self.install_intervention(iv, folded);
                    version
                }
                EventBody::Retrain(record) => {
                    let version = maybe_retrain(
                        &self.feedback,
                        &self.setup.dataset,
                        self.current(),
                        &self.setup.policy,
                        &self.setup.config,
                        true,
                    )
                    .map_err(|e| rejected(e.into()))?
                    .expect("forced retrain always yields a version");
                    if event.outcome.is_some() || event.retrain.is_some() {
                        return Err(ReplayError::CorruptEvent {
                            seq,
                            message: "retrain event carries intervention fields".into(),
                        });
                    }
                    check_stamp(seq, &version, &record.content_hash, record.version)?;
                    self.install_retrain(version.clone());
                    version
                }
            };
            if let Some(stamp) = &event.outcome {
                check_stamp(seq, &produced, &stamp.content_hash, stamp.version)?;
            }
            self.log.append(event.clone()).map_err(|e| corrupt(seq, e))?;
            observe(self, event);
        }
        Ok(())
    }

    pub fn setup(&self) -> &EngineSetup {
        &self.setup
    }

    pub fn current(&self) -> &Arc<ModelVersion> {
        self.versions.last().expect("at least the bootstrap version")
    }

    pub fn versions(&self) -> &[Arc<ModelVersion>] {
        &self.versions
    }

    pub fn log(&self) -> &InterventionLog {
        &self.log
    }

    /// Every reviewable sample, ordered by id.
    pub fn samples(&self) -> impl ExactSizeIterator<Item = &CellSample> {
        self.samples.values()
    }

    pub fn sample(&self, id: &str) -> Result<&CellSample, EngineError> {
        self.samples
            .get(id)
            .ok_or_else(|| EngineError::UnknownSample(id.to_string()))
    }

    pub fn interventions_total(&self) -> usize {
        self.committed.len()
    }

    pub fn interventions_since_retrain(&self) -> usize {
        self.feedback.since_retrain.len()
    }

    pub fn feedback_points(&self) -> &[TrainingPoint] {
        &self.feedback.points
    }

    pub fn assess(&self, sample_id: &str) -> Result<Assessment, EngineError> {
        assess_on(self.current(), self.sample(sample_id)?)
    }

    /// What-if preview on the current version; never changes state.
    pub fn preview(&self, sample_id: &str, edits: &[StepEdit]) -> Result<WhatIf, EngineError> {
        preview_on(self.current(), self.sample(sample_id)?, edits)
    }

    fn fold_intervention(&self, intervention: &Intervention) -> Result<Folded, EngineError> {
        if self.committed.contains(&intervention.id) {
            return Err(EngineError::DuplicateIntervention(intervention.id.clone()));
        }
        let sample = self.sample(&intervention.sample_id)?;
        let current = self.current();
        let reviewed = review(current, intervention, sample)?;
        let version = apply_reviewed(current, intervention, sample, &reviewed, &self.setup.policy)?;
        let points = to_training_points(
            intervention,
            sample,
            &reviewed,
            current.model.schema(),
            &self.setup.policy,
        );
        let retrained = if self.feedback.since_retrain.len() + 1 >= self.setup.policy.retrain_every_n {
            let mut feedback = self.feedback.clone();
            feedback.record(&intervention.id, points.clone());
            maybe_retrain(
                &feedback,
                &self.setup.dataset,
                &version,
                &self.setup.policy,
                &self.setup.config,
                false,
            )?
        } else {
            None
        };
        Ok(Folded {
            version,
            points,
            whatif: reviewed.preview,
            retrained,
        })
    }

    fn install_intervention(&mut self, intervention: &Intervention, folded: Folded) {
        self.committed.insert(intervention.id.clone());
        self.feedback.record(&intervention.id, folded.points);
        self.versions.push(Arc::new(folded.version));
        if let Some(v) = folded.retrained {
            self.install_retrain(v);
        }
    }

    fn retrain_record(&self, version: &ModelVersion) -> RetrainRecord {
        RetrainRecord {
            version: version.version,
            content_hash: version.content_hash.clone(),
            interventions: self.feedback.since_retrain.clone(),
            training_points: self.setup.dataset.len() + self.feedback.points.len(),
        }
    }

    fn install_retrain(&mut self, version: ModelVersion) {
        self.feedback.mark_retrained();
        self.versions.push(Arc::new(version));
    }

    /// Validates an intervention, applies it on the direct path, runs the
    /// retrain if this intervention reaches the cadence, and logs all of it as
    /// one event. Nothing is logged or changed if any step fails.
    pub fn commit(&mut self, intervention: Intervention) -> Result<Commit, EngineError> {
        let folded = self.fold_intervention(&intervention)?;
        let whatif_echo = folded.whatif.clone();
        let retrain = folded.retrained.as_ref().map(|v| {
            let mut record = self.retrain_record(v);
            record.interventions.push(intervention.id.clone());
            record.training_points += folded.points.len();
            record
        });
        let event = LogEvent {
            seq: self.log.next_seq(),
            timestamp: self.clock.now(),
            outcome: Some(VersionStamp {
                version: folded.version.version,
                content_hash: folded.version.content_hash.clone(),
            }),
            retrain,
            body: EventBody::Intervention(intervention.clone()),
        };
        let seq = self.log.append(event)?;
        let retrained = folded.retrained.is_some();
        self.install_intervention(&intervention, folded);
        let n = self.versions.len();
        Ok(Commit {
            seq,
            direct: self.versions[n - 1 - retrained as usize].clone(),
            retrained: retrained.then(|| self.versions[n - 1].clone()),
            whatif_echo,
        })
    }

    /// Retrains now on everything collected so far, regardless of cadence,
    /// and logs a retrain event.
    pub fn retrain_now(&mut self) -> Result<RetrainOutcome, EngineError> {
        let version = maybe_retrain(
            &self.feedback,
            &self.setup.dataset,
            self.current(),
            &self.setup.policy,
            &self.setup.config,
            true,
        )?
        .expect("forced retrain always yields a version");
        let event = LogEvent {
            seq: self.log.next_seq(),
            timestamp: self.clock.now(),
            body: EventBody::Retrain(self.retrain_record(&version)),
            outcome: None,
            retrain: None,
        };
        let seq = self.log.append(event)?;
        self.install_retrain(version);
        Ok(RetrainOutcome {
            seq,
            version: self.current().clone(),
        })
    }
}

/// Prediction plus explanation of `sample` on `version`.
pub fn assess_on(version: &ModelVersion, sample: &CellSample) -> Result<Assessment, EngineError> {
    let prediction = version.predict(sample)?;
    let explanation = explain(version, sample, &prediction).map_err(|e| match e {
        crate::explain::ExplainError::Schema(s) => EngineError::Schema(s),
        other => unreachable!("fresh prediction on the same version: {other}"),
    })?;
    Ok(Assessment {
        model_version: version.version,
        prediction,
        explanation,
    })
}

/// Validates `edits` against the explanation of `sample` on `version` and
/// previews them.
pub fn preview_on(version: &ModelVersion, sample: &CellSample, edits: &[StepEdit]) -> Result<WhatIf, EngineError> {
    let assessment = assess_on(version, sample)?;
    let edits = validate_edit(&assessment.explanation, edits, version.model.schema())
        .map_err(EngineError::InvalidEdit)?;
    whatif(version, sample, &edits).map_err(|e| match e {
        WhatIfError::Schema(s) => EngineError::Schema(s),
        WhatIfError::InvalidEdit(node_id) => EngineError::InvalidEdit(vec![EditViolation::UnknownNode { node_id }]),
    })
}

/// Replays `events` on `base` and returns the final model version.
pub fn replay(setup: EngineSetup, base: ModelVersion, events: &[LogEvent]) -> Result<ModelVersion, ReplayError> {
    let engine = Engine::replay(setup, base, events)?;
    Ok(engine.current().as_ref().clone())
}

fn check_stamp(seq: u64, produced: &ModelVersion, hash: &str, version: u64) -> Result<(), ReplayError> {
    if produced.version != version {
        return Err(ReplayError::VersionMismatch {
            seq,
            expected: version,
            actual: produced.version,
        });
    }
    if produced.content_hash != hash {
        return Err(ReplayError::HashMismatch {
            seq,
            expected: hash.to_string(),
            actual: produced.content_hash.clone(),
        });
    }
    Ok(())
}

fn corrupt(seq: u64, e: LogError) -> ReplayError {
    ReplayError::CorruptEvent {
        seq,
        message: e.to_string(),
    }
}
