//! Interpretable cytology classifier whose explanations are editable.
//!
//! A CART tree ([`tree`]) classifies morphological feature vectors into nine
//! cytotypes. Each prediction comes with its decision path ([`explain`]),
//! which an expert can accept, override, or edit. Edits are previewed, logged
//! ([`event_log`]), and applied through two adaptation paths ([`adapt`]): an
//! immediate tree update and periodic retraining on feedback-derived points.
//! [`engine::Engine`] ties these together and replays logs deterministically.

pub mod adapt;
pub mod dataset;
pub mod domain;
pub mod engine;
pub mod event_log;
pub mod explain;
pub mod tree;

pub use adapt::{AdaptationMode, AdaptationPolicy};
pub use domain::*;
pub use engine::{Assessment, Clock, Engine, EngineError, EngineSetup, ReplayError};
pub use event_log::{InterventionLog, LogEvent};
pub use tree::{TrainConfig, TreeModel};
