//! Append-only JSONL intervention log.
//!
//! One event per line. The first event is always a bootstrap record; `seq`
//! starts at 0 and has no gaps. Lines are fsynced before `append` returns and
//! are never rewritten.

use std::fs::{File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::adapt::AdaptationPolicy;
use crate::domain::Intervention;
use crate::tree::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRecord {
    pub model_hash: String,
    pub dataset_hash: String,
    pub sample_count: usize,
    pub train_config: TrainConfig,
    pub policy: AdaptationPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrainRecord {
    pub version: u64,
    pub content_hash: String,
    /// Interventions folded in since the previous retrain.
    pub interventions: Vec<String>,
    pub training_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EventBody {
    Bootstrap(BootstrapRecord),
    Intervention(Intervention),
    Retrain(RetrainRecord),
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::Bootstrap(_) => "bootstrap",
            EventBody::Intervention(_) => "intervention",
            EventBody::Retrain(_) => "retrain",
        }
    }
}

/// Model version an event produced.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VersionStamp {
    pub version: u64,
    pub content_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEvent {
    pub seq: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
    /// Version produced by the direct path of an intervention.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<VersionStamp>,
    /// Retrain triggered by this intervention reaching the cadence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrain: Option<RetrainRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error("sequence conflict: expected seq {expected}, got {got}")]
    SequenceConflict { expected: u64, got: u64 },
    #[error("the first event must be a bootstrap record")]
    MissingBootstrap,
    #[error("bootstrap may only appear as the first event (seq {0})")]
    MisplacedBootstrap(u64),
    #[error("corrupt event at seq {seq}: {message}")]
    CorruptEvent { seq: u64, message: String },
    #[error("log storage failure: {0}")]
    StorageFailure(#[from] io::Error),
}

/// First unreadable line of a log file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corruption {
    pub seq: u64,
    pub message: String,
}

/// Result of reading a log file: the valid prefix and, if reading stopped
/// early, where and why.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRead {
    pub events: Vec<LogEvent>,
    pub corruption: Option<Corruption>,
}

impl LogRead {
    pub fn into_result(self) -> Result<Vec<LogEvent>, LogError> {
        match self.corruption {
            None => Ok(self.events),
            Some(c) => Err(LogError::CorruptEvent {
                seq: c.seq,
                message: c.message,
            }),
        }
    }
}

fn check_position(event: &LogEvent, expected: u64) -> Result<(), LogError> {
    if event.seq != expected {
        return Err(LogError::SequenceConflict {
            expected,
            got: event.seq,
        });
    }
    match (&event.body, expected) {
        (EventBody::Bootstrap(_), 0) => Ok(()),
        (_, 0) => Err(LogError::MissingBootstrap),
        (EventBody::Bootstrap(_), seq) => Err(LogError::MisplacedBootstrap(seq)),
        _ => Ok(()),
    }
}

/// Reads every well-formed event, stopping at the first bad line.
pub fn read_log(path: impl AsRef<Path>) -> Result<LogRead, LogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut events: Vec<LogEvent> = Vec::new();
    for line in reader.split(b'\n') {
        let line = line?;
        let seq = events.len() as u64;
        let parsed = std::str::from_utf8(&line)
            .map_err(|e| e.to_string())
            .and_then(|l| serde_json::from_str::<LogEvent>(l).map_err(|e| e.to_string()))
            .and_then(|ev| check_position(&ev, seq).map(|_| ev).map_err(|e| e.to_string()));
        match parsed {
            Ok(ev) => events.push(ev),
            Err(message) => {
                return Ok(LogRead {
                    events,
                    corruption: Some(Corruption { seq, message }),
                })
            }
        }
    }
    Ok(LogRead {
        events,
        corruption: None,
    })
}

/// The event store. Backed by a JSONL file, or held in memory only.
#[derive(Debug)]
pub struct InterventionLog {
    path: Option<PathBuf>,
    file: Option<File>,
    events: Vec<LogEvent>,
}

impl InterventionLog {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            file: None,
            events: Vec::new(),
        }
    }

    /// In-memory log pre-filled with already validated events.
    pub fn from_events(events: Vec<LogEvent>) -> Result<Self, LogError> {
        let mut log = Self::in_memory();
        for e in events {
            log.append(e)?;
        }
        Ok(log)
    }

    /// Opens `path` for appending, creating it if absent. A log whose last
    /// line is torn is refused; the intact prefix stays readable through
    /// [`read_log`].
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let events = if path.exists() {
            read_log(&path)?.into_result()?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            file: Some(file),
            events,
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn events(&self) -> &[LogEvent] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn next_seq(&self) -> u64 {
        self.events.len() as u64
    }

    /// Appends `event`, which must carry the next sequence number. The line
    /// is on disk before this returns.
    pub fn append(&mut self, event: LogEvent) -> Result<u64, LogError> {
        check_position(&event, self.next_seq())?;
        if let Some(file) = self.file.as_mut() {
            let mut line = serde_json::to_vec(&event).map_err(io::Error::other)?;
            line.push(b'\n');
            file.write_all(&line)?;
            file.sync_data()?;
        }
        let seq = event.seq;
        self.events.push(event);
        Ok(seq)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CellClass, InterventionAction};

    fn bootstrap() -> LogEvent {
        LogEvent {
            seq: 0,
            timestamp: DateTime::from_timestamp(0, 0).unwrap(),
            body: EventBody::Bootstrap(BootstrapRecord {
                model_hash: "ab".into(),
                dataset_hash: "cd".into(),
                sample_count: 3,
                train_config: TrainConfig::default(),
                policy: AdaptationPolicy::default(),
            }),
            outcome: None,
            retrain: None,
        }
    }

    fn intervention(seq: u64) -> LogEvent {
        LogEvent {
            seq,
            timestamp: DateTime::from_timestamp(seq as i64, 0).unwrap(),
            body: EventBody::Intervention(Intervention {
                id: format!("i{seq}"),
                sample_id: "s1".into(),
                author: "dr".into(),
                timestamp: DateTime::from_timestamp(seq as i64, 0).unwrap(),
                base_model_version: seq.saturating_sub(1),
                action: InterventionAction::LabelOverride {
                    new_label: CellClass::Eosinophil,
                },
            }),
            outcome: Some(VersionStamp {
                version: seq,
                content_hash: "ef".into(),
            }),
            retrain: None,
        }
    }

    #[test]
    fn event_json_shape() {
        let v = serde_json::to_value(intervention(1)).unwrap();
        assert_eq!(v["kind"], "intervention");
        assert_eq!(v["seq"], 1);
        assert_eq!(v["payload"]["action"]["type"], "label_override");
        assert_eq!(v["outcome"]["version"], 1);
        let back: LogEvent = serde_json::from_value(v).unwrap();
        assert_eq!(back, intervention(1));
        let b = serde_json::to_value(bootstrap()).unwrap();
        assert!(b.get("outcome").is_none());
        assert_eq!(serde_json::from_value::<LogEvent>(b).unwrap(), bootstrap());
    }

    #[test]
    fn append_enforces_gapless_seq() {
        let mut log = InterventionLog::in_memory();
        assert!(matches!(log.append(intervention(0)), Err(LogError::MissingBootstrap)));
        assert_eq!(log.append(bootstrap()).unwrap(), 0);
        assert!(matches!(
            log.append(intervention(2)),
            Err(LogError::SequenceConflict { expected: 1, got: 2 })
        ));
        assert!(matches!(
            log.append(bootstrap()),
            Err(LogError::SequenceConflict { expected: 1, got: 0 })
        ));
        let mut again = bootstrap();
        again.seq = 1;
        assert!(matches!(log.append(again), Err(LogError::MisplacedBootstrap(1))));
        assert_eq!(log.append(intervention(1)).unwrap(), 1);
    }

    #[test]
    fn file_round_trip_and_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut log = InterventionLog::open(&path).unwrap();
        log.append(bootstrap()).unwrap();
        log.append(intervention(1)).unwrap();
        drop(log);
        let mut log = InterventionLog::open(&path).unwrap();
        assert_eq!(log.len(), 2);
        log.append(intervention(2)).unwrap();
        let read = read_log(&path).unwrap();
        assert_eq!(read.corruption, None);
        assert_eq!(read.events.len(), 3);
    }

    #[test]
    fn torn_last_line_reported_with_prefix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.jsonl");
        let mut log = InterventionLog::open(&path).unwrap();
        log.append(bootstrap()).unwrap();
        log.append(intervention(1)).unwrap();
        drop(log);
        let full = serde_json::to_string(&intervention(2)).unwrap();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(&full.as_bytes()[..full.len() / 2]).unwrap();
        drop(f);
        let read = read_log(&path).unwrap();
        assert_eq!(read.events.len(), 2);
        assert_eq!(read.corruption.as_ref().unwrap().seq, 2);
        assert!(matches!(
            InterventionLog::open(&path),
            Err(LogError::CorruptEvent { seq: 2, .. })
        ));
    }
}
