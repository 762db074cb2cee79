//! Append-only session logs: one JSON object per line, numbered from 0
//! without gaps.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::RecordingMeta;
use crate::clock::Timestamp;
use crate::domain::{Command, DomainError, SessionId, SessionState, Transition};
use crate::metrics::{AttemptRecord, SessionReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum EntryBody {
    /// Initial state of the session; always entry 0.
    Started(SessionState),
    /// An accepted state machine command.
    Command(Command),
    Transition(Transition),
    Attempt(AttemptRecord),
    Recording(RecordingMeta),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEntry {
    pub seq: u64,
    pub at: Timestamp,
    #[serde(flatten)]
    pub body: EntryBody,
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("event log io: {0}")]
    Io(#[from] std::io::Error),
    #[error("event log line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error("event log expected seq {expected}, found {found}")]
    Gap { expected: u64, found: u64 },
    #[error("event log does not start with a session snapshot")]
    NoSnapshot,
    #[error("replaying seq {seq}: {source}")]
    Rejected { seq: u64, source: DomainError },
    #[error("replaying seq {seq}: logged transitions differ from the state machine")]
    Diverged { seq: u64 },
}

pub struct EventLog {
    session_id: SessionId,
    entries: Vec<LogEntry>,
    sink: Option<BufWriter<File>>,
    path: Option<PathBuf>,
}

impl EventLog {
    pub fn in_memory(session_id: SessionId) -> Self {
        EventLog {
            session_id,
            entries: Vec::new(),
            sink: None,
            path: None,
        }
    }

    /// Creates (or truncates) the log file at `path`.
    pub fn create(session_id: SessionId, path: impl Into<PathBuf>) -> Result<Self, LogError> {
        let path = path.into();
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let file = File::create(&path)?;
        Ok(EventLog {
            session_id,
            entries: Vec::new(),
            sink: Some(BufWriter::new(file)),
            path: Some(path),
        })
    }

    /// Reopens an existing log for appending.
    pub fn reopen(session_id: SessionId, path: impl Into<PathBuf>) -> Result<Self, LogError> {
        let path = path.into();
        let entries = read_log(&path)?;
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(EventLog {
            session_id,
            entries,
            sink: Some(BufWriter::new(file)),
            path: Some(path),
        })
    }

    pub fn session_id(&self) -> &SessionId {
        &self.session_id
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&mut self, at: Timestamp, body: EntryBody) -> Result<&LogEntry, LogError> {
        let entry = LogEntry {
            seq: self.entries.len() as u64,
            at,
            body,
        };
        if let Some(sink) = self.sink.as_mut() {
            serde_json::to_writer(&mut *sink, &entry).map_err(std::io::Error::from)?;
            sink.write_all(b"\n")?;
            sink.flush()?;
        }
        self.entries.push(entry);
        Ok(self.entries.last().expect("just pushed"))
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    /// Seq the next entry will get.
    pub fn next_seq(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn since(&self, from_seq: u64) -> &[LogEntry] {
        let start = (from_seq as usize).min(self.entries.len());
        &self.entries[start..]
    }

    pub fn report(&self) -> SessionReport {
        report_from_entries(self.session_id.clone(), &self.entries)
    }
}

/// Reads a log file and checks that its seqs are gapless.
pub fn read_log(path: &Path) -> Result<Vec<LogEntry>, LogError> {
    let reader = BufReader::new(File::open(path)?);
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: LogEntry = serde_json::from_str(&line).map_err(|source| LogError::Parse {
            line: i + 1,
            source,
        })?;
        let expected = entries.len() as u64;
        if entry.seq != expected {
            return Err(LogError::Gap {
                expected,
                found: entry.seq,
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn parse_log(text: &str) -> Result<Vec<LogEntry>, LogError> {
    let mut entries = Vec::new();
    for (i, line) in text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let entry: LogEntry = serde_json::from_str(line).map_err(|source| LogError::Parse {
            line: i + 1,
            source,
        })?;
        if entry.seq != entries.len() as u64 {
            return Err(LogError::Gap {
                expected: entries.len() as u64,
                found: entry.seq,
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

/// The session report is a pure function of the log.
pub fn report_from_entries(session_id: SessionId, entries: &[LogEntry]) -> SessionReport {
    let mut attempts = Vec::new();
    let mut transitions = Vec::new();
    for e in entries {
        match &e.body {
            EntryBody::Attempt(a) => attempts.push(a.clone()),
            EntryBody::Transition(t) => transitions.push(t.clone()),
            _ => {}
        }
    }
    SessionReport::build(session_id, &attempts, &transitions)
}

/// Rebuilds the session state by re-running every logged command, and
/// checks the state machine produces exactly the logged transitions.
pub fn replay(entries: &[LogEntry]) -> Result<SessionState, LogError> {
    let Some(LogEntry {
        body: EntryBody::Started(initial),
        ..
    }) = entries.first()
    else {
        return Err(LogError::NoSnapshot);
    };
    let mut state = initial.clone();
    let mut i = 1;
    while i < entries.len() {
        let entry = &entries[i];
        i += 1;
        let EntryBody::Command(cmd) = &entry.body else {
            continue;
        };
        let produced = state
            .apply(cmd, entry.at)
            .map_err(|source| LogError::Rejected {
                seq: entry.seq,
                source,
            })?;
        let logged: Vec<&Transition> = entries[i..]
            .iter()
            .map_while(|e| match &e.body {
                EntryBody::Transition(t) => Some(t),
                _ => None,
            })
            .collect();
        if logged.len() != produced.len() || logged.iter().zip(&produced).any(|(a, b)| *a != b) {
            return Err(LogError::Diverged { seq: entry.seq });
        }
        i += logged.len();
    }
    Ok(state)
}
