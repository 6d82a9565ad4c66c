//! Append-only JSONL log of collected preferences and study selections.

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::ControlKind;
use crate::dataset::{Aspect, PreferenceSelection};
use crate::experiment::SelectionRecord;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path} line {line}: {detail}")]
    Malformed {
        path: PathBuf,
        line: usize,
        detail: String,
    },
}

/// A preference vote as submitted by a client.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceEntry {
    pub timestamp: String,
    pub participant: String,
    pub task: String,
    pub aspect: Aspect,
    pub kind: ControlKind,
    #[serde(default)]
    pub reason: String,
}

impl PreferenceEntry {
    pub fn selection(&self) -> PreferenceSelection {
        PreferenceSelection {
            task: self.task.clone(),
            aspect: self.aspect,
            kind: self.kind,
            reason: self.reason.clone(),
            task_entry: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Preference(PreferenceEntry),
    Selection(SelectionRecord),
}

/// Writer half. Lines are only ever appended; each append is flushed to
/// disk before it returns.
#[derive(Debug)]
pub struct SelectionLog {
    path: PathBuf,
    file: File,
}

impl SelectionLog {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, LogError> {
        let path = path.into();
        let io_err = |source| LogError::Io {
            path: path.clone(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io_err)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        Ok(Self { path, file })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&mut self, event: &LogEvent) -> Result<(), LogError> {
        let mut line = serde_json::to_vec(event).expect("log events serialize");
        line.push(b'\n');
        self.file
            .write_all(&line)
            .and_then(|()| self.file.sync_data())
            .map_err(|source| LogError::Io {
                path: self.path.clone(),
                source,
            })
    }
}

/// Reads every event. A missing file is an empty log; a final line without
/// its newline is a torn write and is skipped.
pub fn read_log(path: &Path) -> Result<Vec<LogEvent>, LogError> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => {
            return Err(LogError::Io {
                path: path.to_path_buf(),
                source,
            })
        }
    };
    let complete = match text.rfind('\n') {
        Some(i) => &text[..=i],
        None => "",
    };
    if complete.len() < text.len() {
        tracing::warn!(path = %path.display(), "ignoring unterminated last line");
    }
    let mut out = Vec::new();
    for (i, line) in complete.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event = serde_json::from_str(line).map_err(|e| LogError::Malformed {
            path: path.to_path_buf(),
            line: i + 1,
            detail: e.to_string(),
        })?;
        out.push(event);
    }
    Ok(out)
}

pub fn preferences(events: &[LogEvent]) -> Vec<&PreferenceEntry> {
    events
        .iter()
        .filter_map(|e| match e {
            LogEvent::Preference(p) => Some(p),
            LogEvent::Selection(_) => None,
        })
        .collect()
}

pub fn study_selections(events: &[LogEvent]) -> Vec<SelectionRecord> {
    events
        .iter()
        .filter_map(|e| match e {
            LogEvent::Selection(s) => Some(s.clone()),
            LogEvent::Preference(_) => None,
        })
        .collect()
}
