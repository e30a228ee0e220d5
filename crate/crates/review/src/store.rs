//! Append-only rating store: one JSON object per line.
//!
//! Line fields:
//! - `seq`: 0-based position in the file.
//! - `received_ms`: server time of the append, Unix milliseconds.
//! - `rater_id`, `case_id`: the rating key; unique per file.
//! - `scores`: true model name → four scores in 1..=5, dimension order
//!   Evidence Grounding, Explainability, Clinical Usefulness, Consistency.
//! - `best_model`: true model name.
//! - `comment`: free text.
//! - `labels`: the blinded labels in served order, each with its true model.

use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use gaitlab_core::LikertRecord;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("rating for rater {rater:?} case {case:?} already stored")]
    Duplicate { rater: String, case: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelEntry {
    pub label: String,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredRating {
    pub seq: u64,
    pub received_ms: u64,
    #[serde(flatten)]
    pub record: LikertRecord,
    pub labels: Vec<LabelEntry>,
}

struct Writer {
    file: Option<File>,
    keys: HashSet<(String, String)>,
}

/// Appends go through one writer lock; readers clone the current snapshot.
pub struct RatingStore {
    path: Option<PathBuf>,
    writer: Mutex<Writer>,
    snapshot: RwLock<Arc<Vec<StoredRating>>>,
}

impl RatingStore {
    /// A store that keeps ratings in memory only.
    pub fn in_memory() -> Self {
        Self::from_records(None, None, Vec::new())
    }

    /// Opens or creates `path`, rebuilding the index from existing lines.
    pub fn open(path: &Path) -> Result<Self, StoreError> {
        let io = |source| StoreError::Io {
            path: path.to_path_buf(),
            source,
        };
        let records = if path.exists() {
            read_store(path)?
        } else {
            Vec::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path).map_err(io)?;
        Ok(Self::from_records(Some(path.to_path_buf()), Some(file), records))
    }

    fn from_records(path: Option<PathBuf>, file: Option<File>, records: Vec<StoredRating>) -> Self {
        let keys = records
            .iter()
            .map(|r| (r.record.rater_id.clone(), r.record.case_id.clone()))
            .collect();
        Self {
            path,
            writer: Mutex::new(Writer { file, keys }),
            snapshot: RwLock::new(Arc::new(records)),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn snapshot(&self) -> Arc<Vec<StoredRating>> {
        self.snapshot.read().expect("snapshot lock").clone()
    }

    pub fn len(&self) -> usize {
        self.snapshot().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, rater: &str, case: &str) -> bool {
        let w = self.writer.lock().expect("writer lock");
        w.keys.contains(&(rater.to_string(), case.to_string()))
    }

    /// Appends one record; fails if its (rater, case) key is already stored.
    pub fn append(&self, record: LikertRecord, labels: Vec<LabelEntry>, received_ms: u64) -> Result<StoredRating, StoreError> {
        let mut w = self.writer.lock().expect("writer lock");
        let key = (record.rater_id.clone(), record.case_id.clone());
        if w.keys.contains(&key) {
            return Err(StoreError::Duplicate {
                rater: key.0,
                case: key.1,
            });
        }
        let current = self.snapshot();
        let stored = StoredRating {
            seq: current.len() as u64,
            received_ms,
            record,
            labels,
        };
        if let Some(file) = w.file.as_mut() {
            let mut line = serde_json::to_string(&stored).expect("rating serializes");
            line.push('\n');
            let path = self.path.clone().unwrap_or_default();
            file.write_all(line.as_bytes())
                .and_then(|_| file.sync_data())
                .map_err(|source| StoreError::Io { path, source })?;
        }
        w.keys.insert(key);
        let mut next = Vec::with_capacity(current.len() + 1);
        next.extend(current.iter().cloned());
        next.push(stored.clone());
        *self.snapshot.write().expect("snapshot lock") = Arc::new(next);
        Ok(stored)
    }
}

/// Parses every line of a store file.
pub fn read_store(path: &Path) -> Result<Vec<StoredRating>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out: Vec<StoredRating> = Vec::new();
    let mut keys = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let corrupt = |message: String| StoreError::Corrupt {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: StoredRating = serde_json::from_str(line).map_err(|e| corrupt(e.to_string()))?;
        if r.seq != out.len() as u64 {
            return Err(corrupt(format!("seq {} out of order", r.seq)));
        }
        if !keys.insert((r.record.rater_id.clone(), r.record.case_id.clone())) {
            return Err(corrupt("duplicate rating key".into()));
        }
        out.push(r);
    }
    Ok(out)
}
