//! Rater-facing operations over a study and its rating store.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use gaitlab_core::stats::{binomial_test, likert_summary, Alternative, LIKERT_DIMENSIONS};
use gaitlab_core::{LikertRecord, StatsError};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{LabelEntry, RatingStore, StoreError, StoredRating};
use crate::study::{Study, StudyError, StudyFile};

pub const STUDY_FILE: &str = "study.json";
pub const STORE_FILE: &str = "ratings.jsonl";

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("unknown rater")]
    UnknownRater,
    #[error("rater has rated every assigned case")]
    StudyComplete,
    #[error("case {0:?} is already rated by this rater")]
    DuplicateRating(String),
    #[error("case {submitted:?} is not the current case {current:?}")]
    WrongCase { submitted: String, current: Option<String> },
    #[error("{0}")]
    IncompleteScores(String),
    #[error("no ratings stored yet")]
    EmptyStudy,
    #[error(transparent)]
    Study(#[from] StudyError),
    #[error(transparent)]
    Store(StoreError),
    #[error(transparent)]
    Stats(StatsError),
}

impl ServiceError {
    /// Stable error name used in response bodies and CLI output.
    pub fn name(&self) -> &'static str {
        match self {
            Self::UnknownRater => "UnknownRater",
            Self::StudyComplete => "StudyComplete",
            Self::DuplicateRating(_) => "DuplicateRating",
            Self::WrongCase { .. } => "WrongCase",
            Self::IncompleteScores(_) => "IncompleteScores",
            Self::EmptyStudy => "EmptyStudy",
            Self::Study(_) => "StudyError",
            Self::Store(_) => "StoreError",
            Self::Stats(_) => "StatsError",
        }
    }
}

impl From<StoreError> for ServiceError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Duplicate { case, .. } => Self::DuplicateRating(case),
            other => Self::Store(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    pub label: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertSchema {
    pub dimensions: Vec<String>,
    pub min: u8,
    pub max: u8,
}

/// What a rater sees: no model identity anywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlindedCase {
    pub case_id: String,
    pub preview: String,
    pub panels: Vec<Panel>,
    pub schema: LikertSchema,
    /// Cases already rated by this rater.
    pub rated: usize,
    pub assigned: usize,
}

/// Rating as submitted, keyed by blinded label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingSubmission {
    pub case_id: String,
    /// Label → four scores.
    pub scores: BTreeMap<String, Vec<i64>>,
    pub best: String,
    #[serde(default)]
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub case_id: String,
    pub seq: u64,
    pub rated: usize,
    pub assigned: usize,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelStat {
    pub model: String,
    pub means: [f64; 4],
    pub ratings: usize,
    pub best_picks: usize,
    pub preference_pct: f64,
    /// One-sided binomial p-value of `best_picks` out of all rated cases.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub dimensions: Vec<String>,
    pub rated: usize,
    pub total: usize,
    pub null_p: f64,
    pub models: Vec<ModelStat>,
    /// Model with the most best-model picks; ties go to the earlier name.
    pub top_model: String,
}

/// Aggregates stored ratings; used by the service and for offline recomputation.
pub fn summarize(records: &[StoredRating], total: usize, null_p: f64) -> Result<StudySummary, ServiceError> {
    let likert: Vec<LikertRecord> = records.iter().map(|r| r.record.clone()).collect();
    let summary = likert_summary(&likert).map_err(|e| match e {
        StatsError::EmptyStudy => ServiceError::EmptyStudy,
        other => ServiceError::Stats(other),
    })?;
    let n = summary.records as u64;
    let models = summary
        .models
        .into_iter()
        .map(|m| {
            let p_value = binomial_test(m.best_picks as u64, n, null_p, Alternative::Greater).map_err(ServiceError::Stats)?;
            Ok(ModelStat {
                model: m.model,
                means: m.means,
                ratings: m.ratings,
                best_picks: m.best_picks,
                preference_pct: m.preference_pct,
                p_value,
            })
        })
        .collect::<Result<Vec<_>, ServiceError>>()?;
    let top_model = models
        .iter()
        .fold(None::<&ModelStat>, |best, m| match best {
            Some(b) if b.best_picks >= m.best_picks => Some(b),
            _ => Some(m),
        })
        .map(|m| m.model.clone())
        .unwrap_or_default();
    Ok(StudySummary {
        dimensions: LIKERT_DIMENSIONS.iter().map(|d| d.to_string()).collect(),
        rated: records.len(),
        total,
        null_p,
        models,
        top_model,
    })
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as u64).unwrap_or(0)
}

pub struct ReviewService {
    pub study: Study,
    pub store: RatingStore,
}

impl ReviewService {
    pub fn new(study: Study, store: RatingStore) -> Self {
        Self { study, store }
    }

    /// Loads `study.json` and opens `ratings.jsonl` in `dir`.
    pub fn open_dir(dir: &Path) -> Result<Self, ServiceError> {
        let study = StudyFile::load(&dir.join(STUDY_FILE))?.build()?;
        let store = RatingStore::open(&dir.join(STORE_FILE))?;
        Ok(Self::new(study, store))
    }

    fn assigned(&self, rater: &str) -> Result<&[usize], ServiceError> {
        self.study
            .assignment
            .get(rater)
            .map(Vec::as_slice)
            .ok_or(ServiceError::UnknownRater)
    }

    fn progress(&self, rater: &str) -> Result<(Option<usize>, usize, usize), ServiceError> {
        let cases = self.assigned(rater)?;
        let rated = cases
            .iter()
            .filter(|&&c| self.store.contains(rater, &self.study.cases[c].case_id))
            .count();
        let current = cases
            .iter()
            .copied()
            .find(|&c| !self.store.contains(rater, &self.study.cases[c].case_id));
        Ok((current, rated, cases.len()))
    }

    pub fn next_case(&self, rater: &str) -> Result<BlindedCase, ServiceError> {
        let (current, rated, assigned) = self.progress(rater)?;
        let c = current.ok_or(ServiceError::StudyComplete)?;
        let case = &self.study.cases[c];
        let panels = self.study.blinding[c]
            .iter()
            .enumerate()
            .map(|(pos, &m)| Panel {
                label: crate::study::label(pos),
                rationale: case.rationales[&self.study.models[m]].clone(),
            })
            .collect();
        Ok(BlindedCase {
            case_id: case.case_id.clone(),
            preview: case.preview.clone(),
            panels,
            schema: LikertSchema {
                dimensions: LIKERT_DIMENSIONS.iter().map(|d| d.to_string()).collect(),
                min: 1,
                max: 5,
            },
            rated,
            assigned,
        })
    }

    fn validate(&self, sub: &RatingSubmission) -> Result<BTreeMap<String, [u8; 4]>, ServiceError> {
        let labels = self.study.labels();
        let bad = |m: String| Err(ServiceError::IncompleteScores(m));
        for key in sub.scores.keys() {
            if !labels.contains(key) {
                return bad(format!("unknown label {key:?}"));
            }
        }
        let mut out = BTreeMap::new();
        for l in &labels {
            let Some(s) = sub.scores.get(l) else {
                return bad(format!("missing scores for label {l}"));
            };
            if s.len() != LIKERT_DIMENSIONS.len() {
                return bad(format!("label {l} needs {} scores, got {}", LIKERT_DIMENSIONS.len(), s.len()));
            }
            let mut v = [0u8; 4];
            for (d, &x) in s.iter().enumerate() {
                if !(1..=5).contains(&x) {
                    return bad(format!("label {l} score {x} is outside 1..=5"));
                }
                v[d] = x as u8;
            }
            out.insert(l.clone(), v);
        }
        if !labels.contains(&sub.best) {
            return bad(format!("best pick {:?} is not a label", sub.best));
        }
        Ok(out)
    }

    /// De-blinds and appends a rating for the rater's current case.
    pub fn submit(&self, rater: &str, sub: &RatingSubmission) -> Result<Ack, ServiceError> {
        let (current, _, assigned) = self.progress(rater)?;
        if self.store.contains(rater, &sub.case_id) {
            return Err(ServiceError::DuplicateRating(sub.case_id.clone()));
        }
        let current_id = current.map(|c| self.study.cases[c].case_id.clone());
        if current_id.as_deref() != Some(sub.case_id.as_str()) {
            return Err(ServiceError::WrongCase {
                submitted: sub.case_id.clone(),
                current: current_id,
            });
        }
        let c = current.expect("current case exists");
        let by_label = self.validate(sub)?;
        let deblind = |l: &str| self.study.deblind(c, l).expect("validated label").to_string();
        let record = LikertRecord {
            rater_id: rater.to_string(),
            case_id: sub.case_id.clone(),
            scores: by_label.iter().map(|(l, s)| (deblind(l), *s)).collect(),
            best_model: deblind(&sub.best),
            comment: sub.comment.clone(),
        };
        let labels = self
            .study
            .labels()
            .iter()
            .map(|l| LabelEntry {
                label: l.clone(),
                model: deblind(l),
            })
            .collect();
        let stored = self.store.append(record, labels, now_ms())?;
        let (next, rated, _) = self.progress(rater)?;
        Ok(Ack {
            case_id: sub.case_id.clone(),
            seq: stored.seq,
            rated,
            assigned,
            complete: next.is_none(),
        })
    }

    pub fn summary(&self) -> Result<StudySummary, ServiceError> {
        summarize(&self.store.snapshot(), self.study.cases.len(), self.study.null_p)
    }
}
