//! Study definition: case assignment and per-case blinding permutations.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use gaitlab_core::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum StudyError {
    #[error("study has no cases")]
    NoCases,
    #[error("study has no raters")]
    NoRaters,
    #[error("study needs at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("study supports at most 26 models, got {0}")]
    TooManyModels(usize),
    #[error("duplicate {kind} {id:?}")]
    Duplicate { kind: &'static str, id: String },
    #[error("case {case:?} lacks a rationale from model {model:?}")]
    MissingRationale { case: String, model: String },
    #[error("case {case:?} has a rationale from unknown model {model:?}")]
    UnknownModel { case: String, model: String },
    #[error("case {case:?} names model {model:?} in rater-visible text")]
    IdentityLeak { case: String, model: String },
    #[error("{0}")]
    Io(String),
    #[error("bad study file: {0}")]
    Format(String),
}

/// One case as authored: a preview reference and one rationale per model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseInput {
    pub case_id: String,
    /// Opaque URL or path to a video or skeleton preview.
    pub preview: String,
    /// Model name → rationale text.
    pub rationales: BTreeMap<String, String>,
}

/// On-disk study definition (`study.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyFile {
    pub models: Vec<String>,
    pub raters: Vec<String>,
    pub seed: u64,
    /// Null preference probability; defaults to one over the model count.
    #[serde(default)]
    pub null_p: Option<f64>,
    pub cases: Vec<CaseInput>,
}

impl StudyFile {
    pub fn load(path: &Path) -> Result<Self, StudyError> {
        let text = std::fs::read_to_string(path).map_err(|e| StudyError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| StudyError::Format(format!("{}: {e}", path.display())))
    }

    pub fn build(self) -> Result<Study, StudyError> {
        let mut study = create_study(self.cases, self.models, self.raters, self.seed)?;
        if let Some(p) = self.null_p {
            if !(p > 0.0 && p < 1.0) {
                return Err(StudyError::Format(format!("null_p {p} is outside (0, 1)")));
            }
            study.null_p = p;
        }
        Ok(study)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub cases: Vec<CaseInput>,
    pub models: Vec<String>,
    pub raters: Vec<String>,
    /// Rater → case indices in serving order.
    pub assignment: BTreeMap<String, Vec<usize>>,
    /// Per case, `blinding[c][label] = model index`.
    pub blinding: Vec<Vec<usize>>,
    pub seed: u64,
    pub null_p: f64,
}

/// Anonymous label of position `i`: `A`, `B`, ...
pub fn label(i: usize) -> String {
    char::from(b'A' + i as u8).to_string()
}

/// Permutation of `models` model indices onto labels, drawn from the seed and case id.
pub fn blinding_permutation(seed: u64, case_id: &str, models: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..models).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &format!("blind:{case_id}"))));
    perm
}

fn check_unique<'a>(kind: &'static str, ids: impl IntoIterator<Item = &'a String>) -> Result<(), StudyError> {
    let mut seen = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            return Err(StudyError::Duplicate { kind, id: id.clone() });
        }
    }
    Ok(())
}

/// Cases are shuffled with the seed, then dealt round-robin to raters.
pub fn create_study(
    cases: Vec<CaseInput>,
    models: Vec<String>,
    raters: Vec<String>,
    seed: u64,
) -> Result<Study, StudyError> {
    if cases.is_empty() {
        return Err(StudyError::NoCases);
    }
    if raters.is_empty() {
        return Err(StudyError::NoRaters);
    }
    if models.len() < 2 {
        return Err(StudyError::TooFewModels(models.len()));
    }
    if models.len() > 26 {
        return Err(StudyError::TooManyModels(models.len()));
    }
    check_unique("model", &models)?;
    check_unique("rater", &raters)?;
    check_unique("case", cases.iter().map(|c| &c.case_id))?;
    for case in &cases {
        for model in &models {
            if !case.rationales.contains_key(model) {
                return Err(StudyError::MissingRationale {
                    case: case.case_id.clone(),
                    model: model.clone(),
                });
            }
        }
        if let Some(extra) = case.rationales.keys().find(|m| !models.contains(m)) {
            return Err(StudyError::UnknownModel {
                case: case.case_id.clone(),
                model: extra.clone(),
            });
        }
        let visible = [&case.case_id, &case.preview].into_iter().chain(case.rationales.values());
        for text in visible {
            let text = text.to_lowercase();
            if let Some(m) = models.iter().find(|m| text.contains(&m.to_lowercase())) {
                return Err(StudyError::IdentityLeak {
                    case: case.case_id.clone(),
                    model: m.clone(),
                });
            }
        }
    }

    let mut order: Vec<usize> = (0..cases.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, "assignment")));
    let mut assignment: BTreeMap<String, Vec<usize>> = raters.iter().map(|r| (r.clone(), Vec::new())).collect();
    for (i, &c) in order.iter().enumerate() {
        assignment.get_mut(&raters[i % raters.len()]).expect("rater present").push(c);
    }
    let blinding = cases
        .iter()
        .map(|c| blinding_permutation(seed, &c.case_id, models.len()))
        .collect();
    Ok(Study {
        null_p: 1.0 / models.len() as f64,
        cases,
        models,
        raters,
        assignment,
        blinding,
        seed,
    })
}

impl Study {
    pub fn case_index(&self, case_id: &str) -> Option<usize> {
        self.cases.iter().position(|c| c.case_id == case_id)
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.models.len()).map(label).collect()
    }

    /// Model name behind `label` for case `case`.
    pub fn deblind(&self, case: usize, label: &str) -> Option<&str> {
        let pos = self.labels().iter().position(|l| l == label)?;
        Some(&self.models[self.blinding[case][pos]])
    }
}
