//! Subject-disjoint train/test partitioning.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Manifest;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SplitError {
    #[error("manifest has no records")]
    EmptyManifest,
    #[error("manifest has a single subject; a subject-disjoint split is impossible")]
    SingleSubject,
    #[error("test fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub test_fraction: f64,
    pub stratified: bool,
    pub train: Vec<String>,
    pub test: Vec<String>,
    /// clip id → subject id for every clip on either side.
    pub subjects: BTreeMap<String, String>,
    pub declared_train: usize,
    pub declared_test: usize,
}

impl SplitManifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("split manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn train_subjects(&self) -> BTreeSet<&str> {
        self.train.iter().filter_map(|c| self.subjects.get(c)).map(String::as_str).collect()
    }

    pub fn test_subjects(&self) -> BTreeSet<&str> {
        self.test.iter().filter_map(|c| self.subjects.get(c)).map(String::as_str).collect()
    }
}

fn subject_clips(manifest: &Manifest) -> BTreeMap<&str, Vec<&str>> {
    let mut by_subject: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in manifest.records() {
        by_subject.entry(r.subject_id.as_str()).or_default().push(r.clip_id.as_str());
    }
    by_subject
}

fn check(manifest: &Manifest, fraction: f64) -> Result<(), SplitError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(SplitError::BadFraction(fraction));
    }
    if manifest.is_empty() {
        return Err(SplitError::EmptyManifest);
    }
    Ok(())
}

fn build(manifest: &Manifest, test_subjects: &BTreeSet<&str>, seed: u64, fraction: f64, stratified: bool) -> SplitManifest {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut subjects = BTreeMap::new();
    for r in manifest.records() {
        if test_subjects.contains(r.subject_id.as_str()) {
            test.push(r.clip_id.clone());
        } else {
            train.push(r.clip_id.clone());
        }
        subjects.insert(r.clip_id.clone(), r.subject_id.clone());
    }
    SplitManifest {
        seed,
        test_fraction: fraction,
        stratified,
        declared_train: train.len(),
        declared_test: test.len(),
        train,
        test,
        subjects,
    }
}

/// Moves shuffled whole subjects to the test side until it holds at least
/// `fraction` of the clips. At least one subject always stays in training.
pub fn subject_disjoint_split(manifest: &Manifest, fraction: f64, seed: u64) -> Result<SplitManifest, SplitError> {
    check(manifest, fraction)?;
    let by_subject = subject_clips(manifest);
    if by_subject.len() < 2 {
        return Err(SplitError::SingleSubject);
    }
    let mut order: Vec<&str> = by_subject.keys().copied().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let target = fraction * manifest.len() as f64;
    let mut chosen = BTreeSet::new();
    let mut count = 0usize;
    for s in &order[..order.len() - 1] {
        if count as f64 >= target {
            break;
        }
        chosen.insert(*s);
        count += by_subject[s].len();
    }
    Ok(build(manifest, &chosen, seed, fraction, false))
}

/// Same greedy rule applied within each label stratum (subjects grouped by
/// their majority label), so every class with two or more subjects is present
/// on both sides.
pub fn stratified_subject_split(manifest: &Manifest, fraction: f64, seed: u64) -> Result<SplitManifest, SplitError> {
    check(manifest, fraction)?;
    let by_subject = subject_clips(manifest);
    if by_subject.len() < 2 {
        return Err(SplitError::SingleSubject);
    }
    let mut label_counts: BTreeMap<&str, BTreeMap<&str, usize>> = BTreeMap::new();
    for r in manifest.records() {
        *label_counts
            .entry(r.subject_id.as_str())
            .or_default()
            .entry(r.label.as_str())
            .or_default() += 1;
    }
    let mut strata: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (subject, counts) in &label_counts {
        let label = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(l, _)| *l)
            .expect("subject has clips");
        strata.entry(label).or_default().push(subject);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = BTreeSet::new();
    for subjects in strata.values() {
        if subjects.len() < 2 {
            continue;
        }
        let mut order = subjects.clone();
        order.shuffle(&mut rng);
        let total: usize = order.iter().map(|s| by_subject[s].len()).sum();
        let target = fraction * total as f64;
        let mut count = 0usize;
        for s in &order[..order.len() - 1] {
            if count as f64 >= target {
                break;
            }
            chosen.insert(*s);
            count += by_subject[s].len();
        }
    }
    if chosen.is_empty() {
        return subject_disjoint_split(manifest, fraction, seed);
    }
    Ok(build(manifest, &chosen, seed, fraction, true))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitViolation {
    SharedSubject(String),
    MissingClip(String),
    DuplicateClip(String),
    UnknownClip(String),
    SubjectMismatch { clip: String },
    CountMismatch { side: String, declared: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitReport {
    pub passed: bool,
    pub train_clips: usize,
    pub test_clips: usize,
    pub train_subjects: usize,
    pub test_subjects: usize,
    pub violations: Vec<SplitViolation>,
}

/// Checks subject disjointness, exact coverage and declared counts against the
/// manifest's own clip→subject mapping.
pub fn verify_split(split: &SplitManifest, manifest: &Manifest) -> SplitReport {
    let mut violations = Vec::new();
    let mut seen = BTreeSet::new();
    let mut train_subjects = BTreeSet::new();
    let mut test_subjects = BTreeSet::new();
    for (clips, subjects) in [(&split.train, &mut train_subjects), (&split.test, &mut test_subjects)] {
        for clip in clips {
            if !seen.insert(clip.as_str()) {
                violations.push(SplitViolation::DuplicateClip(clip.clone()));
            }
            match manifest.get(clip) {
                Some(r) => {
                    subjects.insert(r.subject_id.clone());
                    if split.subjects.get(clip) != Some(&r.subject_id) {
                        violations.push(SplitViolation::SubjectMismatch { clip: clip.clone() });
                    }
                }
                None => violations.push(SplitViolation::UnknownClip(clip.clone())),
            }
        }
    }
    for r in manifest.records() {
        if !seen.contains(r.clip_id.as_str()) {
            violations.push(SplitViolation::MissingClip(r.clip_id.clone()));
        }
    }
    for s in train_subjects.intersection(&test_subjects) {
        violations.push(SplitViolation::SharedSubject(s.clone()));
    }
    for (side, declared, actual) in [
        ("train", split.declared_train, split.train.len()),
        ("test", split.declared_test, split.test.len()),
    ] {
        if declared != actual {
            violations.push(SplitViolation::CountMismatch {
                side: side.into(),
                declared,
                actual,
            });
        }
    }
    SplitReport {
        passed: violations.is_empty(),
        train_clips: split.train.len(),
        test_clips: split.test.len(),
        train_subjects: train_subjects.len(),
        test_subjects: test_subjects.len(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ManifestRecord, SourceTag, Taxonomy};

    fn manifest(sizes: &[usize]) -> Manifest {
        let mut records = Vec::new();
        for (s, &n) in sizes.iter().enumerate() {
            for c in 0..n {
                records.push(ManifestRecord {
                    clip_id: format!("S{s:03}_c{c}"),
                    subject_id: format!("S{s:03}"),
                    label: "Normal".into(),
                    source: SourceTag::Synth,
                    path: format!("clips/S{s:03}_c{c}.skel"),
                });
            }
        }
        Manifest::new(records, &Taxonomy::default()).unwrap()
    }

    #[test]
    fn two_subjects_half() {
        let m = manifest(&[3, 3]);
        let s = subject_disjoint_split(&m, 0.5, 1).unwrap();
        assert_eq!(s.train_subjects().len(), 1);
        assert_eq!(s.test_subjects().len(), 1);
        assert!(verify_split(&s, &m).passed);
    }

    #[test]
    fn errors() {
        assert_eq!(subject_disjoint_split(&manifest(&[4]), 0.2, 0), Err(SplitError::SingleSubject));
        assert_eq!(subject_disjoint_split(&manifest(&[]), 0.2, 0), Err(SplitError::EmptyManifest));
        assert_eq!(subject_disjoint_split(&manifest(&[1, 1]), 1.0, 0), Err(SplitError::BadFraction(1.0)));
    }

    #[test]
    fn injected_violation_names_subject() {
        let m = manifest(&[2, 2, 2, 2]);
        let mut s = subject_disjoint_split(&m, 0.25, 3).unwrap();
        let moved = s.train.remove(0);
        let subject = s.subjects[&moved].clone();
        s.test.push(moved);
        s.declared_train -= 1;
        s.declared_test += 1;
        let report = verify_split(&s, &m);
        assert!(!report.passed);
        assert_eq!(report.violations, vec![SplitViolation::SharedSubject(subject)]);
    }

    #[test]
    fn json_round_trip() {
        let m = manifest(&[2, 3, 1]);
        let s = subject_disjoint_split(&m, 0.3, 9).unwrap();
        assert_eq!(SplitManifest::from_json(&s.to_json()).unwrap(), s);
    }
}
