//! Classification metrics and study statistics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("confusion matrix is empty")]
    EmptyMatrix,
    #[error("class index {index} out of range for {classes} classes")]
    BadClass { index: usize, classes: usize },
    #[error("invalid binomial parameters: k={k}, n={n}, p0={p0}")]
    InvalidParams { k: u64, n: u64, p0: f64 },
    #[error("study has no ratings")]
    EmptyStudy,
}

/// Rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_counts(k: usize, counts: Vec<u64>) -> Option<Self> {
        (counts.len() == k * k).then_some(Self { k, counts })
    }

    pub fn from_pairs(k: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, StatsError> {
        let mut cm = Self::new(k);
        for (t, p) in pairs {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, predicted: usize) -> Result<(), StatsError> {
        for index in [truth, predicted] {
            if index >= self.k {
                return Err(StatsError::BadClass { index, classes: self.k });
            }
        }
        self.counts[truth * self.k + predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.k + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    fn check(&self) -> Result<u64, StatsError> {
        match self.total() {
            0 => Err(StatsError::EmptyMatrix),
            n => Ok(n),
        }
    }
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64, StatsError> {
    let total = cm.check()?;
    let diag: u64 = (0..cm.k).map(|i| cm.get(i, i)).sum();
    Ok(100.0 * diag as f64 / total as f64)
}

/// Per-class F1 in percent; a class with no true positives, false positives
/// or false negatives scores 0.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Result<Vec<f64>, StatsError> {
    cm.check()?;
    Ok((0..cm.k)
        .map(|c| {
            let tp = cm.get(c, c);
            let fp: u64 = (0..cm.k).filter(|&t| t != c).map(|t| cm.get(t, c)).sum();
            let fn_: u64 = (0..cm.k).filter(|&p| p != c).map(|p| cm.get(c, p)).sum();
            let denom = 2 * tp + fp + fn_;
            if denom == 0 || tp == 0 {
                0.0
            } else {
                100.0 * (2 * tp) as f64 / denom as f64
            }
        })
        .collect())
}

/// Unweighted mean over all classes, absent ones included.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64, StatsError> {
    let f1 = per_class_f1(cm)?;
    Ok(f1.iter().sum::<f64>() / f1.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// `P(X ≥ k)`.
    #[default]
    Greater,
    /// Sum over outcomes no more likely than `k`.
    TwoSided,
}

/// Double-double arithmetic for tail terms that must stay accurate to an ulp.
#[derive(Debug, Clone, Copy)]
struct Dd(f64, f64);

impl Dd {
    fn mul(self, o: Dd) -> Dd {
        let p = self.0 * o.0;
        let e = self.0.mul_add(o.0, -p) + (self.0 * o.1 + self.1 * o.0);
        let s = p + e;
        Dd(s, e - (s - p))
    }

    fn add(self, o: Dd) -> Dd {
        let s = self.0 + o.0;
        let bb = s - self.0;
        let e = (self.0 - (s - bb)) + (o.0 - bb) + self.1 + o.1;
        let h = s + e;
        Dd(h, e - (h - s))
    }

    fn powi(self, mut n: u64) -> Dd {
        let mut base = self;
        let mut acc = Dd(1.0, 0.0);
        while n > 0 {
            if n & 1 == 1 {
                acc = acc.mul(base);
            }
            base = base.mul(base);
            n >>= 1;
        }
        acc
    }
}

fn choose_exact(n: u64, k: u64) -> Option<u128> {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 1..=k as u128 {
        c = c.checked_mul(n as u128 - k as u128 + i)? / i;
    }
    Some(c)
}

/// `ln C(n, k)` as a sum of log ratios.
pub fn ln_choose(n: u64, k: u64) -> f64 {
    let k = k.min(n - k);
    (1..=k).map(|i| (((n - k + i) as f64) / i as f64).ln()).sum()
}

fn pmf_terms(n: u64, p: f64) -> impl Fn(u64) -> Dd {
    let q = 1.0 - p;
    let (lp, lq) = (p.ln(), q.ln());
    move |i: u64| {
        let log_power = i as f64 * lp + (n - i) as f64 * lq;
        let c = choose_exact(n, i).filter(|&c| c < (1u128 << 106));
        match c {
            Some(c) if log_power > -700.0 => {
                let hi = c as f64;
                let lo = (c as i128 - hi as i128) as f64;
                Dd(hi, lo).mul(Dd(p, 0.0).powi(i)).mul(Dd(q, 0.0).powi(n - i))
            }
            _ => Dd((ln_choose(n, i) + log_power).exp(), 0.0),
        }
    }
}

/// Exact binomial tail with null success probability `p0`.
pub fn binomial_test(k: u64, n: u64, p0: f64, alternative: Alternative) -> Result<f64, StatsError> {
    if k > n || !(p0 > 0.0 && p0 < 1.0) {
        return Err(StatsError::InvalidParams { k, n, p0 });
    }
    if k == 0 && alternative == Alternative::Greater {
        return Ok(1.0);
    }
    let pmf = pmf_terms(n, p0);
    let total = match alternative {
        Alternative::Greater => (k..=n).fold(Dd(0.0, 0.0), |acc, i| acc.add(pmf(i))).0,
        Alternative::TwoSided => {
            let dk = pmf(k).0 * (1.0 + 1e-7);
            (0..=n)
                .map(&pmf)
                .filter(|d| d.0 <= dk)
                .fold(Dd(0.0, 0.0), |acc, d| acc.add(d))
                .0
        }
    };
    Ok(total.min(1.0))
}

pub const LIKERT_DIMENSIONS: [&str; 4] = ["Evidence Grounding", "Explainability", "Clinical Usefulness", "Consistency"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LikertRecord {
    pub rater_id: String,
    pub case_id: String,
    /// Model name → scores on the four dimensions, each in 1..=5.
    pub scores: BTreeMap<String, [u8; 4]>,
    pub best_model: String,
    #[serde(default)]
    pub comment: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub means: [f64; 4],
    pub ratings: usize,
    pub best_picks: usize,
    pub preference_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertSummary {
    pub records: usize,
    pub models: Vec<ModelSummary>,
}

impl LikertSummary {
    pub fn model(&self, name: &str) -> Option<&ModelSummary> {
        self.models.iter().find(|m| m.model == name)
    }
}

/// Per-model, per-dimension arithmetic means and best-model counts, models in name order.
pub fn likert_summary(records: &[LikertRecord]) -> Result<LikertSummary, StatsError> {
    if records.is_empty() {
        return Err(StatsError::EmptyStudy);
    }
    let mut sums: BTreeMap<&str, ([u64; 4], usize, usize)> = BTreeMap::new();
    for r in records {
        for (model, s) in &r.scores {
            let e = sums.entry(model.as_str()).or_default();
            for d in 0..4 {
                e.0[d] += u64::from(s[d]);
            }
            e.1 += 1;
        }
        sums.entry(r.best_model.as_str()).or_default().2 += 1;
    }
    let models = sums
        .into_iter()
        .map(|(model, (s, n, picks))| ModelSummary {
            model: model.to_string(),
            means: s.map(|v| if n == 0 { 0.0 } else { v as f64 / n as f64 }),
            ratings: n,
            best_picks: picks,
            preference_pct: 100.0 * picks as f64 / records.len() as f64,
        })
        .collect();
    Ok(LikertSummary {
        records: records.len(),
        models,
    })
}
