//! Kinematic gait events and the clinical metrics that ground rationale text.
//!
//! Events come from a planar (sagittal) forward-kinematics chain: heel strike
//! is a prominent maximum of the forward ankle excursion relative to the hip,
//! toe-off a prominent minimum.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::format_fixed;
use crate::types::{ChannelTable, SkelFrame, SkelSequence, Taxonomy};

/// Moving-average window applied to the excursion signal.
pub const SMOOTHING_WINDOW: usize = 5;
/// Minimum extremum prominence as a fraction of the signal range.
pub const MIN_PROMINENCE: f64 = 0.10;
/// Step-time asymmetry (percent) below which the rationale reports none.
pub const ASYMMETRY_THRESHOLD_PCT: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GaitError {
    #[error("channel {0} required for forward kinematics is missing from the channel table")]
    MissingChannel(String),
    #[error("too few gait events: {left} left and {right} right heel strikes (need 3 per side)")]
    TooShort { left: usize, right: usize },
    #[error("degenerate event timing: {0}")]
    DegenerateTiming(String),
    #[error("class {0:?} is not in the taxonomy")]
    UnknownClass(String),
    #[error("segment lengths must be positive")]
    BadLengths,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentLengths {
    pub thigh: f64,
    pub shank: f64,
    pub foot: f64,
    pub pelvis_height: f64,
}

impl SegmentLengths {
    pub fn new(thigh: f64, shank: f64, foot: f64, pelvis_height: f64) -> Result<Self, GaitError> {
        let s = Self {
            thigh,
            shank,
            foot,
            pelvis_height,
        };
        if [thigh, shank, foot, pelvis_height].iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(s)
        } else {
            Err(GaitError::BadLengths)
        }
    }
}

impl Default for SegmentLengths {
    fn default() -> Self {
        Self {
            thigh: 0.45,
            shank: 0.43,
            foot: 0.20,
            pelvis_height: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    fn prefix(self) -> &'static str {
        match self {
            Side::Left => "L",
            Side::Right => "R",
        }
    }
}

/// Planar positions (x forward, y up) of one leg, in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LegPoints {
    pub knee: [f64; 2],
    pub ankle: [f64; 2],
    pub toe: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SagittalPose {
    pub hip: [f64; 2],
    pub left: LegPoints,
    pub right: LegPoints,
}

#[derive(Debug, Clone, Copy)]
struct LegChannels {
    hip: usize,
    knee: usize,
    ankle: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct LegIndex {
    left: LegChannels,
    right: LegChannels,
}

impl LegIndex {
    pub fn resolve(table: &ChannelTable) -> Result<Self, GaitError> {
        let leg = |side: Side| -> Result<LegChannels, GaitError> {
            let find = |seg: &str, ch: &str| {
                let segment = format!("{}.{seg}", side.prefix());
                table
                    .index_of(&segment, ch)
                    .ok_or_else(|| GaitError::MissingChannel(format!("{segment}.{ch}")))
            };
            Ok(LegChannels {
                hip: find("Hip", "flex")?,
                knee: find("Knee", "flex")?,
                ankle: find("Ankle", "dorsiflex")?,
            })
        };
        Ok(Self {
            left: leg(Side::Left)?,
            right: leg(Side::Right)?,
        })
    }
}

/// Hip flexion swings the thigh forward from vertical, knee flexion rotates
/// the shank back relative to the thigh, dorsiflexion lifts the foot (neutral:
/// pointing forward) toward the shank.
pub fn forward_kinematics_sagittal(
    frame: &SkelFrame,
    table: &ChannelTable,
    lengths: &SegmentLengths,
) -> Result<SagittalPose, GaitError> {
    let idx = LegIndex::resolve(table)?;
    Ok(fk_resolved(frame, &idx, lengths))
}

fn fk_resolved(frame: &SkelFrame, idx: &LegIndex, lengths: &SegmentLengths) -> SagittalPose {
    let hip = [0.0, lengths.pelvis_height];
    let leg = |ch: &LegChannels| {
        let thigh = frame.angles[ch.hip].to_radians();
        let shank = thigh - frame.angles[ch.knee].to_radians();
        let foot = shank + frame.angles[ch.ankle].to_radians();
        let knee = [hip[0] + lengths.thigh * thigh.sin(), hip[1] - lengths.thigh * thigh.cos()];
        let ankle = [knee[0] + lengths.shank * shank.sin(), knee[1] - lengths.shank * shank.cos()];
        let toe = [ankle[0] + lengths.foot * foot.cos(), ankle[1] + lengths.foot * foot.sin()];
        LegPoints { knee, ankle, toe }
    };
    SagittalPose {
        hip,
        left: leg(&idx.left),
        right: leg(&idx.right),
    }
}

/// Detected event frames (source frame indices), sorted per list.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GaitEvents {
    pub heel_strikes_left: Vec<u64>,
    pub heel_strikes_right: Vec<u64>,
    pub toe_offs_left: Vec<u64>,
    pub toe_offs_right: Vec<u64>,
}

impl GaitEvents {
    fn side(&self, side: Side) -> (&[u64], &[u64]) {
        match side {
            Side::Left => (&self.heel_strikes_left, &self.toe_offs_left),
            Side::Right => (&self.heel_strikes_right, &self.toe_offs_right),
        }
    }
}

/// Centered moving average; the window shrinks at the ends.
pub fn moving_average(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            x[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Local maxima (plateaus resolve to their middle sample) with their topographic prominence.
pub fn peaks_with_prominence(x: &[f64]) -> Vec<(usize, f64)> {
    let n = x.len();
    let mut out = Vec::new();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead < n && x[ahead] == x[i] {
                ahead += 1;
            }
            if ahead < n && x[ahead] < x[i] {
                let peak = (i + ahead - 1) / 2;
                out.push((peak, prominence(x, peak)));
            }
            i = ahead;
        } else {
            i += 1;
        }
    }
    out
}

fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for &v in x[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

fn prominent_extrema(x: &[f64], maxima: bool) -> Vec<usize> {
    let signal: Vec<f64> = if maxima { x.to_vec() } else { x.iter().map(|v| -v).collect() };
    let (lo, hi) = signal
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return Vec::new();
    }
    peaks_with_prominence(&signal)
        .into_iter()
        .filter(|&(_, p)| p >= MIN_PROMINENCE * range)
        .map(|(i, _)| i)
        .collect()
}

/// Enforces strike/toe-off alternation: of two consecutive events of the same
/// kind, only the more extreme one survives.
fn alternate(signal: &[f64], strikes: Vec<usize>, toe_offs: Vec<usize>) -> (Vec<usize>, Vec<usize>) {
    let mut merged: Vec<(usize, bool)> = strikes
        .into_iter()
        .map(|i| (i, true))
        .chain(toe_offs.into_iter().map(|i| (i, false)))
        .collect();
    merged.sort_unstable();
    let mut kept: Vec<(usize, bool)> = Vec::with_capacity(merged.len());
    for ev in merged {
        match kept.last_mut() {
            Some(last) if last.1 == ev.1 => {
                let better = if ev.1 {
                    signal[ev.0] > signal[last.0]
                } else {
                    signal[ev.0] < signal[last.0]
                };
                if better {
                    *last = ev;
                }
            }
            _ => kept.push(ev),
        }
    }
    let strikes = kept.iter().filter(|e| e.1).map(|e| e.0).collect();
    let toe_offs = kept.iter().filter(|e| !e.1).map(|e| e.0).collect();
    (strikes, toe_offs)
}

/// Forward ankle excursion (relative to the hip) for each side, unsmoothed.
pub fn ankle_excursion(
    seq: &SkelSequence,
    table: &ChannelTable,
    lengths: &SegmentLengths,
) -> Result<(Vec<f64>, Vec<f64>), GaitError> {
    let idx = LegIndex::resolve(table)?;
    let mut left = Vec::with_capacity(seq.len());
    let mut right = Vec::with_capacity(seq.len());
    for f in seq.frames() {
        let pose = fk_resolved(f, &idx, lengths);
        left.push(pose.left.ankle[0] - pose.hip[0]);
        right.push(pose.right.ankle[0] - pose.hip[0]);
    }
    Ok((left, right))
}

pub fn detect_gait_events(
    seq: &SkelSequence,
    table: &ChannelTable,
    lengths: &SegmentLengths,
) -> Result<GaitEvents, GaitError> {
    let (left, right) = ankle_excursion(seq, table, lengths)?;
    let frame_ids: Vec<u64> = seq.frames().iter().map(|f| f.index).collect();
    let per_side = |raw: &[f64]| {
        let s = moving_average(raw, SMOOTHING_WINDOW);
        let (hs, to) = alternate(&s, prominent_extrema(&s, true), prominent_extrema(&s, false));
        (
            hs.into_iter().map(|i| frame_ids[i]).collect::<Vec<_>>(),
            to.into_iter().map(|i| frame_ids[i]).collect::<Vec<_>>(),
        )
    };
    let (heel_strikes_left, toe_offs_left) = per_side(&left);
    let (heel_strikes_right, toe_offs_right) = per_side(&right);
    if heel_strikes_left.len() < 3 || heel_strikes_right.len() < 3 {
        return Err(GaitError::TooShort {
            left: heel_strikes_left.len(),
            right: heel_strikes_right.len(),
        });
    }
    Ok(GaitEvents {
        heel_strikes_left,
        heel_strikes_right,
        toe_offs_left,
        toe_offs_right,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaitMetrics {
    /// Steps per minute.
    pub cadence: f64,
    /// Mean time from a right heel strike to the next left one, seconds.
    pub step_time_left: f64,
    /// Mean time from a left heel strike to the next right one, seconds.
    pub step_time_right: f64,
    pub double_support_pct: f64,
    pub double_support_time: f64,
    pub swing_pct_left: f64,
    pub swing_pct_right: f64,
    pub asymmetry_index: f64,
    pub n_steps: usize,
    pub heel_strikes_left: usize,
    pub heel_strikes_right: usize,
    pub toe_offs_left: usize,
    pub toe_offs_right: usize,
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

/// Times from each `from` strike to the next `to` strike, when that lands before the following `from` strike.
fn step_times(from: &[u64], to: &[u64]) -> Vec<u64> {
    let mut out = Vec::new();
    for (j, &a) in from.iter().enumerate() {
        if let Some(&b) = to.iter().find(|&&b| b > a) {
            if from.get(j + 1).is_none_or(|&next| b < next) {
                out.push(b - a);
            }
        }
    }
    out
}

/// Stance state of one side over time, known only between its first and last event.
struct StanceTrack {
    events: Vec<(u64, bool)>,
}

impl StanceTrack {
    fn new(strikes: &[u64], toe_offs: &[u64]) -> Self {
        let mut events: Vec<(u64, bool)> = strikes
            .iter()
            .map(|&f| (f, true))
            .chain(toe_offs.iter().map(|&f| (f, false)))
            .collect();
        events.sort_unstable();
        Self { events }
    }

    fn covers(&self, a: u64, b: u64) -> bool {
        match (self.events.first(), self.events.last()) {
            (Some(first), Some(last)) => first.0 <= a && b <= last.0,
            _ => false,
        }
    }

    /// Length of `[a, b]` spent in stance; requires `covers(a, b)`.
    fn stance_within(&self, a: u64, b: u64) -> u64 {
        let mut total = 0;
        let mut in_stance = false;
        let mut cursor = a;
        for &(t, strike) in &self.events {
            if t <= a {
                in_stance = strike;
                continue;
            }
            if t >= b {
                break;
            }
            if in_stance {
                total += t - cursor;
            }
            cursor = t;
            in_stance = strike;
        }
        if in_stance {
            total += b - cursor;
        }
        total
    }
}

struct CycleStats {
    swing: Vec<f64>,
    double_support: Vec<f64>,
    double_support_frames: Vec<f64>,
}

fn cycle_stats(strikes: &[u64], toe_offs: &[u64], other: &StanceTrack) -> CycleStats {
    let mut stats = CycleStats {
        swing: Vec::new(),
        double_support: Vec::new(),
        double_support_frames: Vec::new(),
    };
    for w in strikes.windows(2) {
        let (h0, h1) = (w[0], w[1]);
        let duration = (h1 - h0) as f64;
        let Some(&to) = toe_offs.iter().find(|&&t| t > h0 && t < h1) else {
            continue;
        };
        stats.swing.push((h1 - to) as f64 / duration * 100.0);
        if other.covers(h0, h1) {
            let overlap = other.stance_within(h0, to) as f64;
            stats.double_support.push(overlap / duration * 100.0);
            stats.double_support_frames.push(overlap);
        }
    }
    stats
}

pub fn compute_metrics(events: &GaitEvents, fps: f64) -> Result<GaitMetrics, GaitError> {
    if !(fps.is_finite() && fps > 0.0) {
        return Err(GaitError::DegenerateTiming(format!("fps {fps}")));
    }
    let (hl, tl) = events.side(Side::Left);
    let (hr, tr) = events.side(Side::Right);
    if hl.len() < 3 || hr.len() < 3 {
        return Err(GaitError::TooShort {
            left: hl.len(),
            right: hr.len(),
        });
    }
    let mut all: Vec<(u64, Side)> = hl
        .iter()
        .map(|&f| (f, Side::Left))
        .chain(hr.iter().map(|&f| (f, Side::Right)))
        .collect();
    all.sort_unstable_by_key(|e| e.0);
    let n_steps = all.len();
    // Close the window on the starting side so it spans whole strides; an
    // asymmetric gait would otherwise bias the rate by a partial step.
    let first_side = all[0].1;
    while all.len() > 2 && all[all.len() - 1].1 != first_side {
        all.pop();
    }
    let elapsed = (all[all.len() - 1].0 - all[0].0) as f64 / fps;
    if !(elapsed > 0.0) {
        return Err(GaitError::DegenerateTiming("all heel strikes share one frame".into()));
    }
    let cadence = 60.0 * (all.len() - 1) as f64 / elapsed;

    let to_secs = |v: Vec<u64>| v.into_iter().map(|f| f as f64 / fps).collect::<Vec<_>>();
    let step_time_left = mean(&to_secs(step_times(hr, hl)))
        .ok_or_else(|| GaitError::DegenerateTiming("no right-to-left step".into()))?;
    let step_time_right = mean(&to_secs(step_times(hl, hr)))
        .ok_or_else(|| GaitError::DegenerateTiming("no left-to-right step".into()))?;
    for w in hl.windows(2).chain(hr.windows(2)) {
        if w[1] <= w[0] {
            return Err(GaitError::DegenerateTiming("non-positive cycle duration".into()));
        }
    }

    let left = cycle_stats(hl, tl, &StanceTrack::new(hr, tr));
    let right = cycle_stats(hr, tr, &StanceTrack::new(hl, tl));
    let swing_pct_left =
        mean(&left.swing).ok_or_else(|| GaitError::DegenerateTiming("no complete left cycle with toe-off".into()))?;
    let swing_pct_right =
        mean(&right.swing).ok_or_else(|| GaitError::DegenerateTiming("no complete right cycle with toe-off".into()))?;
    let ds: Vec<f64> = left.double_support.iter().chain(&right.double_support).copied().collect();
    let ds_frames: Vec<f64> = left
        .double_support_frames
        .iter()
        .chain(&right.double_support_frames)
        .copied()
        .collect();
    let double_support_pct = mean(&ds).unwrap_or(0.0);
    let double_support_time = mean(&ds_frames).unwrap_or(0.0) / fps;

    Ok(GaitMetrics {
        cadence,
        step_time_left,
        step_time_right,
        double_support_pct,
        double_support_time,
        swing_pct_left,
        swing_pct_right,
        asymmetry_index: asymmetry_index(step_time_left, step_time_right),
        n_steps,
        heel_strikes_left: hl.len(),
        heel_strikes_right: hr.len(),
        toe_offs_left: tl.len(),
        toe_offs_right: tr.len(),
    })
}

/// `|L − R| / (0.5·(L + R)) · 100`.
pub fn asymmetry_index(left: f64, right: f64) -> f64 {
    let denom = 0.5 * (left + right);
    if denom > 0.0 {
        (left - right).abs() / denom * 100.0
    } else {
        0.0
    }
}

/// Deterministic evidence paragraph for a predicted class.
pub fn render_rationale(metrics: &GaitMetrics, predicted_class: &str, taxonomy: &Taxonomy) -> Result<String, GaitError> {
    if taxonomy.index_of(predicted_class).is_none() {
        return Err(GaitError::UnknownClass(predicted_class.to_string()));
    }
    let f2 = |v: f64| format_fixed(v, 2);
    let mut s = Vec::new();
    s.push(format!("Predicted gait class: {predicted_class}."));

    let pace = if metrics.cadence > 130.0 {
        "high"
    } else if metrics.cadence < 90.0 {
        "low"
    } else {
        "typical"
    };
    s.push(format!(
        "The patient walks at a {pace} cadence of {} steps per minute.",
        f2(metrics.cadence)
    ));

    let (l, r) = (metrics.step_time_left, metrics.step_time_right);
    if metrics.asymmetry_index < ASYMMETRY_THRESHOLD_PCT {
        s.push(format!(
            "Step times are {}s (left) and {}s (right), with no significant asymmetry (asymmetry index {}%).",
            f2(l),
            f2(r),
            f2(metrics.asymmetry_index)
        ));
    } else {
        let (shorter, longer, a, b) = if l < r {
            ("left", "right", l, r)
        } else {
            ("right", "left", r, l)
        };
        s.push(format!(
            "The {shorter} step time is significantly shorter than the {longer} ({}s vs. {}s, asymmetry index {}%), \
suggesting an imbalance in limb propulsion.",
            f2(a),
            f2(b),
            f2(metrics.asymmetry_index)
        ));
    }

    let ds_note = if metrics.double_support_pct > 30.0 {
        "an increased "
    } else {
        ""
    };
    s.push(format!(
        "Double support occupies {ds_note}{}% of the gait cycle ({}s per cycle).",
        f2(metrics.double_support_pct),
        f2(metrics.double_support_time)
    ));
    s.push(format!(
        "Swing phase is {}% of the cycle on the left and {}% on the right.",
        f2(metrics.swing_pct_left),
        f2(metrics.swing_pct_right)
    ));

    let (tl, tr) = (metrics.toe_offs_left, metrics.toe_offs_right);
    let toe_clause = match tl.cmp(&tr) {
        std::cmp::Ordering::Less => format!("more toe-offs on the right side ({tr}) compared to the left ({tl})"),
        std::cmp::Ordering::Greater => format!("more toe-offs on the left side ({tl}) compared to the right ({tr})"),
        std::cmp::Ordering::Equal => format!("an equal number of toe-offs on each side ({tl})"),
    };
    s.push(format!(
        "Across {} steps the detector found {} left and {} right heel strikes, with {toe_clause}.",
        metrics.n_steps, metrics.heel_strikes_left, metrics.heel_strikes_right
    ));
    Ok(s.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::SKEL_DIM;

    fn frame(table: &ChannelTable, vals: &[(&str, &str, f64)]) -> SkelFrame {
        let mut a = [0.0; SKEL_DIM];
        for (s, c, v) in vals {
            a[table.index_of(s, c).unwrap()] = *v;
        }
        SkelFrame::new(0, a, table).unwrap()
    }

    fn close(a: [f64; 2], b: [f64; 2], tol: f64) -> bool {
        (a[0] - b[0]).abs() < tol && (a[1] - b[1]).abs() < tol
    }

    #[test]
    fn fk_neutral_pose() {
        let t = ChannelTable::skel46();
        let l = SegmentLengths::default();
        let p = forward_kinematics_sagittal(&frame(&t, &[]), &t, &l).unwrap();
        assert!(close(p.right.ankle, [0.0, 1.0 - 0.88], 1e-12));
        assert!(close(p.right.toe, [0.20, 1.0 - 0.88], 1e-12));
        assert_eq!(p.left, p.right);
    }

    #[test]
    fn fk_hip_flexed_90() {
        let t = ChannelTable::skel46();
        let l = SegmentLengths::default();
        let p = forward_kinematics_sagittal(&frame(&t, &[("R.Hip", "flex", 90.0)]), &t, &l).unwrap();
        assert!(close(p.right.knee, [0.45, 1.0], 1e-12));
        assert!(close(p.right.ankle, [0.88, 1.0], 1e-12));
        assert!(close(p.left.ankle, [0.0, 0.12], 1e-12));
    }

    #[test]
    fn fk_missing_channel() {
        let mut entries = ChannelTable::skel46().entries().to_vec();
        let k = entries.iter().position(|e| e.segment == "L.Knee").unwrap();
        entries[k].segment = "L.Knie".into();
        let t = ChannelTable::new("renamed", entries).unwrap();
        let err = forward_kinematics_sagittal(&frame(&t, &[]), &t, &SegmentLengths::default()).unwrap_err();
        assert_eq!(err, GaitError::MissingChannel("L.Knee.flex".into()));
    }

    #[test]
    fn prominence_matches_hand_values() {
        let x = [0.0, 3.0, 1.0, 2.0, 0.5, 4.0, 0.0];
        let p = peaks_with_prominence(&x);
        assert_eq!(p, vec![(1, 2.5), (3, 1.0), (5, 4.0)]);
        let plateau = [0.0, 1.0, 1.0, 1.0, 0.0];
        assert_eq!(peaks_with_prominence(&plateau), vec![(2, 1.0)]);
    }

    #[test]
    fn moving_average_shrinks_at_edges() {
        let s = moving_average(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 5);
        assert_eq!(s, vec![2.0, 2.5, 3.0, 4.0, 4.5, 5.0]);
    }

    fn events(hl: &[u64], hr: &[u64], tl: &[u64], tr: &[u64]) -> GaitEvents {
        GaitEvents {
            heel_strikes_left: hl.to_vec(),
            heel_strikes_right: hr.to_vec(),
            toe_offs_left: tl.to_vec(),
            toe_offs_right: tr.to_vec(),
        }
    }

    #[test]
    fn regular_half_second_steps() {
        // fps 10: right strikes every 10 frames, left strikes offset by 5.
        let e = events(&[5, 15, 25, 35], &[0, 10, 20, 30], &[11, 21, 31], &[6, 16, 26, 36]);
        let m = compute_metrics(&e, 10.0).unwrap();
        assert!((m.cadence - 120.0).abs() < 1e-12);
        assert!((m.step_time_left - 0.5).abs() < 1e-12);
        assert!((m.step_time_right - 0.5).abs() < 1e-12);
        assert_eq!(m.asymmetry_index, 0.0);
        assert!((m.swing_pct_left - 40.0).abs() < 1e-12);
        assert!((m.swing_pct_right - 40.0).abs() < 1e-12);
        // stance 60% per side, offset 50% → two 10% double-support windows
        assert!((m.double_support_pct - 20.0).abs() < 1e-12);
        assert!((m.double_support_time - 0.2).abs() < 1e-12);
    }

    #[test]
    fn asymmetric_step_times() {
        let e = events(&[50, 181, 312], &[0, 131, 262], &[], &[]);
        let err = compute_metrics(&e, 100.0).unwrap_err();
        assert!(matches!(err, GaitError::DegenerateTiming(_)));
        let e = events(&[50, 181, 312], &[0, 131, 262, 393], &[100, 231, 362], &[80, 211, 342]);
        let m = compute_metrics(&e, 100.0).unwrap();
        assert!((m.step_time_left - 0.5).abs() < 1e-12);
        assert!((m.step_time_right - 0.81).abs() < 1e-12);
        let expected = (0.5f64 - 0.81).abs() / (0.5 * (0.5 + 0.81)) * 100.0;
        assert!((m.asymmetry_index - expected).abs() < 1e-9);
        assert!((m.asymmetry_index - 47.33).abs() < 0.01);
    }

    #[test]
    fn too_few_strikes() {
        let e = events(&[5, 15], &[0, 10, 20], &[], &[]);
        assert!(matches!(compute_metrics(&e, 10.0), Err(GaitError::TooShort { left: 2, right: 3 })));
    }

    #[test]
    fn rationale_clauses() {
        let tax = Taxonomy::default();
        let e = events(&[5, 15, 25, 35], &[0, 10, 20, 30], &[11, 21, 31], &[6, 16, 26, 36]);
        let mut m = compute_metrics(&e, 10.0).unwrap();
        let text = render_rationale(&m, "Normal", &tax).unwrap();
        assert!(text.contains("no significant asymmetry"), "{text}");
        assert_eq!(text, render_rationale(&m, "Normal", &tax).unwrap());

        m.cadence = 173.68;
        m.step_time_left = 0.5;
        m.step_time_right = 0.81;
        m.asymmetry_index = asymmetry_index(0.5, 0.81);
        m.toe_offs_left = 3;
        m.toe_offs_right = 4;
        let text = render_rationale(&m, "Myopathic", &tax).unwrap();
        assert!(text.contains("high cadence of 173.68 steps per minute"), "{text}");
        assert!(text.contains("left step time is significantly shorter than the right (0.50s vs. 0.81s"), "{text}");
        assert!(text.contains("more toe-offs on the right side (4) compared to the left (3)"), "{text}");
        assert_eq!(
            render_rationale(&m, "Hopping", &tax),
            Err(GaitError::UnknownClass("Hopping".into()))
        );
    }
}
