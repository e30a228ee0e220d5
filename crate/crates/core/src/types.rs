//! Domain types for skeleton sequences, frame features and dataset manifests.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of a SKEL pose vector.
pub const SKEL_DIM: usize = 46;

/// Label used by clips that carry no class.
pub const UNLABELED: &str = "unlabeled";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TypeError {
    #[error("channel table must have {SKEL_DIM} entries, got {0}")]
    ChannelCount(usize),
    #[error("duplicate channel {segment}.{channel}")]
    DuplicateChannel { segment: String, channel: String },
    #[error("channel {segment}.{channel} has an empty range [{min}, {max}]")]
    EmptyRange {
        segment: String,
        channel: String,
        min: f64,
        max: f64,
    },
    #[error("angle {value} of channel {channel} is not finite or outside its range")]
    AngleOutOfRange { channel: usize, value: f64 },
    #[error("taxonomy needs at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("duplicate class name {0:?}")]
    DuplicateClass(String),
    #[error("frame indices must be strictly increasing (frame {prev} followed by {next})")]
    NonMonotonicFrames { prev: u64, next: u64 },
    #[error("fps must be positive and finite, got {0}")]
    BadFps(f64),
    #[error("sequence has no frames")]
    Empty,
}

/// One row of a [`ChannelTable`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub segment: String,
    pub channel: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
}

impl ChannelSpec {
    pub fn key(&self) -> (&str, &str) {
        (&self.segment, &self.channel)
    }
}

/// Maps the 46 positions of a pose vector onto named (segment, channel) pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelTable {
    name: String,
    entries: Vec<ChannelSpec>,
}

impl ChannelTable {
    pub fn new(name: impl Into<String>, entries: Vec<ChannelSpec>) -> Result<Self, TypeError> {
        if entries.len() != SKEL_DIM {
            return Err(TypeError::ChannelCount(entries.len()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            if !seen.insert((e.segment.clone(), e.channel.clone())) {
                return Err(TypeError::DuplicateChannel {
                    segment: e.segment.clone(),
                    channel: e.channel.clone(),
                });
            }
            if !(e.min < e.max) {
                return Err(TypeError::EmptyRange {
                    segment: e.segment.clone(),
                    channel: e.channel.clone(),
                    min: e.min,
                    max: e.max,
                });
            }
        }
        Ok(Self {
            name: name.into(),
            entries,
        })
    }

    /// The default SKEL layout: pelvis, both legs, lumbar/thorax/head, both arms.
    pub fn skel46() -> Self {
        const LEG: [(&str, &str); 7] = [
            ("Hip", "flex"),
            ("Hip", "add"),
            ("Hip", "rot"),
            ("Knee", "flex"),
            ("Ankle", "dorsiflex"),
            ("Subtalar", "inv"),
            ("Toe", "flex"),
        ];
        const ARM: [(&str, &str); 10] = [
            ("Scapula", "abd"),
            ("Scapula", "elev"),
            ("Scapula", "uprot"),
            ("Shoulder", "flex"),
            ("Shoulder", "add"),
            ("Shoulder", "rot"),
            ("Elbow", "flex"),
            ("Forearm", "pron"),
            ("Wrist", "flex"),
            ("Wrist", "dev"),
        ];
        let mut rows: Vec<(String, &str)> = ["tilt", "list", "rot"]
            .iter()
            .map(|ch| ("Pelvis".to_string(), *ch))
            .collect();
        for side in ["R", "L"] {
            rows.extend(LEG.iter().map(|(seg, ch)| (format!("{side}.{seg}"), *ch)));
        }
        for seg in ["Lumbar", "Thorax", "Head"] {
            rows.extend(["bend", "ext", "twist"].iter().map(|ch| (seg.to_string(), *ch)));
        }
        for side in ["R", "L"] {
            rows.extend(ARM.iter().map(|(seg, ch)| (format!("{side}.{seg}"), *ch)));
        }
        let entries = rows
            .into_iter()
            .map(|(segment, channel)| ChannelSpec {
                segment,
                channel: channel.to_string(),
                unit: "deg".to_string(),
                min: -180.0,
                max: 180.0,
            })
            .collect();
        Self::new("skel46", entries).expect("default table is valid")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn entries(&self) -> &[ChannelSpec] {
        &self.entries
    }

    pub fn index_of(&self, segment: &str, channel: &str) -> Option<usize> {
        self.entries
            .iter()
            .position(|e| e.segment == segment && e.channel == channel)
    }

    /// Parses the plain-text table format: a `table <name>` line followed by
    /// 46 `<segment> <channel> <unit> <min> <max>` lines. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self, crate::io::ParseError> {
        use crate::io::ParseError;
        let mut name = None;
        let mut entries = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let bad = |why: &str| ParseError::MalformedRecord {
                line: lineno + 1,
                reason: why.to_string(),
            };
            if name.is_none() {
                match fields.as_slice() {
                    ["table", n] => {
                        name = Some(n.to_string());
                        continue;
                    }
                    _ => return Err(bad("expected `table <name>` header")),
                }
            }
            let [segment, channel, unit, min, max] = fields.as_slice() else {
                return Err(bad("expected `<segment> <channel> <unit> <min> <max>`"));
            };
            let min: f64 = min.parse().map_err(|_| bad("min is not a number"))?;
            let max: f64 = max.parse().map_err(|_| bad("max is not a number"))?;
            entries.push(ChannelSpec {
                segment: segment.to_string(),
                channel: channel.to_string(),
                unit: unit.to_string(),
                min,
                max,
            });
        }
        let name = name.ok_or(ParseError::EmptySequence)?;
        Ok(Self::new(name, entries)?)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("table {}\n", self.name);
        for e in &self.entries {
            out.push_str(&format!("{} {} {} {} {}\n", e.segment, e.channel, e.unit, e.min, e.max));
        }
        out
    }
}

impl Default for ChannelTable {
    fn default() -> Self {
        Self::skel46()
    }
}

/// A single pose sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SkelFrame {
    pub index: u64,
    pub angles: [f64; SKEL_DIM],
}

impl SkelFrame {
    pub fn new(index: u64, angles: [f64; SKEL_DIM], table: &ChannelTable) -> Result<Self, TypeError> {
        for (i, (&a, spec)) in angles.iter().zip(table.entries()).enumerate() {
            if !a.is_finite() || a < spec.min || a > spec.max {
                return Err(TypeError::AngleOutOfRange { channel: i, value: a });
            }
        }
        Ok(Self { index, angles })
    }

    pub fn angle(&self, table: &ChannelTable, segment: &str, channel: &str) -> Option<f64> {
        table.index_of(segment, channel).map(|i| self.angles[i])
    }
}

/// A clip's joint-angle trajectory plus its metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct SkelSequence {
    pub subject_id: String,
    pub clip_id: String,
    pub label: String,
    pub fps: f64,
    pub channel_table: String,
    frames: Vec<SkelFrame>,
}

impl SkelSequence {
    pub fn new(
        subject_id: impl Into<String>,
        clip_id: impl Into<String>,
        label: impl Into<String>,
        fps: f64,
        channel_table: impl Into<String>,
        frames: Vec<SkelFrame>,
    ) -> Result<Self, TypeError> {
        if !(fps.is_finite() && fps > 0.0) {
            return Err(TypeError::BadFps(fps));
        }
        if frames.is_empty() {
            return Err(TypeError::Empty);
        }
        for w in frames.windows(2) {
            if w[1].index <= w[0].index {
                return Err(TypeError::NonMonotonicFrames {
                    prev: w[0].index,
                    next: w[1].index,
                });
            }
        }
        Ok(Self {
            subject_id: subject_id.into(),
            clip_id: clip_id.into(),
            label: label.into(),
            fps,
            channel_table: channel_table.into(),
            frames,
        })
    }

    pub fn frames(&self) -> &[SkelFrame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Picks `count` frames at indices `round(i·(N−1)/(count−1))`.
    ///
    /// Sampled frames are renumbered `0..count` and `fps` is rescaled so that
    /// the sampled clip spans the same duration as the source.
    pub fn sample_frames(&self, count: usize) -> SkelSequence {
        let positions = sample_positions(self.frames.len(), count);
        let frames = positions
            .iter()
            .enumerate()
            .map(|(i, &p)| SkelFrame {
                index: i as u64,
                angles: self.frames[p].angles,
            })
            .collect();
        let n = self.frames.len();
        let fps = if count > 1 && n > 1 {
            self.fps * (count - 1) as f64 / (n - 1) as f64
        } else {
            self.fps
        };
        SkelSequence {
            subject_id: self.subject_id.clone(),
            clip_id: self.clip_id.clone(),
            label: self.label.clone(),
            fps,
            channel_table: self.channel_table.clone(),
            frames,
        }
    }

    /// Per-channel time series (frame-major access is the default layout).
    pub fn channel_series(&self, channel: usize) -> Vec<f64> {
        self.frames.iter().map(|f| f.angles[channel]).collect()
    }
}

/// Uniformly spaced source positions `round(i·(n−1)/(count−1))`, rounding halves up.
pub fn sample_positions(n: usize, count: usize) -> Vec<usize> {
    assert!(n >= 1 && count >= 1, "sample_positions needs n >= 1 and count >= 1");
    if count == 1 {
        return vec![0];
    }
    let span = (n - 1) as u64;
    let denom = (count - 1) as u64;
    (0..count as u64)
        .map(|i| ((2 * i * span + denom) / (2 * denom)) as usize)
        .collect()
}

/// Frame-level visual features, one row per sampled frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    pub clip_id: String,
    rows: usize,
    dim: usize,
    values: Vec<f64>,
}

impl FeatureSequence {
    pub fn new(clip_id: impl Into<String>, rows: usize, dim: usize, values: Vec<f64>) -> Option<Self> {
        if values.len() != rows * dim || values.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Self {
            clip_id: clip_id.into(),
            rows,
            dim,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.values[t * self.dim..(t + 1) * self.dim]
    }
}

/// Ordered class names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    classes: Vec<String>,
}

impl Taxonomy {
    pub fn new(classes: Vec<String>) -> Result<Self, TypeError> {
        if classes.len() < 2 {
            return Err(TypeError::TooFewClasses(classes.len()));
        }
        let mut seen = HashSet::new();
        for c in &classes {
            if !seen.insert(c.as_str()) {
                return Err(TypeError::DuplicateClass(c.clone()));
            }
        }
        Ok(Self { classes })
    }

    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.classes[idx]
    }

    pub fn accepts_label(&self, label: &str) -> bool {
        label == UNLABELED || self.index_of(label).is_some()
    }
}

impl Default for Taxonomy {
    /// The eight-class gait taxonomy in benchmark column order.
    fn default() -> Self {
        Self::new(
            [
                "DCM",
                "Myopathic",
                "Abnormal",
                "Cerebral Palsy",
                "Parkinson's",
                "Normal",
                "Style",
                "Exercise",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        )
        .expect("default taxonomy is valid")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceTag {
    Gavd,
    Dcm,
    Synth,
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SourceTag::Gavd => "GAVD",
            SourceTag::Dcm => "DCM",
            SourceTag::Synth => "SYNTH",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub subject_id: String,
    pub label: String,
    pub source: SourceTag,
    pub path: String,
}

/// The clip registry of a dataset.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    records: Vec<ManifestRecord>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestRecord>, taxonomy: &Taxonomy) -> Result<Self, crate::io::ParseError> {
        use crate::io::ParseError;
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.clip_id.as_str()) {
                return Err(ParseError::DuplicateClip(r.clip_id.clone()));
            }
            if taxonomy.index_of(&r.label).is_none() {
                return Err(ParseError::UnknownLabel(r.label.clone()));
            }
        }
        Ok(Self { records })
    }

    pub fn records(&self) -> &[ManifestRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, clip_id: &str) -> Option<&ManifestRecord> {
        self.records.iter().find(|r| r.clip_id == clip_id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_covers_pelvis_spine_and_limbs() {
        let t = ChannelTable::skel46();
        assert_eq!(t.entries().len(), SKEL_DIM);
        for (seg, ch) in [
            ("Pelvis", "tilt"),
            ("Pelvis", "list"),
            ("Lumbar", "ext"),
            ("Thorax", "twist"),
            ("R.Hip", "flex"),
            ("L.Knee", "flex"),
            ("R.Ankle", "dorsiflex"),
            ("L.Shoulder", "flex"),
            ("R.Elbow", "flex"),
        ] {
            assert!(t.index_of(seg, ch).is_some(), "{seg}.{ch}");
        }
    }

    #[test]
    fn table_text_round_trip() {
        let t = ChannelTable::skel46();
        let back = ChannelTable::parse(&t.to_text()).unwrap();
        assert_eq!(back, t);
    }

    #[test]
    fn duplicate_channel_rejected() {
        let mut entries = ChannelTable::skel46().entries().to_vec();
        entries[1] = entries[0].clone();
        assert!(matches!(
            ChannelTable::new("x", entries),
            Err(TypeError::DuplicateChannel { .. })
        ));
    }

    #[test]
    fn frame_range_enforced() {
        let t = ChannelTable::skel46();
        let mut a = [0.0; SKEL_DIM];
        a[5] = 181.0;
        assert!(SkelFrame::new(0, a, &t).is_err());
        a[5] = f64::NAN;
        assert!(SkelFrame::new(0, a, &t).is_err());
    }

    #[test]
    fn sample_positions_examples() {
        let p = sample_positions(64, 32);
        assert_eq!(p.len(), 32);
        assert_eq!(p[0], 0);
        assert_eq!(p[31], 63);
        // i·63/31 rounded, evaluated directly
        for (i, &pos) in p.iter().enumerate() {
            let exact = i as f64 * 63.0 / 31.0;
            assert_eq!(pos, (exact + 0.5).floor() as usize);
        }
        assert_eq!(sample_positions(5, 3), vec![0, 2, 4]);
        assert_eq!(sample_positions(32, 32), (0..32).collect::<Vec<_>>());
        assert_eq!(sample_positions(10, 1), vec![0]);
        assert_eq!(sample_positions(2, 5), vec![0, 0, 1, 1, 1]);
    }

    #[test]
    fn taxonomy_default_order() {
        let t = Taxonomy::default();
        assert_eq!(t.len(), 8);
        assert_eq!(t.name(0), "DCM");
        assert_eq!(t.index_of("Parkinson's"), Some(4));
        assert!(t.accepts_label(UNLABELED));
        assert!(Taxonomy::new(vec!["a".into()]).is_err());
        assert!(Taxonomy::new(vec!["a".into(), "a".into()]).is_err());
    }
}
