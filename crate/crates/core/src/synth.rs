//! Synthetic gait cohort with constructed ground-truth events.
//!
//! Each leg follows a warped phase `φ(u)`: the stance part `u ∈ [0, s)` maps to
//! `[0, π)` and swing to `[π, 2π)`. Hip flexion is `off + A·cos φ` and knee
//! flexion `off + A·(1 − cos φ)/2`, so the forward ankle excursion is monotone
//! in `cos φ`: heel strike falls exactly at `u = 0` and toe-off at `u = s`.
//! The left leg lags the right by `δ = (1 − asymmetry)/2` of a stride.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::gait::asymmetry_index;
use crate::io::{store_feature_sequence, write_manifest, write_skeleton_sequence};
use crate::types::{
    ChannelTable, FeatureSequence, Manifest, ManifestRecord, SkelFrame, SkelSequence, SourceTag, Taxonomy, SKEL_DIM,
};
use crate::visual::StubVisualEncoder;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Kinematic signature of one class. Angles in degrees, cadence in steps/min.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Archetype {
    pub class: String,
    pub cadence: f64,
    /// Stance share of the stride, in (0, 1).
    pub stance: f64,
    /// 0 for symmetric gait; positive values shorten the left step.
    pub asymmetry: f64,
    pub hip_amp: f64,
    pub hip_offset: f64,
    pub knee_amp: f64,
    pub knee_offset: f64,
    pub ankle_amp: f64,
    pub ankle_offset: f64,
    pub arm_amp: f64,
    pub elbow_offset: f64,
    pub pelvis_tilt_amp: f64,
    pub pelvis_list_amp: f64,
    pub pelvis_rot_amp: f64,
    pub trunk_bend_amp: f64,
    pub trunk_twist_amp: f64,
    /// Negative values flex the trunk forward.
    pub trunk_ext_offset: f64,
}

impl Default for Archetype {
    fn default() -> Self {
        Self {
            class: "Normal".into(),
            cadence: 110.0,
            stance: 0.6,
            asymmetry: 0.0,
            hip_amp: 20.0,
            hip_offset: 5.0,
            knee_amp: 55.0,
            knee_offset: 5.0,
            ankle_amp: 10.0,
            ankle_offset: 0.0,
            arm_amp: 15.0,
            elbow_offset: 20.0,
            pelvis_tilt_amp: 3.0,
            pelvis_list_amp: 4.0,
            pelvis_rot_amp: 5.0,
            trunk_bend_amp: 2.0,
            trunk_twist_amp: 4.0,
            trunk_ext_offset: 0.0,
        }
    }
}

impl Archetype {
    fn with(class: &str, cadence: f64, tweak: impl FnOnce(&mut Archetype)) -> Self {
        let mut a = Archetype {
            class: class.into(),
            cadence,
            ..Default::default()
        };
        tweak(&mut a);
        a
    }

    /// Default desk cohort. Normal/Exercise and Abnormal/DCM share every
    /// amplitude and differ only in cadence; Myopathic differs from Normal
    /// only in frontal and transverse channels plus a moderate cadence shift.
    pub fn defaults() -> Vec<Archetype> {
        let impaired = |a: &mut Archetype| {
            a.hip_amp = 14.0;
            a.knee_amp = 36.0;
            a.ankle_amp = 5.0;
            a.arm_amp = 9.0;
            a.stance = 0.64;
            a.pelvis_list_amp = 6.0;
        };
        vec![
            Archetype::with("DCM", 160.0, impaired),
            Archetype::with("Myopathic", 125.0, |a| {
                a.pelvis_list_amp = 14.0;
                a.pelvis_rot_amp = 9.0;
                a.trunk_bend_amp = 10.0;
            }),
            Archetype::with("Abnormal", 90.0, impaired),
            Archetype::with("Cerebral Palsy", 120.0, |a| {
                a.hip_offset = 25.0;
                a.hip_amp = 17.0;
                a.knee_offset = 30.0;
                a.knee_amp = 38.0;
                a.ankle_offset = 10.0;
                a.asymmetry = 0.15;
                a.stance = 0.65;
            }),
            Archetype::with("Parkinson's", 135.0, |a| {
                a.hip_amp = 10.0;
                a.knee_amp = 26.0;
                a.ankle_amp = 4.0;
                a.arm_amp = 3.0;
                a.trunk_ext_offset = -15.0;
                a.stance = 0.66;
            }),
            Archetype::with("Normal", 110.0, |_| {}),
            Archetype::with("Style", 112.0, |a| {
                a.arm_amp = 35.0;
                a.trunk_twist_amp = 12.0;
            }),
            Archetype::with("Exercise", 175.0, |_| {}),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub fps: f64,
    pub frames_per_clip: usize,
    pub subjects_per_class: usize,
    pub clips_per_subject: usize,
    /// Gaussian angle noise, degrees.
    pub noise_deg: f64,
    /// Relative spread of per-subject amplitude scaling.
    pub amplitude_jitter: f64,
    /// Relative spread of per-subject cadence.
    pub cadence_jitter: f64,
    pub feature_rows: usize,
    pub feature_dim: usize,
    pub encoder_seed: u64,
    pub off_plane_visibility: f64,
    /// Scale of the per-subject constant added to every feature row.
    pub background_sigma: f64,
    pub visual_noise: f64,
    pub archetypes: Vec<Archetype>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            fps: 60.0,
            frames_per_clip: 320,
            subjects_per_class: 16,
            clips_per_subject: 3,
            noise_deg: 1.0,
            amplitude_jitter: 0.08,
            cadence_jitter: 0.03,
            feature_rows: 32,
            feature_dim: 64,
            encoder_seed: 0x5EED,
            off_plane_visibility: 0.25,
            background_sigma: 0.0,
            visual_noise: 0.02,
            archetypes: Archetype::defaults(),
        }
    }
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self, SynthError> {
        let spec: SynthSpec = serde_json::from_str(text).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| Err(SynthError::InvalidSpec(m.to_string()));
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return bad("fps must be positive");
        }
        if self.frames_per_clip < 2 || self.subjects_per_class == 0 || self.clips_per_subject == 0 {
            return bad("counts must be positive (at least 2 frames per clip)");
        }
        if self.feature_rows == 0 || self.feature_dim == 0 {
            return bad("feature shape must be positive");
        }
        for v in [
            self.noise_deg,
            self.amplitude_jitter,
            self.cadence_jitter,
            self.background_sigma,
            self.visual_noise,
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad("noise and jitter scales must be finite and non-negative");
            }
        }
        if self.archetypes.is_empty() {
            return bad("no archetypes");
        }
        for a in &self.archetypes {
            if !(a.cadence.is_finite() && a.cadence > 0.0) {
                return bad("archetype cadence must be positive");
            }
            if !(a.stance > 0.0 && a.stance < 1.0) {
                return bad("stance fraction must lie in (0, 1)");
            }
            if !(a.asymmetry > -1.0 && a.asymmetry < 1.0) {
                return bad("asymmetry must lie in (-1, 1)");
            }
        }
        Ok(())
    }

    pub fn taxonomy(&self) -> Result<Taxonomy, SynthError> {
        Taxonomy::new(self.archetypes.iter().map(|a| a.class.clone()).collect())
            .map_err(|e| SynthError::InvalidSpec(e.to_string()))
    }
}

/// Per-clip realization parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipParams {
    pub cadence: f64,
    /// Right-leg stride phase at frame 0, in [0, 1).
    pub phase: f64,
    pub amp_scale: f64,
    pub noise_deg: f64,
    pub frames: usize,
    pub fps: f64,
}

/// Constructed events and nominal metrics of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub clip_id: String,
    pub subject_id: String,
    pub label: String,
    pub fps: f64,
    pub frames: usize,
    /// Frames `[lo, hi]` in which constructed events are listed.
    pub interior: (u64, u64),
    pub heel_strikes_left: Vec<u64>,
    pub heel_strikes_right: Vec<u64>,
    pub toe_offs_left: Vec<u64>,
    pub toe_offs_right: Vec<u64>,
    pub cadence: f64,
    pub step_time_left: f64,
    pub step_time_right: f64,
    pub swing_pct_left: f64,
    pub swing_pct_right: f64,
    pub double_support_pct: f64,
    pub asymmetry_index: f64,
}

fn warp(u: f64, s: f64) -> f64 {
    if u < s {
        PI * u / s
    } else {
        PI + PI * (u - s) / (1.0 - s)
    }
}

/// Overlap length of `[a, a+la)` and `[b, b+lb)` on the unit circle.
fn circular_overlap(a: f64, la: f64, b: f64, lb: f64) -> f64 {
    let linear = |x0: f64, x1: f64, y0: f64, y1: f64| (x1.min(y1) - x0.max(y0)).max(0.0);
    [-1.0, 0.0, 1.0]
        .iter()
        .map(|shift| linear(a, a + la, b + shift, b + shift + lb))
        .sum()
}

struct ChannelIndex {
    table: ChannelTable,
}

impl ChannelIndex {
    fn at(&self, seg: &str, ch: &str) -> usize {
        self.table
            .index_of(seg, ch)
            .unwrap_or_else(|| panic!("synthetic generator needs channel {seg}.{ch}"))
    }
}

/// Renders one clip of `arch` and its constructed ground truth.
pub fn synth_sequence(
    arch: &Archetype,
    params: &ClipParams,
    table: &ChannelTable,
    subject_id: &str,
    clip_id: &str,
    rng: &mut ChaCha8Rng,
) -> Result<(SkelSequence, SidecarRecord), SynthError> {
    let ix = ChannelIndex { table: table.clone() };
    let stride_hz = params.cadence / 120.0;
    let s = arch.stance;
    let delta = 0.5 * (1.0 - arch.asymmetry);
    let k = params.amp_scale;
    let noise = Normal::new(0.0, params.noise_deg).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let (pt, pl, pr) = (ix.at("Pelvis", "tilt"), ix.at("Pelvis", "list"), ix.at("Pelvis", "rot"));
    let (lb, le) = (ix.at("Lumbar", "bend"), ix.at("Lumbar", "ext"));
    let (te, tt) = (ix.at("Thorax", "ext"), ix.at("Thorax", "twist"));
    let legs = ["R", "L"].map(|side| {
        (
            ix.at(&format!("{side}.Hip"), "flex"),
            ix.at(&format!("{side}.Hip"), "add"),
            ix.at(&format!("{side}.Knee"), "flex"),
            ix.at(&format!("{side}.Ankle"), "dorsiflex"),
            ix.at(&format!("{side}.Shoulder"), "flex"),
            ix.at(&format!("{side}.Elbow"), "flex"),
        )
    });

    let mut frames = Vec::with_capacity(params.frames);
    for i in 0..params.frames {
        let t = i as f64 / params.fps;
        let u_r = (t * stride_hz + params.phase).rem_euclid(1.0);
        let u_l = (u_r - delta).rem_euclid(1.0);
        let mut a = [0.0; SKEL_DIM];
        let cyc = 2.0 * PI * u_r;
        a[pt] = k * arch.pelvis_tilt_amp * (2.0 * cyc).cos();
        a[pl] = k * arch.pelvis_list_amp * cyc.sin();
        a[pr] = k * arch.pelvis_rot_amp * cyc.cos();
        a[lb] = k * arch.trunk_bend_amp * cyc.sin();
        a[le] = arch.trunk_ext_offset + k * 2.0 * (2.0 * cyc).cos();
        a[te] = 0.5 * arch.trunk_ext_offset;
        a[tt] = k * arch.trunk_twist_amp * cyc.sin();
        for (&(hip, add, knee, ankle, shoulder, elbow), u) in legs.iter().zip([u_r, u_l]) {
            let phi = warp(u, s);
            let c = phi.cos();
            a[hip] = arch.hip_offset + k * arch.hip_amp * c;
            a[add] = k * 3.0 * (2.0 * PI * u).sin();
            a[knee] = arch.knee_offset + k * arch.knee_amp * (1.0 - c) / 2.0;
            a[ankle] = arch.ankle_offset + k * arch.ankle_amp * phi.sin();
            a[shoulder] = -k * arch.arm_amp * c;
            a[elbow] = arch.elbow_offset + k * 0.5 * arch.arm_amp * (1.0 - c) / 2.0;
        }
        if params.noise_deg > 0.0 {
            a.iter_mut().for_each(|v| *v += noise.sample(rng));
        }
        let frame = SkelFrame::new(i as u64, a, table).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
        frames.push(frame);
    }
    let seq = SkelSequence::new(subject_id, clip_id, arch.class.as_str(), params.fps, table.name(), frames)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;

    let period_frames = params.fps / stride_hz;
    let margin = (0.15 * period_frames).ceil() as u64 + 3;
    let last = params.frames as u64 - 1;
    let interior = (margin, last.saturating_sub(margin));
    // Event at stride phase `offset`: t·f + phase ≡ offset (mod 1).
    let events = |offset: f64| -> Vec<u64> {
        let duration = last as f64 / params.fps;
        let k_max = (duration * stride_hz + params.phase - offset).floor() as i64 + 1;
        let k_min = (params.phase - offset).ceil() as i64 - 1;
        (k_min..=k_max)
            .map(|k| (k as f64 + offset - params.phase) / stride_hz * params.fps)
            .filter(|f| *f >= 0.0)
            .map(|f| f.round() as u64)
            .filter(|&f| f >= interior.0 && f <= interior.1)
            .collect()
    };
    let stride = 120.0 / params.cadence;
    let step_time_left = delta * stride;
    let step_time_right = (1.0 - delta) * stride;
    let sidecar = SidecarRecord {
        clip_id: clip_id.to_string(),
        subject_id: subject_id.to_string(),
        label: arch.class.clone(),
        fps: params.fps,
        frames: params.frames,
        interior,
        heel_strikes_right: events(0.0),
        toe_offs_right: events(s),
        heel_strikes_left: events(delta),
        toe_offs_left: events(delta + s),
        cadence: params.cadence,
        step_time_left,
        step_time_right,
        swing_pct_left: (1.0 - s) * 100.0,
        swing_pct_right: (1.0 - s) * 100.0,
        double_support_pct: 100.0 * circular_overlap(0.0, s, delta, s),
        asymmetry_index: asymmetry_index(step_time_left, step_time_right),
    };
    Ok((seq, sidecar))
}

/// One generated clip held in memory.
#[derive(Debug, Clone)]
pub struct SynthClip {
    pub record: ManifestRecord,
    pub sequence: SkelSequence,
    pub features: FeatureSequence,
    pub sidecar: SidecarRecord,
}

#[derive(Debug, Clone)]
pub struct Cohort {
    pub taxonomy: Taxonomy,
    pub manifest: Manifest,
    pub clips: Vec<SynthClip>,
}

fn subject_id(class_index: usize, j: usize) -> String {
    format!("S{class_index}{j:02}")
}

/// Builds the cohort in memory. Every random draw derives from `seed` and a
/// subject or clip id, so clip content does not depend on generation order.
pub fn build_cohort(spec: &SynthSpec, seed: u64) -> Result<Cohort, SynthError> {
    spec.validate()?;
    let taxonomy = spec.taxonomy()?;
    let table = ChannelTable::skel46();
    let encoder = StubVisualEncoder::new(&table, spec.feature_dim, spec.encoder_seed, spec.off_plane_visibility);
    let mut clips = Vec::new();
    for (ci, arch) in spec.archetypes.iter().enumerate() {
        for j in 0..spec.subjects_per_class {
            let subject = subject_id(ci, j);
            let mut srng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &subject));
            let amp_scale = 1.0 + spec.amplitude_jitter * srng.random_range(-1.0..=1.0);
            let cadence = arch.cadence * (1.0 + spec.cadence_jitter * srng.random_range(-1.0..=1.0));
            let bg = Normal::new(0.0, spec.background_sigma).map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
            let background: Vec<f64> = (0..spec.feature_dim).map(|_| bg.sample(&mut srng)).collect();
            for c in 0..spec.clips_per_subject {
                let clip_id = format!("{subject}_c{c}");
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &clip_id));
                let params = ClipParams {
                    cadence,
                    phase: rng.random_range(0.0..1.0),
                    amp_scale,
                    noise_deg: spec.noise_deg,
                    frames: spec.frames_per_clip,
                    fps: spec.fps,
                };
                let (sequence, sidecar) = synth_sequence(arch, &params, &table, &subject, &clip_id, &mut rng)?;
                let sampled = sequence.sample_frames(spec.feature_rows);
                let features = encoder.encode_sequence(&sampled, &background, spec.visual_noise, &mut rng);
                let record = ManifestRecord {
                    clip_id: clip_id.clone(),
                    subject_id: subject.clone(),
                    label: arch.class.clone(),
                    source: SourceTag::Synth,
                    path: format!("clips/{clip_id}.skel"),
                };
                clips.push(SynthClip {
                    record,
                    sequence,
                    features,
                    sidecar,
                });
            }
        }
    }
    let manifest = Manifest::new(clips.iter().map(|c| c.record.clone()).collect(), &taxonomy)
        .map_err(|e| SynthError::InvalidSpec(e.to_string()))?;
    Ok(Cohort {
        taxonomy,
        manifest,
        clips,
    })
}

/// Feature file path paired with a sequence path (`.skel` → `.feat`).
pub fn feature_path_for(sequence_path: &str) -> String {
    match sequence_path.strip_suffix(".skel") {
        Some(stem) => format!("{stem}.feat"),
        None => format!("{sequence_path}.feat"),
    }
}

/// Writes `manifest.jsonl`, `sidecar.jsonl`, `taxonomy.json` and `clips/<id>.{skel,feat}` under `out_dir`.
pub fn generate_synthetic_cohort(spec: &SynthSpec, seed: u64, out_dir: &Path) -> Result<Cohort, SynthError> {
    let cohort = build_cohort(spec, seed)?;
    fs::create_dir_all(out_dir.join("clips"))?;
    let mut sidecar = String::new();
    for clip in &cohort.clips {
        let mut skel = Vec::new();
        write_skeleton_sequence(&clip.sequence, &mut skel)?;
        fs::write(out_dir.join(&clip.record.path), skel)?;
        fs::write(
            out_dir.join(feature_path_for(&clip.record.path)),
            store_feature_sequence(&clip.features),
        )?;
        sidecar.push_str(&serde_json::to_string(&clip.sidecar).expect("sidecar serializes"));
        sidecar.push('\n');
    }
    let mut manifest = Vec::new();
    write_manifest(&cohort.manifest, &mut manifest)?;
    fs::write(out_dir.join("manifest.jsonl"), manifest)?;
    fs::write(out_dir.join("sidecar.jsonl"), sidecar)?;
    fs::write(
        out_dir.join("taxonomy.json"),
        serde_json::to_string(cohort.taxonomy.classes()).expect("taxonomy serializes"),
    )?;
    Ok(cohort)
}
