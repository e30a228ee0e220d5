//! Seeded stand-in for a frozen frame encoder.
//!
//! Each frame is cut into body-part "patches" (groups of channels). A patch is
//! embedded as `tanh(W_p·[x_p·vis/45; 1])` and the frame feature is the spatial
//! mean over patches. Sagittal-plane channels are fully visible; frontal and
//! transverse channels are attenuated, mimicking a side-view camera.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::types::{ChannelTable, FeatureSequence, SkelSequence};

const PATCH_GROUPS: [&[&str]; 6] = [
    &["Pelvis"],
    &["Lumbar", "Thorax", "Head"],
    &["R.Hip", "R.Knee", "R.Ankle", "R.Subtalar", "R.Toe"],
    &["L.Hip", "L.Knee", "L.Ankle", "L.Subtalar", "L.Toe"],
    &["R.Scapula", "R.Shoulder", "R.Elbow", "R.Forearm", "R.Wrist"],
    &["L.Scapula", "L.Shoulder", "L.Elbow", "L.Forearm", "L.Wrist"],
];

const SAGITTAL: [&str; 4] = ["flex", "ext", "tilt", "dorsiflex"];

#[derive(Debug, Clone)]
struct Patch {
    channels: Vec<(usize, f64)>,
    /// D × (channels + 1), row-major; the last column is the bias.
    weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct StubVisualEncoder {
    dim: usize,
    patches: Vec<Patch>,
}

impl StubVisualEncoder {
    pub fn new(table: &ChannelTable, dim: usize, seed: u64, off_plane_visibility: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let patches = PATCH_GROUPS
            .iter()
            .map(|group| {
                let channels: Vec<(usize, f64)> = table
                    .entries()
                    .iter()
                    .enumerate()
                    .filter(|(_, e)| group.contains(&e.segment.as_str()))
                    .map(|(i, e)| {
                        let vis = if SAGITTAL.contains(&e.channel.as_str()) {
                            1.0
                        } else {
                            off_plane_visibility
                        };
                        (i, vis)
                    })
                    .collect();
                let weights = (0..dim * (channels.len() + 1)).map(|_| normal.sample(&mut rng)).collect();
                Patch { channels, weights }
            })
            .filter(|p| !p.channels.is_empty())
            .collect();
        Self { dim, patches }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn encode_frame(&self, angles: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for p in &self.patches {
            let width = p.channels.len() + 1;
            let x: Vec<f64> = p.channels.iter().map(|&(i, vis)| angles[i] * vis / 45.0).collect();
            for (d, o) in out.iter_mut().enumerate() {
                let w = &p.weights[d * width..(d + 1) * width];
                let z = w[width - 1] + w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
                *o += z.tanh();
            }
        }
        let n = self.patches.len() as f64;
        out.iter_mut().for_each(|v| *v /= n);
        out
    }

    /// Encodes every frame of `seq`, then adds `background` to every row and
    /// i.i.d. Gaussian noise of scale `noise` drawn from `rng`.
    pub fn encode_sequence(
        &self,
        seq: &SkelSequence,
        background: &[f64],
        noise: f64,
        rng: &mut ChaCha8Rng,
    ) -> FeatureSequence {
        let normal = Normal::new(0.0, noise.max(0.0)).expect("finite noise scale");
        let mut values = Vec::with_capacity(seq.len() * self.dim);
        for f in seq.frames() {
            let row = self.encode_frame(&f.angles);
            for (d, v) in row.into_iter().enumerate() {
                let n = if noise > 0.0 { normal.sample(rng) } else { 0.0 };
                values.push(v + background.get(d).copied().unwrap_or(0.0) + n);
            }
        }
        FeatureSequence::new(seq.clip_id.clone(), seq.len(), self.dim, values).expect("encoder output is finite")
    }
}
