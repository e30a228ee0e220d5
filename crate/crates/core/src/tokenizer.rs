//! Biomechanical tokenization: joint-angle frames rendered as structured text,
//! wrapped in the clinical instruction prompt and cut to a token budget.
//!
//! A frame renders as
//!
//! ```text
//! Frame 3: [Pelvis] tilt=12.3° list=-2.0° [R.Knee] flex=41.2°
//! ```
//!
//! Values are fixed-point with round-half-to-even on the exact binary value.
//! A token is a maximal run of non-whitespace characters.

use thiserror::Error;

use crate::types::{sample_positions, ChannelTable, SkelFrame, SkelSequence, Taxonomy};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TokenizerError {
    #[error("channel {segment}.{channel} is not in channel table {table:?}")]
    UnknownChannel {
        segment: String,
        channel: String,
        table: String,
    },
    #[error("no class definition for {0:?}")]
    MissingClassDefinition(String),
    #[error("bad tokenizer config line {line}: {reason}")]
    BadConfig { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerConfig {
    /// (segment, channel) pairs printed per frame, in print order.
    pub channel_subset: Vec<(String, String)>,
    pub decimals: usize,
    pub max_tokens: usize,
    /// Preamble placed before the class definitions.
    pub instruction_text: String,
    /// (class name, kinematic descriptor) lines of the instruction prompt.
    pub class_definitions: Vec<(String, String)>,
    /// When the rendered frames exceed `max_tokens`, drop whole frames uniformly
    /// before falling back to hard truncation.
    pub subsample_over_budget: bool,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        let channel_subset = [
            ("Pelvis", "tilt"),
            ("Pelvis", "list"),
            ("Pelvis", "rot"),
            ("Lumbar", "ext"),
            ("Thorax", "ext"),
            ("R.Hip", "flex"),
            ("R.Knee", "flex"),
            ("R.Ankle", "dorsiflex"),
            ("L.Hip", "flex"),
            ("L.Knee", "flex"),
            ("L.Ankle", "dorsiflex"),
            ("R.Shoulder", "flex"),
        ]
        .iter()
        .map(|(s, c)| (s.to_string(), c.to_string()))
        .collect();
        Self {
            channel_subset,
            decimals: 1,
            max_tokens: 1024,
            instruction_text: DEFAULT_INSTRUCTION.to_string(),
            class_definitions: default_class_definitions(),
            subsample_over_budget: true,
        }
    }
}

const DEFAULT_INSTRUCTION: &str = "You are a clinical gait analyst. Classify the walking pattern into one of \
the gait classes defined below using the per-frame joint angles that follow, and cite the kinematic evidence \
for your decision.";

fn default_class_definitions() -> Vec<(String, String)> {
    [
        ("DCM", "spastic broad-based gait with imbalance and increased cadence"),
        ("Myopathic", "waddling gait with exaggerated pelvic list and lateral trunk sway"),
        ("Abnormal", "irregular gait with reduced knee flexion and uneven step timing"),
        ("Cerebral Palsy", "crouch gait with persistent knee flexion and equinus ankle"),
        ("Parkinson's", "shuffling steps, reduced arm swing, flexed trunk posture"),
        ("Normal", "symmetric gait with typical cadence, full joint excursion and reciprocal arm swing"),
        ("Style", "non-pathological stylistic variation such as exaggerated arm swing or trunk rotation"),
        ("Exercise", "athletic locomotion such as brisk walking with high cadence"),
    ]
    .iter()
    .map(|(c, d)| (c.to_string(), d.to_string()))
    .collect()
}

impl TokenizerConfig {
    /// Parses the key/value config format:
    ///
    /// ```text
    /// channels = Pelvis.tilt, Pelvis.list, R.Knee.flex
    /// decimals = 1
    /// max_tokens = 1024
    /// subsample_over_budget = true
    /// instruction = You are a clinical gait analyst.
    /// define Parkinson's = shuffling steps, reduced arm swing
    /// ```
    ///
    /// Keys not present keep their defaults; any `define` line replaces the
    /// whole default definition list.
    pub fn parse(text: &str) -> Result<Self, TokenizerError> {
        let mut cfg = Self::default();
        let mut definitions = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| TokenizerError::BadConfig { line: i + 1, reason };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad("expected `key = value`".into()))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "channels" => {
                    cfg.channel_subset = value
                        .split(',')
                        .map(|item| {
                            let item = item.trim();
                            item.rsplit_once('.')
                                .map(|(s, c)| (s.to_string(), c.to_string()))
                                .ok_or_else(|| bad(format!("channel {item:?} is not `Segment.channel`")))
                        })
                        .collect::<Result<_, _>>()?;
                }
                "decimals" => cfg.decimals = value.parse().map_err(|_| bad(format!("bad decimals {value:?}")))?,
                "max_tokens" => {
                    cfg.max_tokens = value.parse().map_err(|_| bad(format!("bad max_tokens {value:?}")))?;
                    if cfg.max_tokens == 0 {
                        return Err(bad("max_tokens must be at least 1".into()));
                    }
                }
                "subsample_over_budget" => {
                    cfg.subsample_over_budget = value.parse().map_err(|_| bad(format!("bad boolean {value:?}")))?
                }
                "instruction" => cfg.instruction_text = value.to_string(),
                _ => match key.strip_prefix("define ") {
                    Some(class) => definitions.push((class.trim().to_string(), value.to_string())),
                    None => return Err(bad(format!("unknown key {key:?}"))),
                },
            }
        }
        if !definitions.is_empty() {
            cfg.class_definitions = definitions;
        }
        Ok(cfg)
    }

    /// Inverse of `parse` for configs whose texts hold no line breaks.
    pub fn to_text(&self) -> String {
        let channels: Vec<String> = self.channel_subset.iter().map(|(s, c)| format!("{s}.{c}")).collect();
        let mut out = format!(
            "channels = {}\ndecimals = {}\nmax_tokens = {}\nsubsample_over_budget = {}\ninstruction = {}\n",
            channels.join(", "),
            self.decimals,
            self.max_tokens,
            self.subsample_over_budget,
            self.instruction_text
        );
        for (class, descriptor) in &self.class_definitions {
            out.push_str(&format!("define {class} = {descriptor}\n"));
        }
        out
    }

    /// Checks the subset against `table` and returns the resolved channel indices.
    pub fn resolve(&self, table: &ChannelTable) -> Result<Vec<usize>, TokenizerError> {
        self.channel_subset
            .iter()
            .map(|(s, c)| {
                table.index_of(s, c).ok_or_else(|| TokenizerError::UnknownChannel {
                    segment: s.clone(),
                    channel: c.clone(),
                    table: table.name().to_string(),
                })
            })
            .collect()
    }

    /// Whitespace tokens produced by one rendered frame.
    pub fn tokens_per_frame(&self) -> usize {
        let mut segments = 0;
        let mut last: Option<&str> = None;
        for (s, _) in &self.channel_subset {
            if last != Some(s.as_str()) {
                segments += 1;
                last = Some(s);
            }
        }
        2 + segments + self.channel_subset.len()
    }
}

/// Fixed-point text with `decimals` digits; a negative value that rounds to zero prints unsigned.
pub fn format_fixed(value: f64, decimals: usize) -> String {
    let s = format!("{value:.decimals$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

pub fn render_frame(frame: &SkelFrame, table: &ChannelTable, cfg: &TokenizerConfig) -> Result<String, TokenizerError> {
    let indices = cfg.resolve(table)?;
    Ok(render_resolved(frame, &indices, cfg))
}

fn render_resolved(frame: &SkelFrame, indices: &[usize], cfg: &TokenizerConfig) -> String {
    let mut out = format!("Frame {}:", frame.index);
    let mut last: Option<&str> = None;
    for ((segment, channel), &idx) in cfg.channel_subset.iter().zip(indices) {
        if last != Some(segment.as_str()) {
            out.push_str(" [");
            out.push_str(segment);
            out.push(']');
            last = Some(segment);
        }
        out.push(' ');
        out.push_str(channel);
        out.push('=');
        out.push_str(&format_fixed(frame.angles[idx], cfg.decimals));
        out.push('°');
    }
    out
}

/// The rendered biomechanical text of one clip after budget enforcement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BioText {
    /// Rendered frame lines, after any budget subsampling.
    pub lines: Vec<String>,
    /// Tokens kept after truncation.
    pub tokens: Vec<String>,
    pub token_count: usize,
    /// Frames rendered before subsampling.
    pub frames_in: usize,
}

impl BioText {
    pub fn empty() -> Self {
        Self {
            lines: Vec::new(),
            tokens: Vec::new(),
            token_count: 0,
            frames_in: 0,
        }
    }

    pub fn is_truncated(&self) -> bool {
        let total: usize = self.lines.iter().map(|l| l.split_whitespace().count()).sum();
        total > self.token_count
    }

    /// The kept tokens laid out one frame per line.
    pub fn text(&self) -> String {
        let mut remaining = self.token_count;
        let mut out = Vec::new();
        for line in &self.lines {
            if remaining == 0 {
                break;
            }
            let n = line.split_whitespace().count();
            if n <= remaining {
                out.push(line.clone());
                remaining -= n;
            } else {
                let kept: Vec<&str> = line.split_whitespace().take(remaining).collect();
                out.push(kept.join(" "));
                remaining = 0;
            }
        }
        out.join("\n")
    }
}

pub fn render_sequence(seq: &SkelSequence, table: &ChannelTable, cfg: &TokenizerConfig) -> Result<BioText, TokenizerError> {
    let indices = cfg.resolve(table)?;
    let frames = seq.frames();
    let per_frame = cfg.tokens_per_frame();
    let mut keep: Vec<usize> = (0..frames.len()).collect();
    if cfg.subsample_over_budget && per_frame * frames.len() > cfg.max_tokens {
        let fit = (cfg.max_tokens / per_frame).max(1);
        keep = sample_positions(frames.len(), fit);
    }
    let lines: Vec<String> = keep
        .iter()
        .map(|&i| render_resolved(&frames[i], &indices, cfg))
        .collect();
    let tokens = tokenize_and_truncate(&lines.join("\n"), cfg.max_tokens);
    Ok(BioText {
        token_count: tokens.len(),
        tokens,
        lines,
        frames_in: frames.len(),
    })
}

pub fn tokenize_and_truncate(text: &str, max_tokens: usize) -> Vec<String> {
    text.split_whitespace().take(max_tokens).map(str::to_string).collect()
}

/// Instruction preamble, one definition line per taxonomy class, then the frame lines.
pub fn assemble_prompt(bio: &BioText, taxonomy: &Taxonomy, cfg: &TokenizerConfig) -> Result<String, TokenizerError> {
    let mut parts = vec![cfg.instruction_text.clone()];
    for class in taxonomy.classes() {
        let (_, descriptor) = cfg
            .class_definitions
            .iter()
            .find(|(c, _)| c == class)
            .ok_or_else(|| TokenizerError::MissingClassDefinition(class.clone()))?;
        parts.push(format!("{class}: {descriptor}"));
    }
    let body = bio.text();
    if !body.is_empty() {
        parts.push(body);
    }
    Ok(parts.join("\n"))
}
