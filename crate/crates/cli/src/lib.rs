//! `gaitlab`: one binary wiring tokenizer, metrics, splitting, synthesis,
//! training, evaluation and the review service.
//!
//! Exit codes: 0 success, 1 domain error (error name on stderr), 2 usage error.

mod commands;
mod error;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gaitlab_model::Ablation;
use serde::Serialize;

pub use error::CliError;

#[derive(Debug, Parser, Serialize)]
#[command(name = "gaitlab", version, about = "Gait classification pipeline tools")]
pub struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Progress output on stderr.
    #[arg(long, global = true)]
    pub verbose: bool,
    /// Machine-readable JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    /// Render a skeleton sequence into the biomechanical prompt.
    Tokenize(TokenizeArgs),
    /// Detect gait events and compute spatiotemporal metrics.
    Metrics(MetricsArgs),
    /// Rationale text for a sequence, or a per-class F1 table from predictions.
    Report(ReportArgs),
    /// Subject-disjoint train/test split of a manifest.
    Split(SplitArgs),
    /// Generate a synthetic cohort.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test side of a split.
    Eval(EvalArgs),
    /// Serve the blinded review API.
    Serve(ServeArgs),
    /// Summarize a review study from its store file.
    StudySummary(StudySummaryArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TokenizeArgs {
    #[arg(long)]
    pub seq: PathBuf,
    /// Tokenizer config in key/value form; defaults apply when omitted.
    #[arg(long)]
    pub channels: Option<PathBuf>,
    #[arg(long)]
    pub max_tokens: Option<usize>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct MetricsArgs {
    #[arg(long)]
    pub seq: PathBuf,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct ReportArgs {
    /// Sequence to explain; requires --class.
    #[arg(long, requires = "class", conflicts_with_all = ["predictions", "truth"])]
    pub seq: Option<PathBuf>,
    #[arg(long)]
    pub class: Option<String>,
    /// Predictions: JSON lines with `clip_id` and `predicted`, or an eval report.
    #[arg(long, requires = "truth")]
    pub predictions: Option<PathBuf>,
    /// Manifest holding true labels.
    #[arg(long, requires = "predictions")]
    pub truth: Option<PathBuf>,
    /// Row name in the F1 table.
    #[arg(long, default_value = "model")]
    pub name: String,
    /// CSV instead of an aligned table.
    #[arg(long)]
    pub csv: bool,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.2)]
    pub test_frac: f64,
    /// Balance labels across sides while keeping subjects disjoint.
    #[arg(long)]
    pub stratified: bool,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    /// Generator spec as JSON; defaults apply when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// Clip paths are resolved against the manifest's directory.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    #[arg(long, default_value = "full")]
    pub ablation: Ablation,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub tokenizer: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// TED queries.
    #[arg(long)]
    pub queries: Option<usize>,
    /// TED layers.
    #[arg(long)]
    pub layers: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub split: PathBuf,
    /// Manifest override; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ServeArgs {
    /// Directory holding study.json; ratings.jsonl is created beside it.
    #[arg(long)]
    pub study: PathBuf,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Token for the summary endpoint; a random one is printed when omitted.
    #[arg(long)]
    #[serde(skip)]
    pub admin_token: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct StudySummaryArgs {
    #[arg(long)]
    pub study: PathBuf,
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return if e.use_stderr() {
                let _ = write!(stderr, "{}", e.render());
                2
            } else {
                let _ = write!(stdout, "{}", e.render());
                0
            };
        }
    };
    let _ = writeln!(
        stderr,
        "config: {}",
        serde_json::to_string(&cli).expect("config serializes")
    );
    match commands::dispatch(&cli, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {}: {}", e.name, e.message);
            1
        }
    }
}
