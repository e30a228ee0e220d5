use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};

use gaitlab_core::gait::{compute_metrics, detect_gait_events, render_rationale, GaitMetrics, SegmentLengths};
use gaitlab_core::io::{parse_skeleton_sequence, read_manifest};
use gaitlab_core::split::{stratified_subject_split, subject_disjoint_split, verify_split};
use gaitlab_core::stats::{accuracy, macro_f1, per_class_f1, ConfusionMatrix};
use gaitlab_core::synth::generate_synthetic_cohort;
use gaitlab_core::tokenizer::{assemble_prompt, render_sequence, tokenize_and_truncate};
use gaitlab_core::{ChannelTable, Manifest, SkelSequence, SplitManifest, SynthSpec, Taxonomy, TokenizerConfig};
use gaitlab_model::{
    evaluate, load_clips, prepare_samples, training_tokenizer, BackboneConfig, Checkpoint, EvalReport, ParamSet,
    RunMeta, StubBackbone, TedConfig, TrainConfig, Trainer,
};
use gaitlab_review::{read_store, summarize, ReviewService, StudyFile, StudySummary, STORE_FILE, STUDY_FILE};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::CliError;
use crate::{
    Cli, Command, EvalArgs, MetricsArgs, ReportArgs, ServeArgs, SplitArgs, StudySummaryArgs, SynthArgs, TokenizeArgs,
    TrainArgs,
};

type Out<'a> = &'a mut dyn Write;

pub fn dispatch(cli: &Cli, stdout: Out, stderr: Out) -> Result<(), CliError> {
    let ctx = Ctx {
        seed: cli.seed,
        verbose: cli.verbose,
        json: cli.json,
    };
    match &cli.command {
        Command::Tokenize(a) => tokenize(&ctx, a, stdout),
        Command::Metrics(a) => metrics(&ctx, a, stdout),
        Command::Report(a) => report(&ctx, a, stdout),
        Command::Split(a) => split(&ctx, a, stdout),
        Command::Synth(a) => synth(&ctx, a, stdout),
        Command::Train(a) => train(&ctx, a, stdout, stderr),
        Command::Eval(a) => eval(&ctx, a, stdout),
        Command::Serve(a) => serve(&ctx, a, stderr),
        Command::StudySummary(a) => study_summary(&ctx, a, stdout),
    }
}

struct Ctx {
    seed: u64,
    verbose: bool,
    json: bool,
}

fn emit(out: Out, text: &str) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::io(Path::new("<stdout>"), e))
}

fn emit_json(out: Out, value: &impl Serialize) -> Result<(), CliError> {
    emit(out, &serde_json::to_string_pretty(value)?)
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

/// `--taxonomy`, else `taxonomy.json` beside `near`, else the default eight classes.
fn taxonomy(explicit: Option<&Path>, near: Option<&Path>) -> Result<Taxonomy, CliError> {
    let sibling = near.and_then(|p| p.parent()).map(|d| d.join("taxonomy.json"));
    let path = match (explicit, sibling) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(s)) if s.exists() => s,
        _ => return Ok(Taxonomy::default()),
    };
    let classes: Vec<String> = serde_json::from_str(&read_text(&path)?)?;
    Ok(Taxonomy::new(classes)?)
}

fn read_sequence(path: &Path, tax: &Taxonomy) -> Result<SkelSequence, CliError> {
    Ok(parse_skeleton_sequence(open(path)?, &ChannelTable::skel46(), tax)?)
}

fn read_manifest_file(path: &Path, tax: &Taxonomy) -> Result<Manifest, CliError> {
    Ok(read_manifest(open(path)?, tax)?)
}

fn read_split(path: &Path) -> Result<SplitManifest, CliError> {
    Ok(SplitManifest::from_json(&read_text(path)?)?)
}

fn data_root(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn sequence_metrics(seq: &SkelSequence) -> Result<GaitMetrics, CliError> {
    let table = ChannelTable::skel46();
    let events = detect_gait_events(seq, &table, &SegmentLengths::default())?;
    Ok(compute_metrics(&events, seq.fps)?)
}

fn tokenize(ctx: &Ctx, a: &TokenizeArgs, stdout: Out) -> Result<(), CliError> {
    let tax = taxonomy(a.taxonomy.as_deref(), None)?;
    let mut cfg = match &a.channels {
        Some(p) => TokenizerConfig::parse(&read_text(p)?)?,
        None => TokenizerConfig::default(),
    };
    if let Some(n) = a.max_tokens {
        cfg.max_tokens = n;
    }
    let seq = read_sequence(&a.seq, &tax)?;
    let bio = render_sequence(&seq, &ChannelTable::skel46(), &cfg)?;
    let prompt = assemble_prompt(&bio, &tax, &cfg)?;
    if let Some(out) = &a.out {
        write_file(out, format!("{prompt}\n").as_bytes())?;
    }
    if ctx.json {
        let mut v = json!({
            "prompt_tokens": tokenize_and_truncate(&prompt, usize::MAX).len(),
            "bio_tokens": bio.token_count,
            "truncated": bio.is_truncated(),
            "frames_in": bio.frames_in,
            "frames_rendered": bio.lines.len(),
            "out": a.out,
        });
        if a.out.is_none() {
            v["prompt"] = json!(prompt);
        }
        emit_json(stdout, &v)
    } else if a.out.is_none() {
        emit(stdout, &prompt)
    } else {
        emit(
            stdout,
            &format!("{} bio tokens from {} frames", bio.token_count, bio.frames_in),
        )
    }
}

fn metrics_text(m: &GaitMetrics) -> String {
    let v = serde_json::to_value(m).expect("metrics serialize");
    let obj = v.as_object().expect("metrics are an object");
    obj.iter().map(|(k, v)| format!("{k}: {v}")).collect::<Vec<_>>().join("\n")
}

fn metrics(ctx: &Ctx, a: &MetricsArgs, stdout: Out) -> Result<(), CliError> {
    let tax = taxonomy(a.taxonomy.as_deref(), None)?;
    let m = sequence_metrics(&read_sequence(&a.seq, &tax)?)?;
    if ctx.json {
        emit_json(stdout, &m)
    } else {
        emit(stdout, &metrics_text(&m))
    }
}

#[derive(Debug, Deserialize)]
struct PredictionLine {
    clip_id: String,
    predicted: String,
}

/// Accepts an eval report or JSON lines of `{clip_id, predicted}`.
fn read_predictions(path: &Path) -> Result<Vec<PredictionLine>, CliError> {
    let text = read_text(path)?;
    if let Ok(report) = serde_json::from_str::<EvalReport>(&text) {
        return Ok(report
            .predictions
            .into_iter()
            .map(|p| PredictionLine {
                clip_id: p.clip_id,
                predicted: p.predicted,
            })
            .collect());
    }
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(CliError::from))
        .collect()
}

#[derive(Debug, Serialize)]
struct F1Table {
    name: String,
    classes: Vec<String>,
    per_class_f1: Vec<f64>,
    accuracy: f64,
    macro_f1: f64,
    clips: u64,
}

impl F1Table {
    fn render(&self, csv: bool) -> String {
        let mut header = vec!["Model".to_string()];
        header.extend(self.classes.iter().cloned());
        header.push("Acc. (%)".into());
        header.push("Macro F1".into());
        let mut row = vec![self.name.clone()];
        row.extend(self.per_class_f1.iter().map(|v| format!("{v:.1}")));
        row.push(format!("{:.1}", self.accuracy));
        row.push(format!("{:.1}", self.macro_f1));
        if csv {
            let quote = |s: &String| if s.contains(',') { format!("\"{s}\"") } else { s.clone() };
            return [header, row]
                .iter()
                .map(|r| r.iter().map(quote).collect::<Vec<_>>().join(","))
                .collect::<Vec<_>>()
                .join("\n");
        }
        let widths: Vec<usize> = header.iter().zip(&row).map(|(h, r)| h.len().max(r.len())).collect();
        let line = |r: &[String]| {
            r.iter()
                .zip(&widths)
                .map(|(s, w)| format!("{s:>w$}"))
                .collect::<Vec<_>>()
                .join(" | ")
        };
        format!("{}\n{}", line(&header), line(&row))
    }
}

fn report(ctx: &Ctx, a: &ReportArgs, stdout: Out) -> Result<(), CliError> {
    let tax = taxonomy(a.taxonomy.as_deref(), a.truth.as_deref())?;
    if let (Some(seq), Some(class)) = (&a.seq, &a.class) {
        let m = sequence_metrics(&read_sequence(seq, &tax)?)?;
        let text = render_rationale(&m, class, &tax)?;
        return if ctx.json {
            emit_json(stdout, &json!({"class": class, "rationale": text, "metrics": m}))
        } else {
            emit(stdout, &text)
        };
    }
    let (Some(pred_path), Some(truth_path)) = (&a.predictions, &a.truth) else {
        return Err(CliError::new(
            "UsageError",
            "report needs --seq with --class, or --predictions with --truth",
        ));
    };
    let truth = read_manifest_file(truth_path, &tax)?;
    let preds = read_predictions(pred_path)?;
    let mut cm = ConfusionMatrix::new(tax.len());
    for p in &preds {
        let record = truth
            .get(&p.clip_id)
            .ok_or_else(|| CliError::new("ReportError", format!("clip {:?} is not in the truth manifest", p.clip_id)))?;
        let t = tax
            .index_of(&record.label)
            .ok_or_else(|| CliError::new("ReportError", format!("clip {:?} is unlabeled", p.clip_id)))?;
        let q = tax
            .index_of(&p.predicted)
            .ok_or_else(|| CliError::new("ReportError", format!("unknown predicted class {:?}", p.predicted)))?;
        cm.add(t, q)?;
    }
    let table = F1Table {
        name: a.name.clone(),
        classes: tax.classes().to_vec(),
        per_class_f1: per_class_f1(&cm)?,
        accuracy: accuracy(&cm)?,
        macro_f1: macro_f1(&cm)?,
        clips: cm.total(),
    };
    if ctx.json {
        emit_json(stdout, &table)
    } else {
        emit(stdout, &table.render(a.csv))
    }
}

fn split(ctx: &Ctx, a: &SplitArgs, stdout: Out) -> Result<(), CliError> {
    let tax = taxonomy(a.taxonomy.as_deref(), Some(&a.manifest))?;
    let manifest = read_manifest_file(&a.manifest, &tax)?;
    let s = if a.stratified {
        stratified_subject_split(&manifest, a.test_frac, ctx.seed)?
    } else {
        subject_disjoint_split(&manifest, a.test_frac, ctx.seed)?
    };
    let report = verify_split(&s, &manifest);
    if !report.passed {
        return Err(CliError::new("SplitError", format!("split failed verification: {:?}", report.violations)));
    }
    write_file(&a.out, s.to_json().as_bytes())?;
    if ctx.json {
        emit_json(stdout, &report)
    } else {
        emit(
            stdout,
            &format!(
                "train {} clips ({} subjects), test {} clips ({} subjects) -> {}",
                report.train_clips,
                report.train_subjects,
                report.test_clips,
                report.test_subjects,
                a.out.display()
            ),
        )
    }
}

fn synth(ctx: &Ctx, a: &SynthArgs, stdout: Out) -> Result<(), CliError> {
    let spec = match &a.spec {
        Some(p) => SynthSpec::from_json(&read_text(p)?)?,
        None => SynthSpec::default(),
    };
    let cohort = generate_synthetic_cohort(&spec, ctx.seed, &a.out_dir)?;
    let subjects: std::collections::BTreeSet<&str> =
        cohort.manifest.records().iter().map(|r| r.subject_id.as_str()).collect();
    if ctx.json {
        emit_json(
            stdout,
            &json!({
                "clips": cohort.clips.len(),
                "subjects": subjects.len(),
                "classes": cohort.taxonomy.classes(),
                "out_dir": a.out_dir,
            }),
        )
    } else {
        emit(
            stdout,
            &format!(
                "wrote {} clips from {} subjects to {}",
                cohort.clips.len(),
                subjects.len(),
                a.out_dir.display()
            ),
        )
    }
}

fn train(ctx: &Ctx, a: &TrainArgs, stdout: Out, stderr: Out) -> Result<(), CliError> {
    let tax = taxonomy(a.taxonomy.as_deref(), Some(&a.manifest))?;
    let manifest = read_manifest_file(&a.manifest, &tax)?;
    let split = read_split(&a.split)?;
    let root = data_root(&a.manifest);
    let table = ChannelTable::skel46();
    let train_clips = load_clips(&root, &manifest, &split.train, &table, &tax)?;
    let test_clips = load_clips(&root, &manifest, &split.test, &table, &tax)?;
    let first = train_clips
        .first()
        .ok_or_else(|| CliError::new("TrainError", "train split is empty"))?;
    let dim = first.features.dim();
    let t_max = train_clips.iter().chain(&test_clips).map(|c| c.features.rows()).max().unwrap_or(1);

    let defaults = TedConfig::default();
    let ted = TedConfig {
        dim,
        queries: a.queries.unwrap_or(defaults.queries),
        layers: a.layers.unwrap_or(defaults.layers),
        ..defaults
    };
    let backbone = StubBackbone::new(BackboneConfig {
        dim,
        heads: ted.heads,
        seed: ctx.seed,
    })
    .map_err(|e| CliError::new("TrainError", e.to_string()))?;
    let tokenizer = match &a.tokenizer {
        Some(p) => TokenizerConfig::parse(&read_text(p)?)?,
        None => training_tokenizer(),
    };
    let samples = prepare_samples(&train_clips, &backbone, &table, &tax, &tokenizer, a.ablation.uses_bio())?;
    let base = TrainConfig::default();
    let cfg = TrainConfig {
        seed: ctx.seed,
        ablation: a.ablation,
        epochs: a.epochs.unwrap_or(base.epochs),
        batch_size: a.batch_size.unwrap_or(base.batch_size),
        lr: a.lr.unwrap_or(base.lr),
        ..base
    };
    let mut trainer = Trainer::new(cfg, ted, t_max, tax.len(), &samples)?;
    let verbose = ctx.verbose;
    trainer.fit(&samples, |r| {
        if verbose {
            let _ = writeln!(stderr, "epoch {:>3}  loss {:.6}", r.epoch, r.mean_loss);
        }
    })?;
    let train_accuracy = evaluate(&trainer.model, &samples, &tax)?.accuracy;
    let manifest_path = std::fs::canonicalize(&a.manifest).unwrap_or_else(|_| a.manifest.clone());
    let ckpt = Checkpoint {
        meta: RunMeta {
            classes: tax.classes().to_vec(),
            backbone: backbone.config(),
            backbone_hash: backbone.fingerprint(),
            tokenizer: tokenizer.to_text(),
            manifest: Some(manifest_path.display().to_string()),
        },
        trainer,
    };
    ckpt.save(&a.out)?;
    let t = &ckpt.trainer;
    let final_loss = t.loss_history.last().copied().unwrap_or(f64::NAN);
    if ctx.json {
        emit_json(
            stdout,
            &json!({
                "ablation": a.ablation,
                "epochs": t.epoch,
                "loss_history": t.loss_history,
                "train_accuracy": train_accuracy,
                "trainable_params": t.model.params().iter().filter(|p| p.trainable).map(|p| p.tensor.len()).sum::<usize>(),
                "checkpoint": a.out,
            }),
        )
    } else {
        emit(
            stdout,
            &format!(
                "{} trained {} epochs: final loss {final_loss:.4}, train accuracy {train_accuracy:.1}% -> {}",
                a.ablation,
                t.epoch,
                a.out.display()
            ),
        )
    }
}

fn eval(ctx: &Ctx, a: &EvalArgs, stdout: Out) -> Result<(), CliError> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let manifest_path = match (&a.manifest, &ckpt.meta.manifest) {
        (Some(p), _) => p.clone(),
        (None, Some(p)) => PathBuf::from(p),
        (None, None) => {
            return Err(CliError::new("EvalError", "checkpoint records no manifest; pass --manifest"));
        }
    };
    let tax = Taxonomy::new(ckpt.meta.classes.clone())?;
    let manifest = read_manifest_file(&manifest_path, &tax)?;
    let split = read_split(&a.split)?;
    let backbone = StubBackbone::new(ckpt.meta.backbone).map_err(|e| CliError::new("EvalError", e.to_string()))?;
    ckpt.verify_backbone(&backbone)?;
    let tokenizer = TokenizerConfig::parse(&ckpt.meta.tokenizer)?;
    let table = ChannelTable::skel46();
    let clips = load_clips(&data_root(&manifest_path), &manifest, &split.test, &table, &tax)?;
    let ablation = ckpt.trainer.config.ablation;
    let samples = prepare_samples(&clips, &backbone, &table, &tax, &tokenizer, ablation.uses_bio())?;
    let report = evaluate(&ckpt.trainer.model, &samples, &tax)?;
    write_file(&a.report, serde_json::to_string_pretty(&report)?.as_bytes())?;
    if ctx.json {
        emit_json(
            stdout,
            &json!({
                "ablation": ablation,
                "clips": samples.len(),
                "accuracy": report.accuracy,
                "macro_f1": report.macro_f1,
                "per_class_f1": report.classes.iter().zip(&report.per_class_f1).collect::<HashMap<_, _>>(),
                "report": a.report,
            }),
        )
    } else {
        let table = F1Table {
            name: ablation.to_string(),
            classes: report.classes.clone(),
            per_class_f1: report.per_class_f1.clone(),
            accuracy: report.accuracy,
            macro_f1: report.macro_f1,
            clips: samples.len() as u64,
        };
        emit(stdout, &table.render(false))
    }
}

fn serve(ctx: &Ctx, a: &ServeArgs, stderr: Out) -> Result<(), CliError> {
    let service = ReviewService::open_dir(&a.study)?;
    let token = a
        .admin_token
        .clone()
        .unwrap_or_else(|| format!("{:016x}{:016x}", rand::random::<u64>(), rand::random::<u64>()));
    let addr: std::net::SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| CliError::new("UsageError", format!("bad listen address: {e}")))?;
    if a.admin_token.is_none() {
        let _ = writeln!(stderr, "admin token: {token}");
    }
    let _ = writeln!(
        stderr,
        "serving {} cases for {} raters on http://{addr}",
        service.study.cases.len(),
        service.study.raters.len()
    );
    if ctx.verbose {
        let _ = writeln!(stderr, "{} ratings already stored", service.store.len());
    }
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::new("IoError", e.to_string()))?;
    rt.block_on(gaitlab_review::serve(service, token, addr))
        .map_err(|e| CliError::new("IoError", e.to_string()))
}

fn summary_text(s: &StudySummary) -> String {
    let mut lines = vec![format!("rated {}/{} cases, null p = {:.4}", s.rated, s.total, s.null_p)];
    lines.push(format!(
        "{:<20} {:>9} {:>9} {:>9} {:>9} {:>6} {:>7} {:>10}",
        "model", "grounding", "explain", "useful", "consist", "picks", "pref %", "p-value"
    ));
    for m in &s.models {
        lines.push(format!(
            "{:<20} {:>9.2} {:>9.2} {:>9.2} {:>9.2} {:>6} {:>7.1} {:>10.3e}",
            m.model, m.means[0], m.means[1], m.means[2], m.means[3], m.best_picks, m.preference_pct, m.p_value
        ));
    }
    lines.push(format!("preferred: {}", s.top_model));
    lines.join("\n")
}

fn study_summary(ctx: &Ctx, a: &StudySummaryArgs, stdout: Out) -> Result<(), CliError> {
    let study = StudyFile::load(&a.study.join(STUDY_FILE))?.build()?;
    let store = a.study.join(STORE_FILE);
    let records = if store.exists() { read_store(&store)? } else { Vec::new() };
    let s = summarize(&records, study.cases.len(), study.null_p)?;
    if ctx.json {
        emit_json(stdout, &s)
    } else {
        emit(stdout, &summary_text(&s))
    }
}
