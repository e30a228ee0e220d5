use std::collections::BTreeMap;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gaitlab_core::io::read_manifest;
use gaitlab_core::split::verify_split;
use gaitlab_core::{SplitManifest, Taxonomy};
use gaitlab_review::{CaseInput, RatingSubmission, ReviewService, StudyFile, STUDY_FILE};
use serde_json::Value;

fn gaitlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gaitlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = gaitlab(dir, args);
    assert_eq!(
        out.status.code(),
        Some(0),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Small cohort plus a stratified split, built through the binary.
fn cohort(dir: &Path) {
    std::fs::write(
        dir.join("spec.json"),
        r#"{"subjects_per_class":3,"clips_per_subject":1,"frames_per_clip":200,"feature_rows":8,"feature_dim":16}"#,
    )
    .unwrap();
    ok(dir, &["synth", "--spec", "spec.json", "--out-dir", "cohort", "--seed", "3"]);
    ok(
        dir,
        &["split", "--manifest", "cohort/manifest.jsonl", "--test-frac", "0.34", "--stratified", "--seed", "1", "--out", "split.json"],
    );
}

fn first_clip(dir: &Path) -> PathBuf {
    let mut clips: Vec<_> = std::fs::read_dir(dir.join("cohort/clips"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "skel"))
        .collect();
    clips.sort();
    clips.remove(0)
}

#[test]
fn usage_errors_exit_two_and_help_exits_zero() {
    let dir = tempfile::tempdir().unwrap();
    let out = gaitlab(dir.path(), &["bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    let out = gaitlab(dir.path(), &["split", "--test-frac", "0.2"]);
    assert_eq!(out.status.code(), Some(2));
    let out = gaitlab(dir.path(), &["--help"]);
    assert_eq!(out.status.code(), Some(0));
    let help = String::from_utf8(out.stdout).unwrap();
    for cmd in ["tokenize", "metrics", "report", "split", "synth", "train", "eval", "serve", "study-summary"] {
        assert!(help.contains(cmd), "help lists {cmd}");
    }
}

#[test]
fn domain_errors_exit_one_with_error_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = gaitlab(dir.path(), &["split", "--manifest", "missing.jsonl", "--out", "s.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("error: IoError:"), "{err}");

    std::fs::write(dir.path().join("bad.skel"), "not a skeleton\n").unwrap();
    let out = gaitlab(dir.path(), &["metrics", "--seq", "bad.skel"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr).unwrap().contains("error: ParseError:"));
}

#[test]
fn every_run_echoes_its_config() {
    let dir = tempfile::tempdir().unwrap();
    cohort(dir.path());
    let out = gaitlab(dir.path(), &["--seed", "9", "split", "--manifest", "cohort/manifest.jsonl", "--out", "s2.json"]);
    let err = String::from_utf8(out.stderr).unwrap();
    let line = err.lines().find_map(|l| l.strip_prefix("config: ")).expect("config line");
    let cfg: Value = serde_json::from_str(line).unwrap();
    assert_eq!(cfg["seed"], 9);
    assert_eq!(cfg["command"]["split"]["test_frac"], 0.2);
}

#[test]
fn synth_and_split_are_deterministic_and_subject_disjoint() {
    let dir = tempfile::tempdir().unwrap();
    cohort(dir.path());
    let d = dir.path();
    let manifest = read_manifest(
        BufReader::new(std::fs::File::open(d.join("cohort/manifest.jsonl")).unwrap()),
        &Taxonomy::default(),
    )
    .unwrap();
    assert_eq!(manifest.records().len(), 24);
    let split = SplitManifest::from_json(&std::fs::read_to_string(d.join("split.json")).unwrap()).unwrap();
    let report = verify_split(&split, &manifest);
    assert!(report.passed, "{report:?}");
    assert!(split.train_subjects().is_disjoint(&split.test_subjects()));

    ok(d, &["split", "--manifest", "cohort/manifest.jsonl", "--test-frac", "0.34", "--stratified", "--seed", "1", "--out", "again.json"]);
    assert_eq!(std::fs::read(d.join("split.json")).unwrap(), std::fs::read(d.join("again.json")).unwrap());

    ok(d, &["synth", "--spec", "spec.json", "--out-dir", "cohort2", "--seed", "3"]);
    assert_eq!(
        std::fs::read(d.join("cohort/manifest.jsonl")).unwrap(),
        std::fs::read(d.join("cohort2/manifest.jsonl")).unwrap()
    );
    let clip = first_clip(d);
    let twin = d.join("cohort2/clips").join(clip.file_name().unwrap());
    assert_eq!(std::fs::read(&clip).unwrap(), std::fs::read(twin).unwrap());
}

#[test]
fn tokenize_metrics_and_rationale() {
    let dir = tempfile::tempdir().unwrap();
    cohort(dir.path());
    let d = dir.path();
    let clip = first_clip(d);
    let clip = clip.to_str().unwrap();

    let prompt = ok(d, &["tokenize", "--seq", clip]);
    assert!(prompt.contains("Frame 0: [Pelvis] tilt="));
    let stats: Value = serde_json::from_str(&ok(d, &["--json", "tokenize", "--seq", clip, "--max-tokens", "40"])).unwrap();
    assert!(stats["bio_tokens"].as_u64().unwrap() <= 40);
    assert!(stats["frames_rendered"].as_u64().unwrap() < stats["frames_in"].as_u64().unwrap());
    ok(d, &["tokenize", "--seq", clip, "--out", "prompt.txt"]);
    assert_eq!(std::fs::read_to_string(d.join("prompt.txt")).unwrap().trim_end(), prompt.trim_end());

    let metrics: Value = serde_json::from_str(&ok(d, &["--json", "metrics", "--seq", clip])).unwrap();
    let cadence = metrics["cadence"].as_f64().unwrap();
    assert!((60.0..240.0).contains(&cadence), "cadence {cadence}");
    assert!(ok(d, &["metrics", "--seq", clip]).contains("cadence: "));

    let text = ok(d, &["report", "--seq", clip, "--class", "Normal"]);
    assert!(text.starts_with("Predicted gait class: Normal."));
    assert!(text.contains("steps per minute"));
    let out = gaitlab(d, &["report", "--seq", clip, "--class", "Sprinting"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    cohort(dir.path());
    let d = dir.path();
    let train = |arm: &str, out: &str| {
        ok(
            d,
            &[
                "train", "--manifest", "cohort/manifest.jsonl", "--split", "split.json", "--ablation", arm, "--epochs", "2",
                "--queries", "4", "--layers", "1", "--seed", "2", "--out", out,
            ],
        )
    };
    train("full", "full.ckpt");
    train("neither", "neither.ckpt");
    train("full", "full2.ckpt");
    assert_eq!(std::fs::read(d.join("full.ckpt")).unwrap(), std::fs::read(d.join("full2.ckpt")).unwrap());

    ok(d, &["eval", "--ckpt", "full.ckpt", "--split", "split.json", "--report", "full.json"]);
    ok(d, &["eval", "--ckpt", "neither.ckpt", "--split", "split.json", "--report", "neither.json"]);
    let full: Value = serde_json::from_str(&std::fs::read_to_string(d.join("full.json")).unwrap()).unwrap();
    let neither: Value = serde_json::from_str(&std::fs::read_to_string(d.join("neither.json")).unwrap()).unwrap();
    let split = SplitManifest::from_json(&std::fs::read_to_string(d.join("split.json")).unwrap()).unwrap();
    assert_eq!(full["predictions"].as_array().unwrap().len(), split.test.len());
    assert_ne!(full["predictions"], neither["predictions"]);

    let table = ok(d, &["report", "--predictions", "full.json", "--truth", "cohort/manifest.jsonl", "--name", "full"]);
    let header = table.lines().next().unwrap();
    assert!(header.starts_with("Model") && header.contains("Macro F1"));
    let csv = ok(d, &["report", "--predictions", "full.json", "--truth", "cohort/manifest.jsonl", "--csv"]);
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row.len(), 11);
    let acc: f64 = row[9].parse().unwrap();
    assert!((acc - full["accuracy"].as_f64().unwrap()).abs() < 0.05 + 1e-9);

    let jsonl: String = full["predictions"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| serde_json::json!({"clip_id": p["clip_id"], "predicted": p["predicted"]}).to_string() + "\n")
        .collect();
    std::fs::write(d.join("preds.jsonl"), jsonl).unwrap();
    let csv2 = ok(d, &["report", "--predictions", "preds.jsonl", "--truth", "cohort/manifest.jsonl", "--csv"]);
    assert_eq!(csv, csv2);
}

#[test]
fn study_summary_reads_the_store() {
    let dir = tempfile::tempdir().unwrap();
    let models = vec!["alpha".to_string(), "beta".to_string()];
    let cases = (0..6)
        .map(|i| CaseInput {
            case_id: format!("c{i}"),
            preview: format!("p{i}.skel"),
            rationales: models.iter().map(|m| (m.clone(), format!("text {i} from {}", m.len() + i))).collect(),
        })
        .collect();
    let file = StudyFile {
        models: models.clone(),
        raters: vec!["r1".into()],
        seed: 4,
        null_p: None,
        cases,
    };
    std::fs::write(dir.path().join(STUDY_FILE), serde_json::to_string(&file).unwrap()).unwrap();

    let service = ReviewService::open_dir(dir.path()).unwrap();
    for _ in 0..6 {
        let case = service.next_case("r1").unwrap();
        let target = file.cases.iter().find(|c| c.case_id == case.case_id).unwrap();
        let alpha_text = &target.rationales["alpha"];
        let alpha_label = case.panels.iter().find(|p| &p.rationale == alpha_text).unwrap().label.clone();
        let scores: BTreeMap<String, Vec<i64>> = case.panels.iter().map(|p| (p.label.clone(), vec![4; 4])).collect();
        service
            .submit(
                "r1",
                &RatingSubmission {
                    case_id: case.case_id.clone(),
                    scores,
                    best: alpha_label,
                    comment: String::new(),
                },
            )
            .unwrap();
    }
    drop(service);

    let study = dir.path().to_str().unwrap();
    let s: Value = serde_json::from_str(&ok(dir.path(), &["--json", "study-summary", "--study", study])).unwrap();
    assert_eq!(s["rated"], 6);
    assert_eq!(s["top_model"], "alpha");
    let alpha = s["models"].as_array().unwrap().iter().find(|m| m["model"] == "alpha").unwrap();
    assert_eq!(alpha["best_picks"], 6);
    assert!((alpha["p_value"].as_f64().unwrap() - 0.5f64.powi(6)).abs() < 1e-15);
    let text = ok(dir.path(), &["study-summary", "--study", study]);
    assert!(text.contains("preferred: alpha"));
}
