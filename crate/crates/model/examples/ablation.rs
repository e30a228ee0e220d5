//! Desk-scale branch ablation: `cargo run --release --example ablation -- [seed]`.

use gaitlab_core::split::stratified_subject_split;
use gaitlab_core::synth::build_cohort;
use gaitlab_core::SynthSpec;
use gaitlab_model::ablation::{run_ablation, AblationSetup};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(7);
    let cohort = build_cohort(&SynthSpec::default(), seed)?;
    let split = stratified_subject_split(&cohort.manifest, 0.25, seed)?;
    println!("train {} clips, test {} clips", split.train.len(), split.test.len());
    run_ablation(&cohort, &split, &AblationSetup::desk(seed), |r| {
        println!(
            "{:8} test acc {:6.2}  macro F1 {:6.2}  rhythm-pair F1 {:6.2}  train acc {:6.2}  ({:.0}s)",
            r.ablation.as_str(),
            r.test.accuracy,
            r.test.macro_f1,
            r.rhythm_pair_f1().unwrap_or(f64::NAN),
            r.train_accuracy,
            r.seconds
        );
    })?;
    Ok(())
}
