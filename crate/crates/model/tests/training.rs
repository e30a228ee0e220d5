use gaitlab_core::synth::{build_cohort, generate_synthetic_cohort, Cohort};
use gaitlab_core::{ChannelTable, SynthSpec, Taxonomy};
use gaitlab_model::optim::clip_global_norm;
use gaitlab_model::{
    evaluate, load_clips, prepare_samples, training_tokenizer, Ablation, AdamW, AdamWConfig, BackboneConfig,
    Checkpoint, CheckpointError, LoadedClip, ParamSet, RunMeta, Sample, StubBackbone, TedConfig, Tensor, TrainConfig,
    TrainError, Trainer,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec() -> SynthSpec {
    SynthSpec {
        subjects_per_class: 2,
        clips_per_subject: 1,
        frames_per_clip: 120,
        feature_rows: 8,
        ..SynthSpec::default()
    }
}

fn cohort() -> Cohort {
    build_cohort(&small_spec(), 11).unwrap()
}

fn backbone() -> StubBackbone {
    StubBackbone::new(BackboneConfig {
        dim: 64,
        heads: 4,
        seed: 3,
    })
    .unwrap()
}

fn samples(cohort: &Cohort, use_bio: bool) -> Vec<Sample> {
    let ids: Vec<String> = cohort.manifest.records().iter().map(|r| r.clip_id.clone()).collect();
    let clips = LoadedClip::from_cohort(cohort, &ids).unwrap();
    prepare_samples(
        &clips,
        &backbone(),
        &ChannelTable::skel46(),
        &cohort.taxonomy,
        &training_tokenizer(),
        use_bio,
    )
    .unwrap()
}

fn small_ted() -> TedConfig {
    TedConfig {
        queries: 8,
        layers: 2,
        ..TedConfig::default()
    }
}

fn config(ablation: Ablation, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        lr: 1e-3,
        seed: 5,
        ablation,
        ..TrainConfig::default()
    }
}

fn trainer(ablation: Ablation, epochs: usize, train: &[Sample], taxonomy: &Taxonomy) -> Trainer {
    Trainer::new(config(ablation, epochs), small_ted(), 8, taxonomy.len(), train).unwrap()
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

fn meta(taxonomy: &Taxonomy) -> RunMeta {
    let bb = backbone();
    RunMeta {
        classes: taxonomy.classes().to_vec(),
        backbone: bb.config(),
        backbone_hash: bb.fingerprint(),
        tokenizer: training_tokenizer().to_text(),
        manifest: None,
    }
}

#[test]
fn loss_decreases_over_first_epochs() {
    let c = cohort();
    let train = samples(&c, true);
    let mut t = trainer(Ablation::Full, 5, &train, &c.taxonomy);
    t.fit(&train, |_| {}).unwrap();
    let h = &t.loss_history;
    assert_eq!(h.len(), 5);
    for w in h.windows(2) {
        assert!(w[1] < w[0], "{h:?}");
    }
}

#[test]
fn same_seed_same_loss_history() {
    let c = cohort();
    let train = samples(&c, true);
    let run = || {
        let mut t = trainer(Ablation::Full, 3, &train, &c.taxonomy);
        t.fit(&train, |_| {}).unwrap();
        t
    };
    let (a, b) = (run(), run());
    assert_eq!(bits(&a.loss_history), bits(&b.loss_history));
    assert_eq!(bits(&a.model.flatten()), bits(&b.model.flatten()));
}

#[test]
fn ted_is_untouched_without_the_temporal_branch() {
    let c = cohort();
    let train = samples(&c, true);
    for arm in [Ablation::NoTed, Ablation::Neither] {
        let mut t = trainer(arm, 2, &train, &c.taxonomy);
        let ted_before = t.model.ted.flatten();
        let head_before = t.model.head.flatten();
        let mut reports = Vec::new();
        t.fit(&train, |r| reports.push(r.clone())).unwrap();
        assert!(reports.iter().flat_map(|r| &r.steps).all(|s| s.ted_grad_norm == 0.0), "{arm}");
        assert_eq!(bits(&ted_before), bits(&t.model.ted.flatten()), "{arm}");
        assert_ne!(head_before, t.model.head.flatten(), "{arm}");
    }
    let mut t = trainer(Ablation::Full, 1, &train, &c.taxonomy);
    let mut reports = Vec::new();
    t.fit(&train, |r| reports.push(r.clone())).unwrap();
    assert!(reports[0].steps.iter().all(|s| s.ted_grad_norm > 0.0));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let c = cohort();
    let train = samples(&c, true);
    let mut straight = trainer(Ablation::Full, 4, &train, &c.taxonomy);
    straight.fit(&train, |_| {}).unwrap();

    let mut first = trainer(Ablation::Full, 2, &train, &c.taxonomy);
    first.fit(&train, |_| {}).unwrap();
    let bytes = Checkpoint {
        meta: meta(&c.taxonomy),
        trainer: first,
    }
    .to_bytes();
    let mut resumed = Checkpoint::from_bytes(&bytes).unwrap().trainer;
    resumed.config.epochs = 4;
    resumed.fit(&train, |_| {}).unwrap();

    assert_eq!(bits(&straight.model.flatten()), bits(&resumed.model.flatten()));
    assert_eq!(bits(&straight.loss_history), bits(&resumed.loss_history));
    let a = evaluate(&straight.model, &train, &c.taxonomy).unwrap();
    let b = evaluate(&resumed.model, &train, &c.taxonomy).unwrap();
    assert_eq!(a, b);
}

#[test]
fn frozen_parameters_never_move() {
    let bb = backbone();
    let mut params = bb.clone();
    let before = params.flatten();
    let mut opt = AdamW::new(AdamWConfig::default(), &params);
    let mut grads = bb.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for p in grads.params_mut() {
        p.tensor = Tensor::randn(p.tensor.shape(), 1.0, &mut rng);
    }
    for _ in 0..100 {
        opt.step(&mut params, &grads).unwrap();
    }
    assert_eq!(bits(&before), bits(&params.flatten()));
    assert_eq!(bb.fingerprint(), params.fingerprint());
}

#[test]
fn only_trainable_parameters_change_during_training() {
    let c = cohort();
    let train = samples(&c, false);
    let mut t = trainer(Ablation::NoTed, 1, &train, &c.taxonomy);
    let before: Vec<(bool, Vec<f64>)> =
        t.model.params().iter().map(|p| (p.trainable, p.tensor.data().to_vec())).collect();
    t.fit(&train, |_| {}).unwrap();
    for ((trainable, old), p) in before.iter().zip(t.model.params()) {
        if *trainable {
            assert_ne!(old.as_slice(), p.tensor.data(), "{}", p.name);
        } else {
            assert_eq!(bits(old), bits(p.tensor.data()), "{}", p.name);
        }
    }
}

#[test]
fn evaluate_contracts() {
    let c = cohort();
    let train = samples(&c, true);
    let t = trainer(Ablation::Full, 1, &train, &c.taxonomy);
    assert!(matches!(evaluate(&t.model, &[], &c.taxonomy), Err(TrainError::EmptySplit("test"))));
    let fewer = Taxonomy::new(c.taxonomy.classes()[..3].to_vec()).unwrap();
    assert!(matches!(
        evaluate(&t.model, &train, &fewer),
        Err(TrainError::ClassMismatch { checkpoint: 8, taxonomy: 3 })
    ));
    let report = evaluate(&t.model, &train, &c.taxonomy).unwrap();
    assert_eq!(report.predictions.len(), train.len());
    for p in &report.predictions {
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let best = p.probabilities.iter().cloned().fold(f64::MIN, f64::max);
        let idx = c.taxonomy.index_of(&p.predicted).unwrap();
        assert_eq!(p.probabilities[idx], best);
    }
    let correct = report.predictions.iter().filter(|p| p.truth == p.predicted).count();
    assert_eq!(report.accuracy, 100.0 * correct as f64 / train.len() as f64);
}

#[test]
fn empty_train_split_and_bad_config_are_rejected() {
    let c = cohort();
    assert!(matches!(
        Trainer::new(config(Ablation::Full, 1), small_ted(), 8, c.taxonomy.len(), &[]),
        Err(TrainError::EmptySplit("train"))
    ));
    let train = samples(&c, false);
    let bad = TrainConfig {
        lr: 0.0,
        ..config(Ablation::Full, 1)
    };
    assert!(matches!(
        Trainer::new(bad, small_ted(), 8, c.taxonomy.len(), &train),
        Err(TrainError::InvalidConfig(_))
    ));
}

#[test]
fn checkpoint_round_trip_and_corruption() {
    let c = cohort();
    let train = samples(&c, true);
    let mut t = trainer(Ablation::Full, 1, &train, &c.taxonomy);
    t.fit(&train, |_| {}).unwrap();
    let ckpt = Checkpoint {
        meta: meta(&c.taxonomy),
        trainer: t,
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back, ckpt);
    back.verify_backbone(&backbone()).unwrap();

    let other = StubBackbone::new(BackboneConfig {
        dim: 64,
        heads: 4,
        seed: 4,
    })
    .unwrap();
    assert!(matches!(back.verify_backbone(&other), Err(CheckpointError::BackboneMismatch { .. })));

    let bytes = ckpt.to_bytes();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 8]),
        Err(CheckpointError::Truncated)
    ));
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
        Err(CheckpointError::Truncated)
    ));
}

#[test]
fn clips_loaded_from_disk_match_memory() {
    let dir = tempfile::tempdir().unwrap();
    let c = generate_synthetic_cohort(&small_spec(), 11, dir.path()).unwrap();
    let ids: Vec<String> = c.manifest.records().iter().take(5).map(|r| r.clip_id.clone()).collect();
    let disk = load_clips(dir.path(), &c.manifest, &ids, &ChannelTable::skel46(), &c.taxonomy).unwrap();
    let mem = LoadedClip::from_cohort(&c, &ids).unwrap();
    for (d, m) in disk.iter().zip(&mem) {
        assert_eq!(d.record, m.record);
        assert_eq!(d.label, m.label);
        assert_eq!(d.sequence.len(), m.sequence.len());
        assert_eq!(d.features.rows(), m.features.rows());
        for (a, b) in d.features.values().iter().zip(m.features.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }
    let missing = vec!["nope".to_string()];
    assert!(load_clips(dir.path(), &c.manifest, &missing, &ChannelTable::skel46(), &c.taxonomy).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn clipped_norm_never_exceeds_threshold(scale in 0.01f64..1e3, max in 0.1f64..10.0, seed in 0u64..500) {
        let model = gaitlab_model::GaitModel::new(
            TedConfig { queries: 2, layers: 1, heads: 2, dim: 8, ffn_mult: 2, self_attention: true },
            4, 3, Ablation::Full, seed,
        ).unwrap();
        let mut grads = model.zeros_like();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in grads.params_mut() {
            p.tensor = Tensor::randn(p.tensor.shape(), scale, &mut rng);
        }
        let pre = clip_global_norm(&model, &mut grads, max);
        let post = gaitlab_model::optim::global_norm(&model, &grads);
        prop_assert!(post <= max + 1e-6);
        if pre <= max {
            prop_assert!((post - pre).abs() <= 1e-9 * pre.max(1.0));
        }
    }
}
