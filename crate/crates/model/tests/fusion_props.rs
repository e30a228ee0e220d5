use std::collections::BTreeMap;

use gaitlab_core::synth::build_cohort;
use gaitlab_core::SynthSpec;
use gaitlab_model::fusion::{concat_final, embed_tokens, fuse_and_encode, softmax, weighted_ce, weighted_ce_backward, BackboneConfig};
use gaitlab_model::{class_weights, FusionError, HeadParams, ParamSet, StubBackbone, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn backbone(dim: usize, seed: u64) -> StubBackbone {
    StubBackbone::new(BackboneConfig { dim, heads: 4, seed }).unwrap()
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

fn frames(t: usize, d: usize, seed: u64) -> Tensor {
    Tensor::randn(&[t, d], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[test]
fn two_class_weights_exact() {
    let cw = class_weights(&[8, 2]).unwrap();
    assert_eq!(cw.w, vec![0.625, 2.5]);
    assert_eq!(cw.total, 10);
}

#[test]
fn balanced_counts_give_unit_weights() {
    for k in 2..9 {
        let cw = class_weights(&vec![7; k]).unwrap();
        assert!(cw.w.iter().all(|&w| w == 1.0), "{:?}", cw.w);
    }
}

#[test]
fn empty_class_is_rejected() {
    assert!(matches!(class_weights(&[3, 0, 2]), Err(FusionError::EmptyClass(1))));
}

#[test]
fn synthetic_manifest_weights_match_recount() {
    let spec = SynthSpec {
        subjects_per_class: 3,
        clips_per_subject: 1,
        frames_per_clip: 40,
        ..SynthSpec::default()
    };
    let cohort = build_cohort(&spec, 3).unwrap();
    // Drop a few records so classes are imbalanced.
    let kept: Vec<_> = cohort
        .manifest
        .records()
        .iter()
        .enumerate()
        .filter(|(i, _)| ![0, 3, 4, 10].contains(i))
        .map(|(_, r)| r)
        .collect();
    let mut by_label: BTreeMap<&str, u64> = BTreeMap::new();
    for r in &kept {
        *by_label.entry(r.label.as_str()).or_default() += 1;
    }
    let classes = cohort.taxonomy.classes();
    let counts: Vec<u64> = classes.iter().map(|c| by_label[c.as_str()]).collect();
    let cw = class_weights(&counts).unwrap();
    let n = kept.len() as f64;
    for (i, c) in classes.iter().enumerate() {
        let expected = n / (classes.len() as f64 * by_label[c.as_str()] as f64);
        assert_eq!(cw.w[i], expected, "{c}");
    }
}

#[test]
fn uniform_logits_give_log_k() {
    let loss = weighted_ce(&Tensor::zeros(&[8]), 5, &[1.0; 8]).unwrap();
    assert!((loss - 8f64.ln()).abs() < 1e-12);
}

#[test]
fn confident_logits_give_small_loss() {
    let mut logits = Tensor::zeros(&[8]);
    logits.data_mut()[2] = 20.0;
    let loss = weighted_ce(&logits, 2, &[1.0; 8]).unwrap();
    assert!(loss > 0.0 && loss < 1e-7, "{loss}");
    assert!(matches!(weighted_ce(&logits, 8, &[1.0; 8]), Err(FusionError::BadLabel { label: 8, classes: 8 })));
    assert!(weighted_ce_backward(&logits, 9, &[1.0; 8]).is_err());
}

#[test]
fn empty_token_list_embeds_to_zero_rows() {
    let e = embed_tokens::<&str>(&[], 16, 1);
    assert_eq!(e.shape(), &[0, 16]);
}

#[test]
fn repeated_tokens_share_rows_and_seeds_differ() {
    let e = embed_tokens(&["flex=41°", "tilt=3°", "flex=41°"], 16, 1);
    assert_eq!(e.row(0), e.row(2));
    assert_ne!(e.row(0), e.row(1));
    let other = embed_tokens(&["flex=41°"], 16, 2);
    assert!(other.row(0).iter().zip(e.row(0)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) > 0.0);
}

#[test]
fn fused_input_has_visual_plus_text_rows() {
    let bb = backbone(16, 4);
    let v = frames(6, 16, 1);
    let e = bb.embed(&tokens("Frame 0: [Pelvis] tilt=1° list=2°"));
    let fused = fuse_and_encode(&v, &e, &bb).unwrap();
    assert_eq!(fused.z_rows, 6 + 5);
    assert_eq!(fused.f_vlm.shape(), &[16]);
}

#[test]
fn without_text_pooling_covers_visual_rows_only() {
    let bb = backbone(16, 4);
    let v = frames(6, 16, 1);
    let fused = fuse_and_encode(&v, &Tensor::zeros(&[0, 16]), &bb).unwrap();
    let hidden = bb.encode(&v).unwrap();
    let mut mean = vec![0.0; 16];
    for i in 0..6 {
        for (m, h) in mean.iter_mut().zip(hidden.row(i)) {
            *m += h / 6.0;
        }
    }
    assert!(fused.f_vlm.max_abs_diff(&Tensor::vector(mean)) < 1e-12);
}

#[test]
fn one_text_token_changes_pooled_output() {
    let bb = backbone(16, 4);
    let v = frames(6, 16, 1);
    let a = fuse_and_encode(&v, &bb.embed(&tokens("[R.Knee] flex=41°")), &bb).unwrap();
    let b = fuse_and_encode(&v, &bb.embed(&tokens("[R.Knee] flex=42°")), &bb).unwrap();
    assert!(a.f_vlm.max_abs_diff(&b.f_vlm) > 1e-9);
}

#[test]
fn fused_input_rejects_dim_mismatch() {
    let bb = backbone(16, 4);
    assert!(fuse_and_encode(&frames(4, 8, 1), &Tensor::zeros(&[0, 8]), &bb).is_err());
    assert!(fuse_and_encode(&frames(4, 16, 1), &frames(2, 8, 1), &bb).is_err());
}

#[test]
fn final_representation_concatenates_in_order() {
    let a = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
    let b = Tensor::vector(vec![5.0, 6.0, 7.0, 8.0]);
    assert_eq!(concat_final(Some(&a), Some(&b), 4).unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
    assert_eq!(concat_final(Some(&a), None, 4).unwrap().data(), &[1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]);
    assert_eq!(concat_final(None, Some(&b), 4).unwrap().data(), &[0.0, 0.0, 0.0, 0.0, 5.0, 6.0, 7.0, 8.0]);
    assert!(concat_final(Some(&a), Some(&Tensor::zeros(&[3])), 4).is_err());

    let head = HeadParams::init(8, 4, 9);
    let ab = head.forward(&concat_final(Some(&a), Some(&b), 4).unwrap()).unwrap();
    let ba = head.forward(&concat_final(Some(&b), Some(&a), 4).unwrap()).unwrap();
    assert!(ab.max_abs_diff(&ba) > 1e-6);
}

#[test]
fn backbone_is_frozen_and_deterministic() {
    let a = backbone(16, 4);
    let b = backbone(16, 4);
    assert!(a.params().iter().all(|p| !p.trainable));
    assert_eq!(a.fingerprint(), b.fingerprint());
    assert_ne!(a.fingerprint(), backbone(16, 5).fingerprint());
    let z = frames(5, 16, 2);
    assert_eq!(a.encode(&z).unwrap(), b.encode(&z).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn logit_shift_changes_nothing(
        logits in prop::collection::vec(-20.0f64..20.0, 8),
        shift in -50.0f64..50.0,
        label in 0usize..8,
    ) {
        let w: Vec<f64> = (1..=8).map(f64::from).collect();
        let a = Tensor::vector(logits.clone());
        let b = Tensor::vector(logits.iter().map(|v| v + shift).collect());
        let (la, lb) = (weighted_ce(&a, label, &w).unwrap(), weighted_ce(&b, label, &w).unwrap());
        prop_assert!((la - lb).abs() <= 1e-9 * la.abs().max(1.0));
        let (pa, pb) = (softmax(&a), softmax(&b));
        prop_assert_eq!(argmax(pa.data()), argmax(pb.data()));
    }

    #[test]
    fn weight_scaling_scales_loss(
        logits in prop::collection::vec(-20.0f64..20.0, 8),
        c in 0.01f64..100.0,
        label in 0usize..8,
    ) {
        let w: Vec<f64> = (1..=8).map(|k| 0.5 + f64::from(k) / 4.0).collect();
        let scaled: Vec<f64> = w.iter().map(|v| v * c).collect();
        let t = Tensor::vector(logits);
        let (l1, l2) = (weighted_ce(&t, label, &w).unwrap(), weighted_ce(&t, label, &scaled).unwrap());
        prop_assert!((l2 - c * l1).abs() <= 1e-12 * (c * l1).abs().max(1e-300));
    }
}

fn argmax(v: &[f64]) -> usize {
    (0..v.len()).fold(0, |best, i| if v[i] > v[best] { i } else { best })
}
