use gaitlab_model::{init_ted, ted_backward, ted_forward, ParamSet, TedConfig, TedError, Tensor};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> TedConfig {
    TedConfig {
        queries: 4,
        layers: 2,
        heads: 2,
        dim: 8,
        ffn_mult: 2,
        self_attention: true,
    }
}

fn frames(t: usize, d: usize, seed: u64) -> Tensor {
    Tensor::randn(&[t, d], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn permute_rows(v: &Tensor, perm: &[usize]) -> Tensor {
    let mut data = Vec::with_capacity(v.len());
    for &i in perm {
        data.extend_from_slice(v.row(i));
    }
    Tensor::matrix(v.rows(), v.cols(), data).unwrap()
}

#[test]
fn default_parameter_count_by_hand() {
    // D=64, M=32, T_max=32, L=3, FFN width 256.
    let attn = 4 * (64 * 64 + 64);
    let norm = 2 * 64;
    let ffn = 64 * 256 + 256 + 256 * 64 + 64;
    let layer = 2 * attn + 3 * norm + ffn;
    let total = 32 * 64 + 32 * 64 + 3 * layer + norm;
    assert_eq!(total, 204_480);
    let params = init_ted(TedConfig::default(), 32, 1).unwrap();
    assert_eq!(params.num_params(), total);
    assert_eq!(TedConfig::default().param_count(32), total);
}

#[test]
fn parameter_count_matches_formula_across_configs() {
    for (m, l, h, d, f, sa) in [(4, 1, 1, 4, 1, false), (4, 2, 4, 16, 4, true), (7, 3, 2, 6, 3, true)] {
        let cfg = TedConfig {
            queries: m,
            layers: l,
            heads: h,
            dim: d,
            ffn_mult: f,
            self_attention: sa,
        };
        let t_max = 5;
        let attn = 4 * (d * d + d);
        let ffn = 2 * d * f * d + f * d + d;
        let per_layer = if sa { 2 * attn + 6 * d } else { attn + 4 * d } + ffn;
        let expected = m * d + t_max * d + l * per_layer + 2 * d;
        assert_eq!(init_ted(cfg, t_max, 0).unwrap().num_params(), expected, "{cfg:?}");
        assert_eq!(cfg.param_count(t_max), expected);
    }
}

#[test]
fn same_seed_same_parameters() {
    let a = init_ted(small(), 8, 7).unwrap();
    let b = init_ted(small(), 8, 7).unwrap();
    let c = init_ted(small(), 8, 8).unwrap();
    assert_eq!(a.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_ne!(a.flatten(), c.flatten());
}

#[test]
fn forward_is_bit_reproducible() {
    let p = init_ted(small(), 8, 3).unwrap();
    let v = frames(6, 8, 1);
    let (a, _) = ted_forward(&p, &v).unwrap();
    let (b, _) = ted_forward(&p, &v).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_positions_make_frame_order_irrelevant() {
    let mut p = init_ted(small(), 8, 3).unwrap();
    p.pos_emb.tensor.scale(0.0);
    let v = frames(8, 8, 2);
    let (base, _) = ted_forward(&p, &v).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let mut perm: Vec<usize> = (0..8).collect();
        perm.shuffle(&mut rng);
        let (moved, _) = ted_forward(&p, &permute_rows(&v, &perm)).unwrap();
        assert!(base.max_abs_diff(&moved) < 1e-9, "{}", base.max_abs_diff(&moved));
    }
}

#[test]
fn seeded_positions_make_frame_order_matter() {
    let p = init_ted(small(), 8, 3).unwrap();
    let v = frames(8, 8, 2);
    let (base, _) = ted_forward(&p, &v).unwrap();
    let perm: Vec<usize> = (0..8).rev().collect();
    let (moved, _) = ted_forward(&p, &permute_rows(&v, &perm)).unwrap();
    assert!(base.max_abs_diff(&moved) > 1e-6, "{}", base.max_abs_diff(&moved));
}

#[test]
fn cross_attention_maps_are_row_stochastic() {
    let p = init_ted(small(), 8, 3).unwrap();
    let (_, cache) = ted_forward(&p, &frames(5, 8, 9)).unwrap();
    let maps = cache.cross_attention_maps();
    assert_eq!(maps.len(), 2);
    for layer in maps {
        assert_eq!(layer.len(), 2);
        for m in layer {
            assert_eq!(m.shape(), &[4, 5]);
            for i in 0..4 {
                assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
    assert_eq!(cache.self_attention_maps().len(), 2);
}

#[test]
fn backward_is_linear_in_upstream() {
    let p = init_ted(small(), 8, 3).unwrap();
    let v = frames(6, 8, 5);
    let (_, cache) = ted_forward(&p, &v).unwrap();
    let (g0, dv0) = ted_backward(&p, Some(&cache), &Tensor::zeros(&[8])).unwrap();
    assert!(g0.flatten().iter().all(|&g| g == 0.0));
    assert!(dv0.data().iter().all(|&g| g == 0.0));

    let up = Tensor::randn(&[8], 1.0, &mut ChaCha8Rng::seed_from_u64(6));
    let (g1, dv1) = ted_backward(&p, Some(&cache), &up).unwrap();
    let (g2, dv2) = ted_backward(&p, Some(&cache), &up.scaled(2.0)).unwrap();
    for (a, b) in g1.flatten().iter().zip(g2.flatten()) {
        assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-300), "{a} {b}");
    }
    assert!(dv1.scaled(2.0).max_abs_diff(&dv2) <= 1e-12);
}

#[test]
fn error_contracts() {
    let p = init_ted(small(), 4, 3).unwrap();
    assert!(matches!(
        ted_forward(&p, &frames(5, 8, 1)),
        Err(TedError::TooManyFrames { frames: 5, max: 4 })
    ));
    assert!(ted_forward(&p, &frames(3, 6, 1)).is_err());
    assert!(matches!(
        ted_backward(&p, None, &Tensor::zeros(&[8])),
        Err(TedError::MissingForwardState)
    ));
    let bad = TedConfig { heads: 3, ..small() };
    assert!(matches!(init_ted(bad, 4, 0), Err(TedError::InvalidConfig(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn output_has_model_dim_for_any_valid_length(t in 1usize..=8, seed in 0u64..1000) {
        let p = init_ted(small(), 8, seed).unwrap();
        let (f, cache) = ted_forward(&p, &frames(t, 8, seed ^ 1)).unwrap();
        prop_assert_eq!(f.shape(), &[8]);
        prop_assert!(f.is_finite());
        prop_assert_eq!(cache.q_out.shape(), &[4, 8]);
    }
}
