mod support;

use priorformer_core::dataio::{decode_pfvf, encode_pfvf, FeatureSequence, Frame};
use priorformer_core::encoder::LAYER_NORM_EPS;
use priorformer_core::metrics::{l1_loss, plcc, srcc};
use priorformer_core::temporal::{current_element, memory_element, video_score, PoolingConfig};
use priorformer_core::train::split_dataset;
use priorformer_core::{Graph, Tensor};
use proptest::prelude::*;

use support::*;

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
}

fn scores() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, 1..30)
}

/// Small integers so that ties are common.
fn tied(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec((0i32..6).prop_map(f64::from), n)
}

fn pair_with_ties() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..25).prop_flat_map(|n| {
        prop_oneof![
            (tied(n), tied(n)),
            (tied(n), prop::collection::vec(-10.0f64..10.0, n)),
            (
                prop::collection::vec(-10.0f64..10.0, n),
                prop::collection::vec(-10.0f64..10.0, n)
            ),
        ]
    })
}

fn varies(v: &[f64]) -> bool {
    v.iter().any(|x| *x != v[0])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn softmax_rows_are_distributions(x in matrix(4, 5), shift in -50.0f64..50.0) {
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let s = g.softmax_rows(a).unwrap();
        let b = g.constant(x.map(|v| v + shift));
        let t = g.softmax_rows(b).unwrap();
        for r in 0..4 {
            let row = g.value(s).row(r);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&p| p > 0.0));
        }
        prop_assert!(g.value(s).max_abs_diff(g.value(t)).unwrap() < 1e-12);
    }

    #[test]
    fn layer_norm_standardizes_rows(x in matrix(3, 7), scale in 0.01f64..10.0) {
        let x = x.map(|v| v * scale);
        let mut g = Graph::new();
        let a = g.constant(x.clone());
        let gain = g.constant(Tensor::full(&[7], 1.0));
        let bias = g.constant(Tensor::zeros(&[7]));
        let y = g.layer_norm(a, gain, bias, LAYER_NORM_EPS).unwrap();
        for r in 0..3 {
            let input = x.row(r);
            let m_in = input.iter().sum::<f64>() / 7.0;
            let v_in = input.iter().map(|v| (v - m_in).powi(2)).sum::<f64>() / 7.0;
            let row = g.value(y).row(r);
            let mean = row.iter().sum::<f64>() / 7.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0;
            prop_assert!(mean.abs() <= 1e-10);
            prop_assert!((var - v_in / (v_in + LAYER_NORM_EPS)).abs() <= 1e-6);
        }
    }

    #[test]
    fn matmul_is_associative(a in matrix(3, 4), b in matrix(4, 2), c in matrix(2, 5)) {
        let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
        let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
        prop_assert!(left.max_abs_diff(&right).unwrap() <= 1e-9);
    }

    #[test]
    fn split_is_a_partition(n in 2usize..60, ratio in 0.05f64..0.95, seed in any::<u64>()) {
        let items: Vec<usize> = (0..n).collect();
        let (train, test) = split_dataset(&items, ratio, seed).unwrap();
        prop_assert!(!train.is_empty() && !test.is_empty());
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort();
        prop_assert_eq!(all, items.clone());
        prop_assert_eq!(split_dataset(&items, ratio, seed).unwrap(), (train, test));
    }

    #[test]
    fn l1_matches_naive_loop(pair in pair_with_ties()) {
        let (p, m) = pair;
        let mut total = 0.0;
        for i in 0..p.len() {
            total += (p[i] - m[i]).abs();
        }
        prop_assert!((l1_loss(&p, &m).unwrap() - total / p.len() as f64).abs() <= 1e-12);
    }

    #[test]
    fn feature_files_round_trip(
        frames in 1usize..4,
        tokens in 1usize..4,
        widths in (1usize..5, 1usize..4, 1usize..4),
        mos in prop::option::of(1.0f64..5.0),
        seed in any::<u64>(),
    ) {
        let mut rng = priorformer_core::rng::SeededRng::new(seed);
        let video = FeatureSequence {
            id: "v".into(),
            frames: (0..frames)
                .map(|_| Frame {
                    features: rng.normal_tensor(&[tokens, widths.0], 1.0),
                    content: rng.normal_tensor(&[widths.1], 1.0),
                    distortion: rng.normal_tensor(&[widths.2], 1.0),
                })
                .collect(),
            mos,
        };
        let bytes = encode_pfvf(&video).unwrap();
        let back = decode_pfvf(&bytes, "v").unwrap();
        prop_assert_eq!(back.frames.len(), frames);
        prop_assert_eq!(back.mos.is_some(), mos.is_some());
        for (a, b) in video.frames.iter().zip(&back.frames) {
            prop_assert_eq!(a.features.shape(), b.features.shape());
            for (x, y) in a.features.data().iter().zip(b.features.data()) {
                prop_assert_eq!(*x as f32 as f64, *y);
            }
        }
        prop_assert_eq!(encode_pfvf(&back).unwrap(), bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn memory_is_the_window_minimum(q in scores(), tau in 1usize..15) {
        for t in 0..q.len() {
            let m = memory_element(&q, t, tau).unwrap();
            prop_assert_eq!(m, reference_memory(&q, t, tau));
        }
    }

    #[test]
    fn current_lies_within_its_window(q in scores(), tau in 1usize..15) {
        for t in 0..q.len() {
            let c = current_element(&q, t, tau).unwrap();
            let win = current_window(&q, t, tau);
            let lo = win.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = win.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo <= c && c <= hi);
            prop_assert!((c - reference_current(&q, t, tau)).abs() <= 1e-12);
        }
    }

    #[test]
    fn video_score_is_translation_equivariant(
        q in scores(),
        tau in 1usize..15,
        gamma in 0.0f64..=1.0,
        delta in -10.0f64..10.0,
    ) {
        let config = PoolingConfig { tau, gamma };
        let base = video_score(&q, &config).unwrap().score;
        let shifted: Vec<f64> = q.iter().map(|v| v + delta).collect();
        prop_assert!((video_score(&shifted, &config).unwrap().score - (base + delta)).abs() <= 1e-9);
        prop_assert!((base - reference_pool(&q, tau, gamma)).abs() <= 1e-12);
    }

    #[test]
    fn unit_window_pure_memory_uses_previous_frame(q in scores()) {
        let score = video_score(&q, &PoolingConfig { tau: 1, gamma: 1.0 }).unwrap().score;
        let mut lagged = vec![q[0]];
        lagged.extend_from_slice(&q[..q.len() - 1]);
        let expected = lagged.iter().sum::<f64>() / q.len() as f64;
        prop_assert!((score - expected).abs() <= 1e-12);
    }

    #[test]
    fn metrics_match_brute_force(pair in pair_with_ties()) {
        let (x, y) = pair;
        prop_assume!(varies(&x) && varies(&y));
        prop_assert!((plcc(&x, &y).unwrap() - brute_plcc(&x, &y)).abs() <= 1e-9);
        prop_assert!((srcc(&x, &y).unwrap() - brute_srcc(&x, &y)).abs() <= 1e-9);
    }

    #[test]
    fn srcc_ignores_monotone_maps(pair in pair_with_ties(), k in 0.1f64..3.0) {
        let (x, y) = pair;
        prop_assume!(varies(&x) && varies(&y));
        let base = srcc(&x, &y).unwrap();
        let cubed: Vec<f64> = x.iter().map(|v| v * v * v + k * v).collect();
        let squashed: Vec<f64> = y.iter().map(|v| (v / 4.0).atan()).collect();
        prop_assert!((srcc(&cubed, &y).unwrap() - base).abs() <= 1e-12);
        prop_assert!((srcc(&x, &squashed).unwrap() - base).abs() <= 1e-12);
    }

    #[test]
    fn plcc_ignores_positive_affine_maps(pair in pair_with_ties(), a in 0.01f64..100.0, b in -50.0f64..50.0) {
        let (x, y) = pair;
        prop_assume!(varies(&x) && varies(&y));
        let base = plcc(&x, &y).unwrap();
        let mapped: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        prop_assert!((plcc(&mapped, &y).unwrap() - base).abs() <= 1e-12);
        let negated: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((plcc(&negated, &y).unwrap() + base).abs() <= 1e-12);
    }
}
