mod common;

use common::*;
use proptest::prelude::*;
use upda_core::backbone::FeatureVector;
use upda_core::daca::{d_mmd_value, pair_weight, source_pairs};
use upda_core::dataset::{build_domain, split_folds};
use upda_core::eval::{pearson, plcc_after_fit, srcc};
use upda_core::pffa::{gate_h, tokens, untokenize};
use upda_core::{Graph, Matrix};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-2.0f64..2.0, rows * cols).prop_map(move |v| Matrix::from_vec(rows, cols, v))
}

fn distinct(v: &[f64]) -> bool {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[1] - w[0] > 1e-9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mmd_matches_brute_force(
        p in 2usize..=10,
        m in 2usize..=10,
        seed in any::<u64>(),
        weights in prop::collection::vec(0.5f64..1.0, 10),
        base in 0.3f64..3.0,
    ) {
        let s = random_matrix(p, 5, seed);
        let t = random_matrix(m, 5, seed ^ 1);
        let bw = [0.5 * base, base, 2.0 * base];
        let w = &weights[..p];
        let fast = d_mmd_value(&s, w, &t, &bw).unwrap();
        let slow = mmd_oracle(&s, w, &t, &bw);
        prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1e-12), "{fast} vs {slow}");
        prop_assert!(fast >= -1e-12);
    }

    #[test]
    fn mmd_of_identical_uniform_samples_vanishes(s in matrix(6, 4)) {
        let v = d_mmd_value(&s, &[1.0; 6], &s, &[1.0, 2.0]).unwrap();
        prop_assert!(v.abs() < 1e-10);
    }

    #[test]
    fn pair_weight_is_symmetric_and_bounded(a in 0.0f64..10.0, b in 0.0f64..10.0) {
        let w = pair_weight(a, b);
        prop_assert_eq!(w, pair_weight(b, a));
        prop_assert!((0.5..=1.0).contains(&w));
    }

    #[test]
    fn source_pairs_cover_ordered_pairs(mos in prop::collection::vec(0.0f64..10.0, 2..8)) {
        let pairs = source_pairs(&mos);
        prop_assert_eq!(pairs.len(), mos.len() * (mos.len() - 1));
        for p in &pairs {
            prop_assert!(p.i != p.j);
            prop_assert_eq!(p.label, Some(mos[p.i] > mos[p.j]));
        }
    }

    #[test]
    fn srcc_invariant_under_monotone_maps(
        pred in prop::collection::vec(-5.0f64..5.0, 4..30),
        mos in prop::collection::vec(0.0f64..10.0, 30),
    ) {
        let mos = &mos[..pred.len()];
        prop_assume!(distinct(&pred) && distinct(mos));
        let base = srcc(&pred, mos).unwrap();
        let mapped: Vec<f64> = pred.iter().map(|x| (0.7 * x).exp() + x.powi(3)).collect();
        prop_assert!((srcc(&mapped, mos).unwrap() - base).abs() < 1e-12);
        let flipped: Vec<f64> = pred.iter().map(|x| -x).collect();
        prop_assert!((srcc(&flipped, mos).unwrap() + base).abs() < 1e-12);
        prop_assert!(base.abs() <= 1.0);
    }

    #[test]
    fn pearson_invariant_under_positive_affine_maps(
        pred in prop::collection::vec(-5.0f64..5.0, 3..30),
        mos in prop::collection::vec(0.0f64..10.0, 30),
        a in 0.1f64..10.0,
        c in -10.0f64..10.0,
    ) {
        let mos = &mos[..pred.len()];
        prop_assume!(distinct(&pred) && distinct(mos));
        let base = pearson(&pred, mos).unwrap();
        let mapped: Vec<f64> = pred.iter().map(|x| a * x + c).collect();
        prop_assert!((pearson(&mapped, mos).unwrap() - base).abs() < 1e-10);
    }

    #[test]
    fn token_roundtrip(v in prop::collection::vec(-3.0f64..3.0, 32)) {
        let f = FeatureVector(v);
        let t = tokens(&f, &small_fusion()).unwrap();
        prop_assert_eq!(t.shape(), (4, 8));
        prop_assert_eq!(untokenize(&t), f);
    }

    #[test]
    fn gate_prefers_the_fused_path_on_ties(raw in -5.0f64..5.0, fused in -5.0f64..5.0, mos in -5.0f64..5.0) {
        let h = gate_h(raw, fused, mos);
        prop_assert_eq!(h == 1, (fused - mos).powi(2) <= (raw - mos).powi(2));
        prop_assert_eq!(gate_h(raw, raw, mos), 1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn fusion_is_role_symmetric(seed in any::<u64>(), rows in 1usize..4) {
        let (model, params) = small_pffa(seed);
        let (a, b) = (random_matrix(rows, 32, seed), random_matrix(rows, 32, seed ^ 7));
        let run = |x: &Matrix, y: &Matrix| {
            let mut g = Graph::new();
            let bind = params.bind(&mut g);
            let (x, y) = (g.constant(x.clone()), g.constant(y.clone()));
            let (hx, hy) = model.fusion.fuse_symmetric(&mut g, &bind, x, y);
            (g.value(hx).clone(), g.value(hy).clone())
        };
        let (s1, t1) = run(&a, &b);
        let (t2, s2) = run(&b, &a);
        prop_assert_eq!(s1, s2);
        prop_assert_eq!(t1, t2);
    }

    #[test]
    fn plcc_after_fit_is_one_for_affine_predictions(
        mos in prop::collection::vec(0.0f64..10.0, 8..24),
        a in 0.2f64..5.0,
        c in -3.0f64..3.0,
    ) {
        prop_assume!(distinct(&mos));
        let pred: Vec<f64> = mos.iter().map(|y| a * y + c).collect();
        let (p, _) = plcc_after_fit(&pred, &mos).unwrap();
        prop_assert!((p - 1.0).abs() < 1e-6, "{p}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn folds_partition_content_groups(groups in 2usize..9, k in 2usize..9, seed in 0u64..4) {
        prop_assume!(k <= groups);
        let (mut cfg, _) = cross_distortion_configs(64);
        cfg.groups = groups;
        cfg.levels = vec![2, 5];
        cfg.distortions.truncate(1);
        let ds = build_domain(&cfg, seed).unwrap();
        let folds = split_folds(&ds, k).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for f in &folds {
            let train: std::collections::BTreeSet<u32> = ds.content_ids(&f.train).into_iter().collect();
            let test: std::collections::BTreeSet<u32> = ds.content_ids(&f.test).into_iter().collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(f.train.len() + f.test.len(), ds.len());
            for g in test {
                prop_assert!(seen.insert(g), "group tested twice");
            }
        }
        prop_assert_eq!(seen.len(), groups);
    }
}
