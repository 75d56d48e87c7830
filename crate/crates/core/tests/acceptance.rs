//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails.

mod common;

use std::time::Instant;

use common::*;
use serde::Deserialize;
use upda_core::daca::{
    d_mmd_value, loss_d_mmd, loss_d_rank, loss_daca, pair_weight, source_pairs, DacaModel, KernelConfig, RankHead,
};
use upda_core::dataset::{build_domain, DomainConfig};
use upda_core::eval::{compare_methods, fit_logistic, logistic5, plcc_after_fit, run_protocol, srcc, ProtocolConfig};
use upda_core::nn::InitScheme;
use upda_core::params::ParamSet;
use upda_core::pffa::{
    gate_from_errors, gate_h, loss_discriminator, loss_pffa, loss_quality, AdvLabelConvention, GateMode, PffaOptions,
    WH, WK, WQ, WV,
};
use upda_core::train::{descriptors, train_upda, DomainView, Method, TrainConfig};
use upda_core::{Graph, Matrix};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_certification() -> Outcome {
    let start = Instant::now();
    let mos = [0.7, 0.2, 0.45, 0.9];
    let mut errors: Vec<(&str, f64)> = Vec::new();

    let (model, params) = small_pffa(21);
    let head = RankHead::new(32, &[]);
    let mut daca_params = params.select_groups(&["g"]);
    daca_params.merge(&head.init_params(21, InitScheme::UniformFanin));
    let xs = stats(4, 1);
    let pairs = source_pairs(&mos);
    errors.push((
        "L_D-rank",
        grad_check(&daca_params, |g, b| {
            let x = g.constant(xs.clone());
            let f = model.backbone.forward(g, b, x);
            loss_d_rank(g, b, &head, f, &pairs).unwrap()
        }),
    ));

    let mut mmd_params = ParamSet::new();
    mmd_params.insert("xs.s", random_matrix(4, 6, 2), true);
    mmd_params.insert("xs.t", random_matrix(3, 6, 3), true);
    errors.push((
        "L_D-MMD",
        grad_check(&mmd_params, |g, b| {
            loss_d_mmd(
                g,
                b.var("xs.s"),
                &[0.9, 0.6, 0.75, 0.55],
                b.var("xs.t"),
                &[0.5, 1.0, 2.0],
            )
            .unwrap()
        }),
    ));

    let daca = DacaModel {
        backbone: model.backbone.clone(),
        head: head.clone(),
        kernel: KernelConfig::default(),
    };
    let xt = stats(3, 4);
    let bw = {
        let mut g = Graph::new();
        let b = daca_params.bind(&mut g);
        loss_daca(&mut g, &b, &daca, &xs, &mos, &xt, 1.0, None).unwrap().1
    };
    errors.push((
        "L_DACA",
        grad_check(&daca_params, |g, b| {
            loss_daca(g, b, &daca, &xs, &mos, &xt, 1.0, Some(&bw)).unwrap().0.total
        }),
    ));

    errors.push((
        "L_Q",
        grad_check(&params.select_groups(&["g", "reg"]), |g, b| {
            let x = g.constant(xs.clone());
            let f = model.backbone.forward(g, b, x);
            let p = model.reg.forward(g, b, f);
            loss_quality(g, p, &mos).unwrap()
        }),
    ));

    let xt4 = stats(4, 5);
    for (name, convention) in [
        ("L_D(default labels)", AdvLabelConvention::Paper),
        ("L_D(conventional)", AdvLabelConvention::Conventional),
    ] {
        errors.push((
            name,
            grad_check(&params, |g, b| {
                g.set_reversal(false);
                let s = g.constant(xs.clone());
                let t = g.constant(xt4.clone());
                let fs = model.backbone.forward(g, b, s);
                let ft = model.backbone.forward(g, b, t);
                let (hs, ht) = model.fusion.fuse_symmetric(g, b, fs, ft);
                loss_discriminator(g, b, &model.disc, hs, ht, &[1, 0, 1, 1], 0.6, convention)
                    .unwrap()
                    .total
            }),
        ));
    }

    let opts = PffaOptions {
        mu: 0.8,
        lambda: 1.0,
        convention: AdvLabelConvention::Paper,
    };
    let gate = GateMode::Forced(vec![1, 1, 0, 1]);
    errors.push((
        "L_PFFA",
        grad_check(&params, |g, b| {
            g.set_reversal(false);
            loss_pffa(g, b, &model, &xs, &mos, &xt4, &opts, &gate).unwrap().total
        }),
    ));

    let worst = errors.iter().map(|e| e.1).fold(0.0, f64::max);
    let secs = start.elapsed().as_secs_f64();
    let list: Vec<String> = errors.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    check(
        worst < FD_TOLERANCE && secs < 60.0,
        format!("max rel err {worst:.2e} in {secs:.1}s [{}]", list.join(", ")),
    )
}

fn mmd_oracle_equivalence() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut min_value = f64::INFINITY;
    for seed in 0..50u64 {
        let p = 2 + (seed as usize % 9);
        let m = 2 + (seed as usize * 7 % 9);
        let s = random_matrix(p, 5, seed);
        let t = random_matrix(m, 5, seed + 1000);
        let w: Vec<f64> = (0..p).map(|i| pair_weight(i as f64, (seed % 4) as f64)).collect();
        let bw = [0.4, 1.0, 2.5];
        let fast = d_mmd_value(&s, &w, &t, &bw).unwrap();
        let slow = mmd_oracle(&s, &w, &t, &bw);
        worst = worst.max((fast - slow).abs() / slow.abs().max(1e-300));
        min_value = min_value.min(fast);
    }
    let same = random_matrix(7, 5, 99);
    let identical = d_mmd_value(&same, &[1.0; 7], &same, &[0.5, 1.0, 2.0]).unwrap();
    check(
        worst < 1e-10 && identical.abs() < 1e-10 && min_value >= -1e-12,
        format!("max rel err {worst:.1e}, identical {identical:.1e}, min {min_value:.1e}"),
    )
}

fn weight_law() -> Outcome {
    let half = pair_weight(5.0, 5.0);
    let w = pair_weight(7.0, 3.0);
    let expected = 1.0 / (1.0 + (-4.0f64).exp());
    let symmetric = (0..100).all(|k| {
        let (a, b) = (k as f64 * 0.1, 10.0 - k as f64 * 0.07);
        pair_weight(a, b) == pair_weight(b, a)
    });
    check(
        half == 0.5 && (w - expected).abs() < 1e-12 && symmetric,
        format!("w(5,5)={half}, w(7,3)={w:.12}, symmetric={symmetric}"),
    )
}

fn grl_contract() -> Outcome {
    let (model, params) = small_pffa(31);
    let (fs0, ft0) = (random_matrix(3, 32, 1), random_matrix(3, 32, 2));
    let mut ok = true;
    let mut notes = Vec::new();
    for lambda in [0.3, 1.0] {
        let run = |reversal: bool| {
            let mut g = Graph::new();
            g.set_reversal(reversal);
            let b = params.bind(&mut g);
            let fs = g.param(fs0.clone());
            let ft = g.param(ft0.clone());
            let l = loss_discriminator(
                &mut g,
                &b,
                &model.disc,
                fs,
                ft,
                &[1, 0, 1],
                lambda,
                AdvLabelConvention::Paper,
            )
            .unwrap()
            .total;
            let grads = g.backward(l);
            let dw = b.gradients(&grads, &params);
            (
                g.scalar(l).to_bits(),
                grads.get(fs).unwrap().clone(),
                grads.get(ft).unwrap().clone(),
                dw.get("disc.l1.w").unwrap().clone(),
            )
        };
        let (v_on, gs_on, gt_on, dw_on) = run(true);
        let (v_off, gs_off, gt_off, dw_off) = run(false);
        let scaled = |m: &Matrix| m.map(|x| -lambda * x);
        let forward_same = v_on == v_off;
        let feature_scaled = gs_on == scaled(&gs_off) && gt_on == scaled(&gt_off);
        let head_untouched = dw_on == dw_off;
        ok &= forward_same && feature_scaled && head_untouched && gs_off.max_abs() > 0.0;
        notes.push(format!(
            "λ={lambda}: forward bitwise {forward_same}, feature grad ×(−λ) {feature_scaled}, disc grad unchanged {head_untouched}"
        ));
    }
    check(ok, notes.join("; "))
}

fn fusion_properties() -> Outcome {
    let (model, mut params) = small_pffa(41);
    let (a, b) = (random_matrix(3, 32, 3), random_matrix(3, 32, 4));
    let fuse = |params: &ParamSet, x: &Matrix, y: &Matrix| {
        let mut g = Graph::new();
        let bind = params.bind(&mut g);
        let (x, y) = (g.constant(x.clone()), g.constant(y.clone()));
        let (hx, hy) = model.fusion.fuse_symmetric(&mut g, &bind, x, y);
        (g.value(hx).clone(), g.value(hy).clone())
    };
    let (s1, t1) = fuse(&params, &a, &b);
    let (t2, s2) = fuse(&params, &b, &a);
    let symmetric = s1 == s2 && t1 == t2;

    let mut g = Graph::new();
    let bind = params.bind(&mut g);
    let q = g.constant(random_matrix(4, 8, 5));
    let kv = g.constant(random_matrix(4, 8, 6));
    let out = model.fusion.mca(&mut g, &bind, q, kv, kv);
    let mut row_err: f64 = 0.0;
    for att in &out.attention {
        let m = g.value(*att);
        for r in 0..m.rows() {
            row_err = row_err.max((m.row(r).iter().sum::<f64>() - 1.0).abs());
        }
    }

    for name in [WQ, WK, WV, WH] {
        let shape = params.tensor(name).shape();
        *params.get_mut(name).unwrap() = Matrix::zeros(shape.0, shape.1);
    }
    let (zs, zt) = fuse(&params, &a, &b);
    let residual = zs == a && zt == b;
    check(
        residual && symmetric && row_err < 1e-12,
        format!("residual identity {residual}, role-swap symmetric {symmetric}, attention row error {row_err:.1e}"),
    )
}

fn gate_semantics() -> Outcome {
    // (raw, fused, mos): fused worse → 0, fused better → 1, tie → 1.
    let truth = gate_from_errors(4.0, 1.0) == 0
        && gate_from_errors(1.0, 4.0) == 1
        && gate_h(7.0, 5.0, 6.5) == 0
        && gate_h(7.0, 6.0, 6.2) == 1
        && gate_h(6.0, 7.0, 6.5) == 1;

    let (model, params) = small_pffa(51);
    let (hs, ht) = (random_matrix(4, 32, 7), random_matrix(4, 32, 8));
    let eval = |h: &[u8]| {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let (s, t) = (g.constant(hs.clone()), g.constant(ht.clone()));
        let terms = loss_discriminator(&mut g, &b, &model.disc, s, t, h, 1.0, AdvLabelConvention::Paper).unwrap();
        let d = model.disc.forward(&mut g, &b, s);
        (g.scalar(terms.source), g.value(d).as_slice().to_vec())
    };
    let (l1, d) = eval(&[1, 1, 1, 1]);
    let (l0, _) = eval(&[1, 0, 1, 0]);
    // Flipping h_k from 1 to 0 replaces −log(1 − D_k) by −log D_k in the mean.
    let predicted = [1usize, 3]
        .iter()
        .map(|&k| ((1.0 - d[k]).ln() - d[k].ln()) / 4.0)
        .sum::<f64>();
    let err = ((l0 - l1) - predicted).abs();
    check(
        truth && err < 1e-12,
        format!(
            "truth table {truth}, forced-h shift {:.6} vs predicted {predicted:.6} (err {err:.1e})",
            l0 - l1
        ),
    )
}

fn metric_suite() -> Outcome {
    let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
    let up: Vec<f64> = x.iter().map(|v| v.powi(3)).collect();
    let down: Vec<f64> = x.iter().map(|v| -v.exp()).collect();
    let s_up = srcc(&x, &up).unwrap();
    let s_down = srcc(&x, &down).unwrap();
    let s_mixed = srcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap();

    let mos: Vec<f64> = (0..30)
        .map(|i| (i as f64 * 0.37).sin() * 4.0 + 5.0 + i as f64 * 0.01)
        .collect();
    let affine: Vec<f64> = mos.iter().map(|y| 2.5 * y - 3.0).collect();
    let (p_affine, _) = plcc_after_fit(&affine, &mos).unwrap();

    let beta = [3.0, 1.2, 0.5, 0.4, 5.0];
    let xs: Vec<f64> = (0..40).map(|i| -4.0 + i as f64 * 0.2).collect();
    let ys: Vec<f64> = xs.iter().map(|&v| logistic5(&beta, v)).collect();
    let fit = fit_logistic(&xs, &ys).unwrap();
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(&v, y)| (fit.apply(v) - y).powi(2))
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    check(
        s_up == 1.0 && s_down == -1.0 && (s_mixed - 0.8).abs() < 1e-12 && (p_affine - 1.0).abs() < 1e-6 && rms < 1e-3,
        format!("SRCC ±1: {s_up}/{s_down}, SRCC(1,3,2,4)={s_mixed}, PLCC affine {p_affine:.9}, refit RMS {rms:.1e}"),
    )
}

#[derive(Deserialize)]
struct Scenario {
    source: DomainConfig,
    target: DomainConfig,
    #[serde(default)]
    train: TrainConfig,
    methods: Vec<Method>,
    seeds: Vec<u64>,
    folds: usize,
    data_seed: u64,
}

fn bundled_scenario() -> Scenario {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/cross_distortion.json");
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    serde_json::from_value(v).unwrap()
}

/// Runs the bundled scenario once; criteria 8 and 9 both read it.
fn adaptation_benefit(audit_ok: &mut bool) -> Outcome {
    let sc = bundled_scenario();
    let start = Instant::now();
    let source = build_domain(&sc.source, sc.data_seed).unwrap();
    let target = build_domain(&sc.target, sc.data_seed).unwrap();
    let cfg = ProtocolConfig {
        methods: sc.methods,
        seeds: sc.seeds,
        folds: sc.folds,
        train: sc.train,
        threads: 0,
    };
    let out = run_protocol("cross_distortion", &source, &target, &cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    *audit_ok = out.audits.iter().all(|a| {
        a.content_overlap.is_empty()
            && (a.method != Method::NoAdapt || (a.target_reads == 0 && a.target_read.is_empty()))
    });
    let table = compare_methods(&out.rows).unwrap();
    let mean = |m: Method| table.entries.iter().find(|e| e.method == m).unwrap().srcc_mean;
    let (no, dir, upda) = (mean(Method::NoAdapt), mean(Method::DirAdapt), mean(Method::Upda));
    check(
        upda - no >= 0.05 && upda >= dir && secs < 900.0,
        format!(
            "mean SRCC NoAdapt {no:.4}, DirAdapt {dir:.4}, UPDA {upda:.4} (UPDA−NoAdapt {:+.4}, need ≥ +0.05; UPDA ≥ DirAdapt {}) in {secs:.0}s",
            upda - no,
            upda >= dir
        ),
    )
}

fn determinism_and_hygiene(scenario_audit_ok: bool) -> Outcome {
    let (s, t) = tiny_domains();
    let (ss, ts) = (descriptors(&s).unwrap(), descriptors(&t).unwrap());
    let cfg = tiny_train();
    let train = || {
        let src = DomainView::full(&s, &ss).unwrap();
        let tgt = DomainView::full(&t, &ts).unwrap();
        let o = train_upda(&src, &tgt, &cfg).unwrap();
        [o.stage1.to_bytes(), o.final_model.to_bytes(), o.inference.to_bytes()]
    };
    let same_ckpt = train() == train();
    let protocol = ProtocolConfig {
        methods: vec![Method::NoAdapt, Method::DirAdapt, Method::Upda],
        seeds: vec![3],
        folds: 4,
        train: cfg.clone(),
        threads: 0,
    };
    let report = || {
        let out = run_protocol("cross_distortion", &s, &t, &protocol).unwrap();
        let ok = out
            .audits
            .iter()
            .all(|a| a.content_overlap.is_empty() && (a.method != Method::NoAdapt || a.target_reads == 0));
        (
            upda_core::eval::rows_to_csv(&out.rows),
            serde_json::to_string(&out.rows).unwrap(),
            ok,
        )
    };
    let (csv_a, json_a, ok_a) = report();
    let (csv_b, json_b, ok_b) = report();
    let same_report = csv_a == csv_b && json_a == json_b;
    check(
        same_ckpt && same_report && ok_a && ok_b && scenario_audit_ok,
        format!(
            "identical checkpoints {same_ckpt}, identical reports {same_report}, zero overlap and NoAdapt target reads = 0: {}",
            ok_a && ok_b && scenario_audit_ok
        ),
    )
}

fn main() {
    let mut audit_ok = false;
    let results: Vec<(&str, Outcome)> = vec![
        ("1 gradient certification", gradient_certification()),
        ("2 D-MMD oracle equivalence", mmd_oracle_equivalence()),
        ("3 pair weight law", weight_law()),
        ("4 gradient reversal contract", grl_contract()),
        ("5 fusion properties", fusion_properties()),
        ("6 gate semantics", gate_semantics()),
        ("7 metric suite", metric_suite()),
        ("8 end-to-end adaptation benefit", adaptation_benefit(&mut audit_ok)),
    ];
    let mut results = results;
    results.push(("9 determinism and protocol hygiene", determinism_and_hygiene(audit_ok)));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(d) => println!("criterion {name}: PASS — {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {name}: FAIL — {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
