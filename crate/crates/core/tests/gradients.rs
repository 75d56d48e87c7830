mod common;

use common::*;
use upda_core::daca::{
    loss_d_mmd, loss_d_rank, loss_daca, source_pairs, target_pairs, DacaModel, KernelConfig, RankHead,
};
use upda_core::params::ParamSet;
use upda_core::pffa::{loss_discriminator, loss_pffa, loss_quality, AdvLabelConvention, GateMode, PffaOptions};

const MOS: [f64; 4] = [0.7, 0.2, 0.45, 0.9];
const H: [u8; 4] = [1, 0, 1, 1];

fn daca_model() -> (DacaModel, ParamSet) {
    let (model, mut params) = small_pffa(11);
    let head = RankHead::new(model.backbone.feature_dim(), &[6]);
    params.merge(&head.init_params(11, upda_core::nn::InitScheme::UniformFanin));
    (
        DacaModel {
            backbone: model.backbone,
            head,
            kernel: KernelConfig::default(),
        },
        params.select_groups(&["g", "rph"]),
    )
}

#[test]
fn rank_loss_gradient() {
    let (model, params) = daca_model();
    let x = stats(4, 1);
    let pairs = source_pairs(&MOS);
    let err = grad_check(&params, |g, b| {
        let xs = g.constant(x.clone());
        let f = model.backbone.forward(g, b, xs);
        loss_d_rank(g, b, &model.head, f, &pairs).unwrap()
    });
    assert!(err < FD_TOLERANCE, "relative error {err}");
}

#[test]
fn mmd_gradient_wrt_rank_features() {
    let mut params = ParamSet::new();
    params.insert("xs.s", random_matrix(5, 6, 2), true);
    params.insert("xs.t", random_matrix(4, 6, 3), true);
    let weights = [0.9, 0.6, 0.5, 0.7, 0.95];
    let bw = [0.5, 1.0, 2.0];
    let err = grad_check(&params, |g, b| {
        loss_d_mmd(g, b.var("xs.s"), &weights, b.var("xs.t"), &bw).unwrap()
    });
    assert!(err < FD_TOLERANCE, "relative error {err}");
}

#[test]
fn daca_total_gradient_through_backbone() {
    let (model, params) = daca_model();
    let (xs, xt) = (stats(4, 4), stats(3, 5));
    // Freeze the data-dependent bandwidths at their value for the
    // unperturbed parameters.
    let bw = {
        let mut g = upda_core::Graph::new();
        let b = params.bind(&mut g);
        loss_daca(&mut g, &b, &model, &xs, &MOS, &xt, 1.0, None).unwrap().1
    };
    let err = grad_check(&params, |g, b| {
        loss_daca(g, b, &model, &xs, &MOS, &xt, 1.0, Some(&bw)).unwrap().0.total
    });
    assert!(err < FD_TOLERANCE, "relative error {err}");
    assert_eq!(target_pairs(3).len(), 6);
}

#[test]
fn quality_loss_gradient() {
    let (model, params) = small_pffa(12);
    let x = stats(4, 6);
    let params = params.select_groups(&["g", "reg"]);
    let err = grad_check(&params, |g, b| {
        let xs = g.constant(x.clone());
        let f = model.backbone.forward(g, b, xs);
        let p = model.reg.forward(g, b, f);
        loss_quality(g, p, &MOS).unwrap()
    });
    assert!(err < FD_TOLERANCE, "relative error {err}");
}

fn disc_gradient(convention: AdvLabelConvention) -> f64 {
    let (model, params) = small_pffa(13);
    let (xs, xt) = (stats(4, 7), stats(4, 8));
    grad_check(&params, |g, b| {
        // Finite differences see the forward pass only; reversal is
        // certified separately.
        g.set_reversal(false);
        let s = g.constant(xs.clone());
        let t = g.constant(xt.clone());
        let fs = model.backbone.forward(g, b, s);
        let ft = model.backbone.forward(g, b, t);
        let (hs, ht) = model.fusion.fuse_symmetric(g, b, fs, ft);
        loss_discriminator(g, b, &model.disc, hs, ht, &H, 0.7, convention)
            .unwrap()
            .total
    })
}

#[test]
fn discriminator_loss_gradient_default_convention() {
    let err = disc_gradient(AdvLabelConvention::Paper);
    assert!(err < FD_TOLERANCE, "relative error {err}");
}

#[test]
fn discriminator_loss_gradient_conventional_labels() {
    let err = disc_gradient(AdvLabelConvention::Conventional);
    assert!(err < FD_TOLERANCE, "relative error {err}");
}

#[test]
fn pffa_total_gradient() {
    let (model, params) = small_pffa(14);
    let (xs, xt) = (stats(3, 9), stats(3, 10));
    let mos = &MOS[..3];
    let opts = PffaOptions {
        mu: 0.8,
        lambda: 1.0,
        convention: AdvLabelConvention::Paper,
    };
    let gate = GateMode::Forced(vec![1, 0, 1]);
    let err = grad_check(&params, |g, b| {
        g.set_reversal(false);
        loss_pffa(g, b, &model, &xs, mos, &xt, &opts, &gate).unwrap().total
    });
    assert!(err < FD_TOLERANCE, "relative error {err}");
}

#[test]
fn gradient_check_detects_a_wrong_gradient() {
    // With reversal on, analytic gradients below the reversal node flip
    // sign and must disagree with finite differences.
    let (model, params) = small_pffa(15);
    let (xs, xt) = (stats(3, 11), stats(3, 12));
    let err = grad_check(&params.select_groups(&["g", "disc"]), |g, b| {
        let s = g.constant(xs.clone());
        let t = g.constant(xt.clone());
        let fs = model.backbone.forward(g, b, s);
        let ft = model.backbone.forward(g, b, t);
        loss_discriminator(g, b, &model.disc, fs, ft, &[1, 1, 1], 1.0, AdvLabelConvention::Paper)
            .unwrap()
            .total
    });
    assert!(err > 1.0, "reversal went unnoticed ({err})");
}
