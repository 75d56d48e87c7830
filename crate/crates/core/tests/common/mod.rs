#![allow(dead_code)]

use rand::Rng as _;
use upda_core::backbone::{Backbone, BackboneConfig, STAT_DIM};
use upda_core::dataset::{build_domain, DomainConfig, DomainDataset, DomainTag, ShapeFamily};
use upda_core::params::{Bindings, ParamSet};
use upda_core::pffa::{FusionConfig, PffaModel};
use upda_core::rng::stream;
use upda_core::train::TrainConfig;
use upda_core::{Graph, Matrix, Var};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradient magnitudes below this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = stream(seed, &[0x7E57]);
    Matrix::from_vec(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
}

pub fn small_backbone() -> BackboneConfig {
    BackboneConfig {
        hidden: vec![8],
        feature_dim: 32,
    }
}

pub fn small_fusion() -> FusionConfig {
    FusionConfig {
        tokens: 4,
        token_dim: 8,
        heads: 2,
    }
}

pub fn small_pffa(seed: u64) -> (PffaModel, ParamSet) {
    let backbone = Backbone::new(small_backbone()).unwrap();
    let mut params = backbone.init_params(seed, upda_core::nn::InitScheme::UniformFanin);
    let model = PffaModel::new(backbone, small_fusion()).unwrap();
    params.merge(&model.init_heads(seed, upda_core::nn::InitScheme::UniformFanin));
    (model, params)
}

pub fn stats(rows: usize, seed: u64) -> Matrix {
    random_matrix(rows, STAT_DIM, seed)
}

/// Largest relative deviation between the analytic gradient and central
/// finite differences over every trainable scalar of `params`.
pub fn grad_check(params: &ParamSet, loss: impl Fn(&mut Graph, &Bindings) -> Var) -> f64 {
    let mut g = Graph::new();
    let b = params.bind(&mut g);
    let l = loss(&mut g, &b);
    let analytic = b.gradients(&g.backward(l), params);
    let eval = |p: &ParamSet| {
        let mut g = Graph::new();
        let b = p.bind(&mut g);
        let l = loss(&mut g, &b);
        g.scalar(l)
    };
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for (name, grad) in analytic.iter() {
        for k in 0..grad.len() {
            let x = params.tensor(name).as_slice()[k];
            probe.get_mut(name).unwrap().as_mut_slice()[k] = x + FD_STEP;
            let up = eval(&probe);
            probe.get_mut(name).unwrap().as_mut_slice()[k] = x - FD_STEP;
            let down = eval(&probe);
            probe.get_mut(name).unwrap().as_mut_slice()[k] = x;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = grad.as_slice()[k];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Brute-force double sum of the weighted kernel discrepancy.
#[allow(clippy::needless_range_loop)]
pub fn mmd_oracle(source: &Matrix, weights: &[f64], target: &Matrix, bandwidths: &[f64]) -> f64 {
    let k = |a: &[f64], b: &[f64]| {
        let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        bandwidths.iter().map(|s| (-d2 / (2.0 * s * s)).exp()).sum::<f64>()
    };
    let total: f64 = weights.iter().sum();
    let alpha: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let beta = 1.0 / target.rows() as f64;
    let mut v = 0.0;
    for i in 0..source.rows() {
        for j in 0..source.rows() {
            v += alpha[i] * alpha[j] * k(source.row(i), source.row(j));
        }
    }
    for i in 0..source.rows() {
        for j in 0..target.rows() {
            v -= 2.0 * alpha[i] * beta * k(source.row(i), target.row(j));
        }
    }
    for i in 0..target.rows() {
        for j in 0..target.rows() {
            v += beta * beta * k(target.row(i), target.row(j));
        }
    }
    v
}

/// The bundled cross-distortion scenario: source {color noise, downsample},
/// target {geometric Gaussian noise}, four contents each, six levels.
pub fn cross_distortion_configs(n_points: usize) -> (DomainConfig, DomainConfig) {
    let source = DomainConfig {
        domain_tag: DomainTag::Source,
        shape_families: ShapeFamily::ALL.to_vec(),
        distortions: vec!["color_noise".parse().unwrap(), "downsample".parse().unwrap()],
        levels: (1..=6).collect(),
        groups: 4,
        content_offset: 0,
        n_points,
        oracle: Default::default(),
    };
    let target = DomainConfig {
        domain_tag: DomainTag::Target,
        distortions: vec!["geometry_gaussian_noise".parse().unwrap()],
        content_offset: 4,
        ..source.clone()
    };
    (source, target)
}

/// A small source/target pair for training tests.
pub fn tiny_domains() -> (DomainDataset, DomainDataset) {
    let (s, t) = cross_distortion_configs(128);
    (build_domain(&s, 3).unwrap(), build_domain(&t, 3).unwrap())
}

/// A training configuration small enough for unit-speed tests.
pub fn tiny_train() -> TrainConfig {
    TrainConfig {
        stage1_epochs: 2,
        stage2_epochs: 2,
        batch_size: 8,
        backbone: small_backbone(),
        fusion: small_fusion(),
        ..TrainConfig::default()
    }
}
