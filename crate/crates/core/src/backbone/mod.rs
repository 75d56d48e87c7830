//! Feature extractor `G`: a standardised descriptor followed by a
//! two-hidden-layer perceptron with SiLU activations.

mod features;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Activation, InitScheme, Mlp};
use crate::params::{Bindings, ParamSet};
use crate::rng::stream;
use crate::tensor::Matrix;

pub use features::{
    extract_raw_features, quantile_sorted, StatVector, NN_QUANTILE_OFFSET, QUANTILES, RADIAL_BINS, RADIAL_HIST_OFFSET,
    STAT_DIM,
};

pub const IN_MEAN: &str = "g.in_mean";
pub const IN_SCALE: &str = "g.in_scale";

/// Feature vector `f = G(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackboneConfig {
    pub hidden: Vec<usize>,
    pub feature_dim: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            feature_dim: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    mlp: Mlp,
}

impl Backbone {
    pub fn new(config: BackboneConfig) -> Result<Self> {
        if config.feature_dim == 0 || config.hidden.contains(&0) {
            return Err(crate::error::config("backbone widths must be positive"));
        }
        let mut sizes = vec![STAT_DIM];
        sizes.extend(&config.hidden);
        sizes.push(config.feature_dim);
        let mlp = Mlp::new("g", sizes, Activation::Silu, Activation::Identity);
        Ok(Self { config, mlp })
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    /// Fresh `g.*` parameters. The input standardiser starts as the
    /// identity (zero mean, unit scale) and is frozen.
    pub fn init_params(&self, seed: u64, scheme: InitScheme) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert(IN_MEAN, Matrix::zeros(1, STAT_DIM), false);
        p.insert(IN_SCALE, Matrix::filled(1, STAT_DIM, 1.0), false);
        self.mlp.init(&mut p, &mut stream(seed, &[0x1417, 1]), scheme);
        p
    }

    /// Sets the frozen standardiser to the per-entry mean and inverse
    /// standard deviation of `stats`. Constant entries get unit scale.
    pub fn fit_normalizer(&self, params: &mut ParamSet, stats: &[StatVector]) -> Result<()> {
        if stats.is_empty() {
            return Err(contract("cannot fit a normalizer on zero samples"));
        }
        let n = stats.len() as f64;
        let mut mean = vec![0.0; STAT_DIM];
        for s in stats {
            for (m, x) in mean.iter_mut().zip(s.as_slice()) {
                *m += x / n;
            }
        }
        let mut scale = vec![0.0; STAT_DIM];
        for (k, sc) in scale.iter_mut().enumerate() {
            let var = stats.iter().map(|s| (s.0[k] - mean[k]).powi(2)).sum::<f64>() / n;
            *sc = if var.sqrt() > 1e-12 { 1.0 / var.sqrt() } else { 1.0 };
        }
        *params.get_mut(IN_MEAN).expect("backbone params") = Matrix::row_vector(mean);
        *params.get_mut(IN_SCALE).expect("backbone params") = Matrix::row_vector(scale);
        Ok(())
    }

    /// `G` over a batch of descriptors (`B×64` → `B×d`).
    pub fn forward(&self, g: &mut Graph, b: &Bindings, stats: Var) -> Var {
        assert_eq!(g.shape(stats).1, STAT_DIM, "backbone input must be {STAT_DIM} wide");
        let neg_mean = g.scale(b.var(IN_MEAN), -1.0);
        let centered = g.add_row(stats, neg_mean);
        let x = g.mul_row(centered, b.var(IN_SCALE));
        self.mlp.forward(g, b, x)
    }

    /// Value-only forward pass.
    pub fn features(&self, params: &ParamSet, stats: &[StatVector]) -> Result<Matrix> {
        let x = stack_stats(stats)?;
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let input = g.constant(x);
        let f = self.forward(&mut g, &b, input);
        Ok(g.value(f).clone())
    }

    pub fn forward_one(&self, params: &ParamSet, stat: &StatVector) -> Result<FeatureVector> {
        let m = self.features(params, std::slice::from_ref(stat))?;
        Ok(FeatureVector(m.into_vec()))
    }
}

/// Rows of descriptors as a `B×64` matrix.
pub fn stack_stats(stats: &[StatVector]) -> Result<Matrix> {
    let mut data = Vec::with_capacity(stats.len() * STAT_DIM);
    for s in stats {
        if s.0.len() != STAT_DIM {
            return Err(contract(format!(
                "descriptor has {} entries, expected {STAT_DIM}",
                s.0.len()
            )));
        }
        data.extend_from_slice(&s.0);
    }
    Ok(Matrix::from_vec(stats.len(), STAT_DIM, data))
}
