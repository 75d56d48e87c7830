//! Fully connected building blocks shared by the backbone and the heads.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, Var};
use crate::params::{Bindings, ParamSet};
use crate::rng::Rng;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Weights and biases drawn from `U(−1/√fan_in, 1/√fan_in)`.
    UniformFanin,
    /// All zeros. Only useful in tests.
    Zeros,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Silu,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Silu => g.silu(x),
            Activation::Sigmoid => g.sigmoid(x),
        }
    }
}

/// Stack of affine layers `{prefix}.l{k}.w` (`in×out`) and `{prefix}.l{k}.b`
/// (`1×out`), rows of the input being samples.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub prefix: String,
    pub sizes: Vec<usize>,
    pub hidden: Activation,
    pub output: Activation,
}

impl Mlp {
    pub fn new(prefix: &str, sizes: Vec<usize>, hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs at least one layer");
        Self {
            prefix: prefix.to_string(),
            sizes,
            hidden,
            output,
        }
    }

    pub fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{}.w", self.prefix, layer + 1)
    }

    pub fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{}.b", self.prefix, layer + 1)
    }

    pub fn init(&self, params: &mut ParamSet, rng: &mut Rng, scheme: InitScheme) {
        for l in 0..self.layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |rows, cols| match scheme {
                InitScheme::Zeros => Matrix::zeros(rows, cols),
                InitScheme::UniformFanin => Matrix::from_vec(
                    rows,
                    cols,
                    (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect(),
                ),
            };
            let w = draw(fan_in, fan_out);
            let b = draw(1, fan_out);
            params.insert(self.weight_name(l), w, true);
            params.insert(self.bias_name(l), b, true);
        }
    }

    pub fn forward(&self, g: &mut Graph, b: &Bindings, x: Var) -> Var {
        let mut h = x;
        for l in 0..self.layers() {
            let z = g.matmul(h, b.var(&self.weight_name(l)));
            let z = g.add_row(z, b.var(&self.bias_name(l)));
            let act = if l + 1 == self.layers() {
                self.output
            } else {
                self.hidden
            };
            h = act.apply(g, z);
        }
        h
    }
}
