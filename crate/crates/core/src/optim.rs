//! First-order optimizers over a [`ParamSet`].

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::params::{group_of, GradSet, ParamSet};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Optimizer state plus per-group learning rates. Parameters whose group has
/// no learning rate are left untouched.
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    rates: HashMap<String, f64>,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    first: HashMap<String, Matrix>,
    second: HashMap<String, Matrix>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind) -> Self {
        Self {
            kind,
            rates: HashMap::new(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: HashMap::new(),
            second: HashMap::new(),
        }
    }

    pub fn with_rate(mut self, group: &str, lr: f64) -> Self {
        self.rates.insert(group.to_string(), lr);
        self
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &GradSet) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, g) in grads.iter() {
            let Some(&lr) = self.rates.get(group_of(name)) else {
                continue;
            };
            let Some(p) = params.get_mut(name) else {
                continue;
            };
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, d) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *w -= lr * d;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self
                        .first
                        .entry(name.to_string())
                        .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                    let v = self
                        .second
                        .entry(name.to_string())
                        .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
                    let iter = p
                        .as_mut_slice()
                        .iter_mut()
                        .zip(g.as_slice())
                        .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice().iter_mut()));
                    for ((w, &d), (mi, vi)) in iter {
                        *mi = b1 * *mi + (1.0 - b1) * d;
                        *vi = b2 * *vi + (1.0 - b2) * d * d;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}
