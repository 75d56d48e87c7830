//! Discrepancy-aware coarse-grained alignment.
//!
//! Source pairs are ranked by a small head on the feature difference
//! `f_i − f_j` under a binary cross-entropy weighted by
//! `w_ij = sigmoid(|y_i − y_j|)`; the weighted mean embedding of those
//! source rank features is pulled towards the uniform mean embedding of
//! target rank features with a multi-bandwidth Gaussian MMD.

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, FeatureVector};
use crate::error::{config, contract, Result};
use crate::graph::{sigmoid, sq_dist_matrix, Graph, Var};
use crate::nn::{Activation, InitScheme, Mlp};
use crate::params::{Bindings, ParamSet};
use crate::rng::stream;
use crate::tensor::Matrix;

/// Probability clamp keeping the cross-entropy finite.
pub const PROB_EPS: f64 = 1e-7;

/// Ordered sample pair. Source pairs carry a label (`y_i > y_j`) and the
/// weight `sigmoid(|y_i − y_j|)`; target pairs carry no label and unit weight.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RankPair {
    pub i: usize,
    pub j: usize,
    pub label: Option<bool>,
    pub weight: f64,
}

pub fn pair_weight(y_i: f64, y_j: f64) -> f64 {
    sigmoid((y_i - y_j).abs())
}

pub fn rank_feature(f_i: &FeatureVector, f_j: &FeatureVector) -> Result<FeatureVector> {
    if f_i.dim() != f_j.dim() {
        return Err(contract(format!(
            "rank feature of {}- and {}-dimensional vectors",
            f_i.dim(),
            f_j.dim()
        )));
    }
    Ok(FeatureVector(f_i.0.iter().zip(&f_j.0).map(|(a, b)| a - b).collect()))
}

/// Every ordered pair `(i, j)`, `i ≠ j`, of a labelled mini-batch.
pub fn source_pairs(mos: &[f64]) -> Vec<RankPair> {
    let n = mos.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.push(RankPair {
                    i,
                    j,
                    label: Some(mos[i] > mos[j]),
                    weight: pair_weight(mos[i], mos[j]),
                });
            }
        }
    }
    out
}

/// Every ordered pair of an unlabelled mini-batch of `n` samples.
pub fn target_pairs(n: usize) -> Vec<RankPair> {
    let mut out = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                out.push(RankPair {
                    i,
                    j,
                    label: None,
                    weight: 1.0,
                });
            }
        }
    }
    out
}

/// Rank features `f_i − f_j` for each pair, as graph rows.
pub fn rank_features(g: &mut Graph, features: Var, pairs: &[RankPair]) -> Var {
    let is: Vec<usize> = pairs.iter().map(|p| p.i).collect();
    let js: Vec<usize> = pairs.iter().map(|p| p.j).collect();
    let fi = g.gather_rows(features, &is);
    let fj = g.gather_rows(features, &js);
    g.sub(fi, fj)
}

/// Ranking prediction head: fully connected layers ending in two logits,
/// `(y_i > y_j, y_i ≤ y_j)`, followed by a softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct RankHead {
    mlp: Mlp,
}

impl RankHead {
    pub fn new(feature_dim: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![feature_dim];
        sizes.extend(hidden);
        sizes.push(2);
        Self {
            mlp: Mlp::new("rph", sizes, Activation::Silu, Activation::Identity),
        }
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn init_params(&self, seed: u64, scheme: InitScheme) -> ParamSet {
        let mut p = ParamSet::new();
        self.mlp.init(&mut p, &mut stream(seed, &[0x1417, 2]), scheme);
        p
    }

    /// `P(y_i > y_j)` for each row of `rank` (`P×d` → `P×1`).
    pub fn probability(&self, g: &mut Graph, b: &Bindings, rank: Var) -> Var {
        let logits = self.mlp.forward(g, b, rank);
        let sm = g.softmax_rows(logits);
        let rows = g.shape(sm).0;
        g.block(sm, 0, 0, rows, 1)
    }

    pub fn probability_value(&self, params: &ParamSet, rank: &FeatureVector) -> f64 {
        let mut g = Graph::new();
        let b = params.bind(&mut g);
        let x = g.constant(Matrix::row_vector(rank.0.clone()));
        let p = self.probability(&mut g, &b, x);
        g.scalar(p)
    }
}

/// `P` from a pair of logits for the "greater" and "not greater" classes.
pub fn probability_from_logits(greater: f64, other: f64) -> f64 {
    sigmoid(greater - other)
}

/// Discrepancy-weighted binary cross-entropy over labelled pairs, given the
/// per-pair probabilities `prob` (`P×1`).
pub fn loss_d_rank_from_prob(g: &mut Graph, prob: Var, pairs: &[RankPair]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(contract("ranking loss needs at least one pair"));
    }
    if g.shape(prob) != (pairs.len(), 1) {
        return Err(contract("one probability per pair expected"));
    }
    let total_w: f64 = pairs.iter().map(|p| p.weight).sum();
    if total_w <= 0.0 {
        return Err(contract("pair weights sum to zero"));
    }
    let mut pos = Vec::with_capacity(pairs.len());
    let mut neg = Vec::with_capacity(pairs.len());
    for p in pairs {
        let l = p
            .label
            .ok_or_else(|| contract("ranking loss needs labelled (source) pairs"))?;
        let w = p.weight / total_w;
        pos.push(if l { w } else { 0.0 });
        neg.push(if l { 0.0 } else { w });
    }
    let pc = g.clamp(prob, PROB_EPS, 1.0 - PROB_EPS);
    let log_p = g.log(pc);
    let neg_p = g.scale(pc, -1.0);
    let one_minus = g.add_scalar(neg_p, 1.0);
    let log_q = g.log(one_minus);
    let pos = g.constant(Matrix::column_vector(pos));
    let neg = g.constant(Matrix::column_vector(neg));
    let a = g.mul(pos, log_p);
    let b = g.mul(neg, log_q);
    let s = g.add(a, b);
    let s = g.sum(s);
    Ok(g.scale(s, -1.0))
}

/// Full ranking loss on a batch of features (`B×d`).
pub fn loss_d_rank(g: &mut Graph, b: &Bindings, head: &RankHead, features: Var, pairs: &[RankPair]) -> Result<Var> {
    if pairs.is_empty() {
        return Err(contract("ranking loss needs at least one pair"));
    }
    let rank = rank_features(g, features, pairs);
    let prob = head.probability(g, b, rank);
    loss_d_rank_from_prob(g, prob, pairs)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    /// Square root of the median pairwise squared distance among the pooled
    /// source and target rank features of the batch (not differentiated).
    Median,
    Fixed(f64),
}

/// Multi-bandwidth Gaussian kernel `Σ_σ exp(−‖x − y‖² / (2σ²))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelConfig {
    pub multipliers: Vec<f64>,
    pub base: Bandwidth,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            multipliers: vec![0.5, 1.0, 2.0, 4.0, 8.0],
            base: Bandwidth::Median,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.multipliers.is_empty() || self.multipliers.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return Err(config("kernel multipliers must be positive"));
        }
        if let Bandwidth::Fixed(s) = self.base {
            if !(s > 0.0) || !s.is_finite() {
                return Err(config("fixed bandwidth must be positive"));
            }
        }
        Ok(())
    }

    /// Concrete bandwidths for a batch of rank features.
    pub fn resolve(&self, source: &Matrix, target: &Matrix) -> Vec<f64> {
        let base = match self.base {
            Bandwidth::Fixed(s) => s,
            Bandwidth::Median => median_distance(source, target),
        };
        self.multipliers.iter().map(|m| m * base).collect()
    }
}

fn median_distance(source: &Matrix, target: &Matrix) -> f64 {
    let mut pooled = source.as_slice().to_vec();
    pooled.extend_from_slice(target.as_slice());
    let pooled = Matrix::from_vec(source.rows() + target.rows(), source.cols(), pooled);
    let d = sq_dist_matrix(&pooled, &pooled);
    let n = pooled.rows();
    let mut off: Vec<f64> = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            off.push(d[(i, j)]);
        }
    }
    if off.is_empty() {
        return 1.0;
    }
    off.sort_by(f64::total_cmp);
    let med = off[off.len() / 2];
    if med > 1e-24 {
        med.sqrt()
    } else {
        1.0
    }
}

/// Squared RKHS distance between the `weights`-weighted mean embedding of
/// the source rank features and the uniform mean embedding of the target
/// rank features, summed over `bandwidths`.
pub fn loss_d_mmd(g: &mut Graph, source: Var, weights: &[f64], target: Var, bandwidths: &[f64]) -> Result<Var> {
    let (p, m) = (g.shape(source).0, g.shape(target).0);
    if p < 2 || m < 2 {
        return Err(contract(format!(
            "D-MMD needs at least 2 pairs per domain, got {p} and {m}"
        )));
    }
    if weights.len() != p {
        return Err(contract("one weight per source pair expected"));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 || weights.iter().any(|w| *w < 0.0) {
        return Err(contract("D-MMD weights must be non-negative with a positive sum"));
    }
    if bandwidths.is_empty() {
        return Err(contract("D-MMD needs at least one bandwidth"));
    }
    let alpha = g.constant(Matrix::column_vector(weights.iter().map(|w| w / total).collect()));
    let alpha_t = g.constant(Matrix::row_vector(weights.iter().map(|w| w / total).collect()));
    let beta = g.constant(Matrix::filled(m, 1, 1.0 / m as f64));
    let beta_t = g.constant(Matrix::filled(1, m, 1.0 / m as f64));

    let d_ss = g.sq_dist(source, source);
    let d_st = g.sq_dist(source, target);
    let d_tt = g.sq_dist(target, target);
    let kernel = |g: &mut Graph, d: Var| {
        let mut acc: Option<Var> = None;
        for &s in bandwidths {
            let z = g.scale(d, -1.0 / (2.0 * s * s));
            let k = g.exp(z);
            acc = Some(match acc {
                Some(a) => g.add(a, k),
                None => k,
            });
        }
        acc.expect("non-empty bandwidths")
    };
    let k_ss = kernel(g, d_ss);
    let k_st = kernel(g, d_st);
    let k_tt = kernel(g, d_tt);

    let ka = g.matmul(k_ss, alpha);
    let ss = g.matmul(alpha_t, ka);
    let kb = g.matmul(k_st, beta);
    let st = g.matmul(alpha_t, kb);
    let st = g.scale(st, -2.0);
    let kt = g.matmul(k_tt, beta);
    let tt = g.matmul(beta_t, kt);
    let s = g.add(ss, st);
    Ok(g.add(s, tt))
}

/// Value-only D-MMD.
pub fn d_mmd_value(source: &Matrix, weights: &[f64], target: &Matrix, bandwidths: &[f64]) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.constant(source.clone());
    let t = g.constant(target.clone());
    let l = loss_d_mmd(&mut g, s, weights, t, bandwidths)?;
    Ok(g.scalar(l))
}

/// Stage-one model: backbone plus ranking head plus kernel settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DacaModel {
    pub backbone: Backbone,
    pub head: RankHead,
    pub kernel: KernelConfig,
}

#[derive(Clone, Copy, Debug)]
pub struct DacaTerms {
    pub rank: Var,
    /// `None` when the MMD weight is zero; it then only appears in
    /// `mmd_value`.
    pub mmd: Option<Var>,
    pub mmd_value: f64,
    pub total: Var,
}

/// `L_D-rank + ν · L_D-MMD` over a source and a target mini-batch of raw
/// descriptors. `bandwidths` overrides the kernel's own resolution.
#[allow(clippy::too_many_arguments)]
pub fn loss_daca(
    g: &mut Graph,
    b: &Bindings,
    model: &DacaModel,
    source_stats: &Matrix,
    source_mos: &[f64],
    target_stats: &Matrix,
    nu: f64,
    bandwidths: Option<&[f64]>,
) -> Result<(DacaTerms, Vec<f64>)> {
    if source_stats.rows() < 2 || target_stats.rows() < 2 {
        return Err(contract("DACA needs at least 2 samples per domain"));
    }
    if source_mos.len() != source_stats.rows() {
        return Err(contract("one score per source sample expected"));
    }
    let xs = g.constant(source_stats.clone());
    let xt = g.constant(target_stats.clone());
    let fs = model.backbone.forward(g, b, xs);
    let ft = model.backbone.forward(g, b, xt);

    let sp = source_pairs(source_mos);
    let tp = target_pairs(target_stats.rows());
    let s_rank = rank_features(g, fs, &sp);
    let t_rank = rank_features(g, ft, &tp);
    let prob = model.head.probability(g, b, s_rank);
    let rank = loss_d_rank_from_prob(g, prob, &sp)?;

    let bw = match bandwidths {
        Some(bw) => bw.to_vec(),
        None => model.kernel.resolve(g.value(s_rank), g.value(t_rank)),
    };
    let weights: Vec<f64> = sp.iter().map(|p| p.weight).collect();
    let (mmd, mmd_value, total) = if nu != 0.0 {
        let mmd = loss_d_mmd(g, s_rank, &weights, t_rank, &bw)?;
        let scaled = g.scale(mmd, nu);
        let total = g.add(rank, scaled);
        (Some(mmd), g.scalar(mmd), total)
    } else {
        let v = d_mmd_value(g.value(s_rank), &weights, g.value(t_rank), &bw)?;
        (None, v, rank)
    };
    Ok((
        DacaTerms {
            rank,
            mmd,
            mmd_value,
            total,
        },
        bw,
    ))
}
