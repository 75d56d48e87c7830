//! Perception-fusion fine-grained alignment.
//!
//! Source and target features are cut into `T` tokens of width `d_t` and
//! fused in both directions by one shared multi-head cross-attention block
//! with a residual connection. The fused source features feed the quality
//! regressor `R`; both fused feature sets feed a domain discriminator `D`
//! behind a gradient-reversal layer, whose source-side target is the
//! per-sample gate `h` (0 when fusion made the regression error worse).

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, FeatureVector};
use crate::error::{config, contract, Result};
use crate::graph::{Graph, Var};
use crate::nn::{Activation, InitScheme, Mlp};
use crate::params::{Bindings, ParamSet};
use crate::rng::stream;
use crate::tensor::Matrix;

/// Clamp used inside the adversarial logarithms.
pub const ADV_EPS: f64 = 1e-7;

pub const WQ: &str = "fusion.wq";
pub const WK: &str = "fusion.wk";
pub const WV: &str = "fusion.wv";
pub const WH: &str = "fusion.wh";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub tokens: usize,
    pub token_dim: usize,
    pub heads: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            tokens: 8,
            token_dim: 16,
            heads: 4,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self, feature_dim: usize) -> Result<()> {
        if self.tokens == 0 || self.token_dim == 0 || self.heads == 0 {
            return Err(config("fusion sizes must be positive"));
        }
        if self.tokens * self.token_dim != feature_dim {
            return Err(config(format!(
                "{} tokens of width {} do not tile a {feature_dim}-dimensional feature",
                self.tokens, self.token_dim
            )));
        }
        if !feature_dim.is_multiple_of(self.heads * self.token_dim) {
            return Err(config(format!(
                "{} heads of width {} do not divide {feature_dim}",
                self.heads, self.token_dim
            )));
        }
        Ok(())
    }

    fn inner(&self) -> usize {
        self.heads * self.token_dim
    }
}

/// Contiguous chunks of `f` as the rows of a `T×d_t` matrix.
pub fn tokens(f: &FeatureVector, cfg: &FusionConfig) -> Result<Matrix> {
    if cfg.tokens * cfg.token_dim != f.dim() {
        return Err(config(format!(
            "cannot cut a {}-dimensional feature into {}×{} tokens",
            f.dim(),
            cfg.tokens,
            cfg.token_dim
        )));
    }
    Ok(Matrix::from_vec(cfg.tokens, cfg.token_dim, f.0.clone()))
}

pub fn untokenize(tokens: &Matrix) -> FeatureVector {
    FeatureVector(tokens.as_slice().to_vec())
}

/// Shared cross-attention block. Per-head projections are stored side by
/// side: `W^Q, W^K, W^V` are `d_t × (n·d_t)` and `W^H` is `(n·d_t) × d_t`.
#[derive(Clone, Debug, PartialEq)]
pub struct Fusion {
    pub config: FusionConfig,
}

/// Result of one attention application: the `T_q × d_t` output and the
/// `T_q × T_k` attention matrix of every head.
pub struct McaOutput {
    pub output: Var,
    pub attention: Vec<Var>,
}

impl Fusion {
    pub fn new(config: FusionConfig, feature_dim: usize) -> Result<Self> {
        config.validate(feature_dim)?;
        Ok(Self { config })
    }

    pub fn init(&self, params: &mut ParamSet, seed: u64, scheme: InitScheme) {
        let (dt, inner) = (self.config.token_dim, self.config.inner());
        let mut rng = stream(seed, &[0x1417, 3]);
        let mut draw = |rows: usize, cols: usize| match scheme {
            InitScheme::Zeros => Matrix::zeros(rows, cols),
            InitScheme::UniformFanin => {
                use rand::Rng as _;
                let bound = 1.0 / (rows as f64).sqrt();
                Matrix::from_vec(
                    rows,
                    cols,
                    (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect(),
                )
            }
        };
        for name in [WQ, WK, WV] {
            params.insert(name, draw(dt, inner), true);
        }
        params.insert(WH, draw(inner, dt), true);
    }

    /// Attention of the projected query rows `q_rows..q_rows+T` of `q`
    /// against the projected key/value rows `kv_rows..kv_rows+T` of `k`/`v`,
    /// heads concatenated (not yet mixed by `W^H`).
    fn attend(
        &self,
        g: &mut Graph,
        q: Var,
        k: Var,
        v: Var,
        q_rows: (usize, usize),
        kv_rows: (usize, usize),
    ) -> McaOutput {
        let dt = self.config.token_dim;
        let scale = 1.0 / (dt as f64).sqrt();
        let mut heads = Vec::with_capacity(self.config.heads);
        let mut attention = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let qh = g.block(q, q_rows.0, h * dt, q_rows.1, dt);
            let kh = g.block(k, kv_rows.0, h * dt, kv_rows.1, dt);
            let vh = g.block(v, kv_rows.0, h * dt, kv_rows.1, dt);
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt);
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            heads.push(g.matmul(a, vh));
            attention.push(a);
        }
        McaOutput {
            output: g.concat_cols(&heads),
            attention,
        }
    }

    /// Multi-head cross-attention of query tokens against key/value tokens.
    pub fn mca(&self, g: &mut Graph, b: &Bindings, q_tokens: Var, k_tokens: Var, v_tokens: Var) -> McaOutput {
        let q = g.matmul(q_tokens, b.var(WQ));
        let k = g.matmul(k_tokens, b.var(WK));
        let v = g.matmul(v_tokens, b.var(WV));
        let (tq, tk) = (g.shape(q).0, g.shape(k).0);
        let out = self.attend(g, q, k, v, (0, tq), (0, tk));
        McaOutput {
            output: g.matmul(out.output, b.var(WH)),
            attention: out.attention,
        }
    }

    /// Symmetric residual fusion of paired rows of `fs` and `ft` (`B×d`
    /// each). Returns `(f̂_s, f̂_t)`.
    pub fn fuse_symmetric(&self, g: &mut Graph, b: &Bindings, fs: Var, ft: Var) -> (Var, Var) {
        let (batch, d) = g.shape(fs);
        assert_eq!(g.shape(ft), (batch, d), "fusion needs paired batches");
        let (t, dt) = (self.config.tokens, self.config.token_dim);
        let xs = g.reshape(fs, batch * t, dt);
        let xt = g.reshape(ft, batch * t, dt);
        let (wq, wk, wv) = (b.var(WQ), b.var(WK), b.var(WV));
        let qs = g.matmul(xs, wq);
        let ks = g.matmul(xs, wk);
        let vs = g.matmul(xs, wv);
        let qt = g.matmul(xt, wq);
        let kt = g.matmul(xt, wk);
        let vt = g.matmul(xt, wv);
        let mut cross_s = Vec::with_capacity(batch);
        let mut cross_t = Vec::with_capacity(batch);
        for i in 0..batch {
            let rows = (i * t, t);
            cross_s.push(self.attend(g, qs, kt, vt, rows, rows).output);
            cross_t.push(self.attend(g, qt, ks, vs, rows, rows).output);
        }
        let finish = |g: &mut Graph, parts: &[Var], f: Var| {
            let c = g.concat_rows(parts);
            let o = g.matmul(c, b.var(WH));
            let o = g.reshape(o, batch, d);
            g.add(f, o)
        };
        let hat_s = finish(g, &cross_s, fs);
        let hat_t = finish(g, &cross_t, ft);
        (hat_s, hat_t)
    }
}

/// `h = 0` iff the fused prediction's squared error strictly exceeds the raw
/// prediction's; ties keep the alignment (`h = 1`).
pub fn gate_h(raw_pred: f64, fused_pred: f64, mos: f64) -> u8 {
    gate_from_errors((fused_pred - mos).powi(2), (raw_pred - mos).powi(2))
}

pub fn gate_from_errors(fused_sq_err: f64, raw_sq_err: f64) -> u8 {
    u8::from(fused_sq_err <= raw_sq_err)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdvLabelConvention {
    /// Source term `−log|D − h|`: with `h = 1` the discriminator is pushed
    /// towards 0 on source samples.
    #[default]
    Paper,
    /// Source term `−log|D − (1 − h)|`, i.e. source label 1 when aligned.
    Conventional,
}

pub fn discriminator_mlp(feature_dim: usize) -> Mlp {
    Mlp::new("disc", vec![feature_dim, 64, 1], Activation::Silu, Activation::Sigmoid)
}

pub fn regressor_mlp(feature_dim: usize) -> Mlp {
    Mlp::new("reg", vec![feature_dim, 64, 1], Activation::Silu, Activation::Identity)
}

#[derive(Clone, Copy, Debug)]
pub struct DiscTerms {
    pub source: Var,
    pub target: Var,
    pub total: Var,
}

/// Gated adversarial loss. Both feature batches pass through a
/// gradient-reversal node with coefficient `lambda` before `disc`.
pub fn loss_discriminator(
    g: &mut Graph,
    b: &Bindings,
    disc: &Mlp,
    hat_s: Var,
    hat_t: Var,
    h: &[u8],
    lambda: f64,
    convention: AdvLabelConvention,
) -> Result<DiscTerms> {
    let (ns, nt) = (g.shape(hat_s).0, g.shape(hat_t).0);
    if ns == 0 || nt == 0 {
        return Err(contract("discriminator loss needs non-empty batches"));
    }
    if h.len() != ns || h.iter().any(|&x| x > 1) {
        return Err(contract("one binary gate per source sample expected"));
    }
    let rs = g.grad_reverse(hat_s, lambda);
    let rt = g.grad_reverse(hat_t, lambda);
    let ds = disc.forward(g, b, rs);
    let dt = disc.forward(g, b, rt);

    let labels: Vec<f64> = h
        .iter()
        .map(|&x| match convention {
            AdvLabelConvention::Paper => f64::from(x),
            AdvLabelConvention::Conventional => 1.0 - f64::from(x),
        })
        .collect();
    let labels = g.constant(Matrix::column_vector(labels));
    let diff = g.sub(ds, labels);
    let diff = g.abs(diff);
    let diff = g.clamp(diff, ADV_EPS, 1.0);
    let log_s = g.log(diff);
    let m = g.mean(log_s);
    let source = g.scale(m, -1.0);

    let neg = g.scale(dt, -1.0);
    let q = g.add_scalar(neg, 1.0 + ADV_EPS);
    let log_t = g.log(q);
    let m = g.mean(log_t);
    let target = g.scale(m, -1.0);

    let total = g.add(source, target);
    Ok(DiscTerms { source, target, total })
}

/// Standard domain-classification loss on unfused features (source label 1,
/// target label 0), behind a gradient-reversal node.
pub fn loss_domain_bce(g: &mut Graph, b: &Bindings, disc: &Mlp, fs: Var, ft: Var, lambda: f64) -> Result<Var> {
    if g.shape(fs).0 == 0 || g.shape(ft).0 == 0 {
        return Err(contract("domain loss needs non-empty batches"));
    }
    let rs = g.grad_reverse(fs, lambda);
    let rt = g.grad_reverse(ft, lambda);
    let ds = disc.forward(g, b, rs);
    let dt = disc.forward(g, b, rt);
    let ds = g.clamp(ds, ADV_EPS, 1.0);
    let ls = g.log(ds);
    let ls = g.mean(ls);
    let neg = g.scale(dt, -1.0);
    let q = g.add_scalar(neg, 1.0 + ADV_EPS);
    let lt = g.log(q);
    let lt = g.mean(lt);
    let s = g.add(ls, lt);
    Ok(g.scale(s, -1.0))
}

/// Mean squared error of predictions (`n×1`) against `mos`.
pub fn loss_quality(g: &mut Graph, pred: Var, mos: &[f64]) -> Result<Var> {
    if mos.is_empty() {
        return Err(contract("quality loss needs at least one sample"));
    }
    if g.shape(pred) != (mos.len(), 1) {
        return Err(contract("one prediction per score expected"));
    }
    let y = g.constant(Matrix::column_vector(mos.to_vec()));
    let e = g.sub(pred, y);
    let e2 = g.mul(e, e);
    Ok(g.mean(e2))
}

/// Stage-two model.
#[derive(Clone, Debug, PartialEq)]
pub struct PffaModel {
    pub backbone: Backbone,
    pub fusion: Fusion,
    pub disc: Mlp,
    pub reg: Mlp,
}

impl PffaModel {
    pub fn new(backbone: Backbone, fusion: FusionConfig) -> Result<Self> {
        let d = backbone.feature_dim();
        Ok(Self {
            fusion: Fusion::new(fusion, d)?,
            disc: discriminator_mlp(d),
            reg: regressor_mlp(d),
            backbone,
        })
    }

    /// Fresh `fusion`, `disc` and `reg` parameters.
    pub fn init_heads(&self, seed: u64, scheme: InitScheme) -> ParamSet {
        let mut p = ParamSet::new();
        self.fusion.init(&mut p, seed, scheme);
        self.disc.init(&mut p, &mut stream(seed, &[0x1417, 4]), scheme);
        self.reg.init(&mut p, &mut stream(seed, &[0x1417, 5]), scheme);
        p
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateMode {
    /// Evaluate `h` from the current regressor.
    Computed,
    /// Use the given per-sample gates (warm-up, tests).
    Forced(Vec<u8>),
}

#[derive(Clone, Copy, Debug)]
pub struct PffaOptions {
    pub mu: f64,
    pub lambda: f64,
    pub convention: AdvLabelConvention,
}

#[derive(Clone, Debug)]
pub struct PffaTerms {
    pub quality: Var,
    pub disc: DiscTerms,
    pub total: Var,
    pub h: Vec<u8>,
}

/// `L_Q + μ·L_D` over paired source/target mini-batches of descriptors.
#[allow(clippy::too_many_arguments)]
pub fn loss_pffa(
    g: &mut Graph,
    b: &Bindings,
    model: &PffaModel,
    source_stats: &Matrix,
    source_mos: &[f64],
    target_stats: &Matrix,
    opts: &PffaOptions,
    gate: &GateMode,
) -> Result<PffaTerms> {
    if source_stats.rows() != target_stats.rows() || source_stats.rows() == 0 {
        return Err(contract("stage two pairs equal, non-empty source and target batches"));
    }
    let xs = g.constant(source_stats.clone());
    let xt = g.constant(target_stats.clone());
    let fs = model.backbone.forward(g, b, xs);
    let ft = model.backbone.forward(g, b, xt);
    let (hat_s, hat_t) = model.fusion.fuse_symmetric(g, b, fs, ft);
    let pred = model.reg.forward(g, b, hat_s);
    let quality = loss_quality(g, pred, source_mos)?;

    let h = match gate {
        GateMode::Forced(h) => h.clone(),
        GateMode::Computed => {
            // The raw-path prediction is evaluated on the tape but never
            // reaches the loss, so it contributes no gradient.
            let raw = model.reg.forward(g, b, fs);
            let (raw, fused) = (g.value(raw), g.value(pred));
            (0..source_mos.len())
                .map(|i| gate_h(raw[(i, 0)], fused[(i, 0)], source_mos[i]))
                .collect()
        }
    };
    let disc = loss_discriminator(g, b, &model.disc, hat_s, hat_t, &h, opts.lambda, opts.convention)?;
    let scaled = g.scale(disc.total, opts.mu);
    let total = g.add(quality, scaled);
    Ok(PffaTerms {
        quality,
        disc,
        total,
        h,
    })
}
