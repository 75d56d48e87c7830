//! Training: the two UPDA stages, the NoAdapt and DirAdapt baselines, and
//! inference.
//!
//! Training reads data only through [`DomainView`], which counts reads and
//! records which samples were touched, so protocol hygiene can be audited
//! after the fact. All randomness (initialisation, batch order, target
//! pairing) is drawn from streams derived from the configured seed.

mod baselines;
mod config;
mod view;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, StatVector};
use crate::checkpoint::Checkpoint;
use crate::daca::{loss_daca, DacaModel, RankHead};
use crate::error::{contract, Error, Result};
use crate::graph::Graph;
use crate::optim::Optimizer;
use crate::params::ParamSet;
use crate::pffa::{loss_pffa, regressor_mlp, GateMode, PffaModel, PffaOptions};
use crate::tensor::Matrix;

pub use baselines::{train_diradapt, train_noadapt};
pub use config::{LambdaSchedule, TrainConfig};
pub use view::{descriptors, epoch_batches, DomainView, TargetSampler};

/// Method tags, spelled as in result tables.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    NoAdapt,
    DirAdapt,
    #[serde(rename = "UPDA")]
    Upda,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::NoAdapt => "NoAdapt",
            Method::DirAdapt => "DirAdapt",
            Method::Upda => "UPDA",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "noadapt" => Ok(Method::NoAdapt),
            "diradapt" => Ok(Method::DirAdapt),
            "upda" => Ok(Method::Upda),
            _ => Err(crate::error::config(format!(
                "unknown method `{s}` (expected noadapt, diradapt or upda)"
            ))),
        }
    }
}

/// What a checkpoint holds, recorded in its metadata.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// `g` and `rph` after stage one.
    Stage1,
    /// Every stage-two group.
    Final,
    /// `g` and `reg` only.
    Inference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub kind: CheckpointKind,
    pub method: Method,
    pub backbone: crate::backbone::BackboneConfig,
    pub seed: u64,
}

impl ModelMeta {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        serde_json::from_value(ckpt.metadata.clone()).map_err(|e| Error::Checkpoint(format!("bad model metadata: {e}")))
    }
}

fn checkpoint(meta: &ModelMeta, params: ParamSet) -> Checkpoint {
    Checkpoint::new(serde_json::to_value(meta).expect("metadata serializes"), params)
}

/// Per-epoch mean losses. Absent terms are not part of the stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mmd: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub quality: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub disc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<f64>,
    /// Fraction of source samples with `h = 1`.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub gate_open: Option<f64>,
}

/// Running means of the terms of one epoch.
#[derive(Default)]
struct EpochAcc {
    steps: usize,
    sums: [f64; 6],
    present: [bool; 6],
}

impl EpochAcc {
    fn add(&mut self, slot: usize, v: f64) {
        self.sums[slot] += v;
        self.present[slot] = true;
    }

    fn finish(&self, stage: &str, epoch: usize) -> EpochLog {
        let n = self.steps.max(1) as f64;
        let get = |k: usize| self.present[k].then(|| self.sums[k] / n);
        EpochLog {
            stage: stage.to_string(),
            epoch,
            steps: self.steps,
            rank: get(0),
            mmd: get(1),
            quality: get(2),
            disc: get(3),
            lambda: get(4),
            gate_open: get(5),
        }
    }
}

const RANK: usize = 0;
const MMD: usize = 1;
const QUALITY: usize = 2;
const DISC: usize = 3;
const LAMBDA: usize = 4;
const GATE: usize = 5;

/// Everything a run produced, in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub config_hash: String,
    pub epochs: Vec<EpochLog>,
    /// Wall-clock seconds; not part of any checkpoint.
    pub wall_clock: f64,
}

impl RunRecord {
    fn new(method: Method, cfg: &TrainConfig) -> Self {
        Self {
            method,
            seed: cfg.seed,
            config_hash: cfg.hash(),
            epochs: Vec::new(),
            wall_clock: 0.0,
        }
    }
}

pub struct UpdaOutput {
    pub stage1: Checkpoint,
    pub final_model: Checkpoint,
    pub inference: Checkpoint,
    pub record: RunRecord,
}

pub struct Stage2Output {
    pub final_model: Checkpoint,
    pub inference: Checkpoint,
    pub epochs: Vec<EpochLog>,
}

pub struct BaselineOutput {
    pub inference: Checkpoint,
    /// All trained groups (DirAdapt includes its discriminator).
    pub full: ParamSet,
    pub record: RunRecord,
}

fn guard(stage: &str, epoch: usize, step: usize, loss: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged {
            stage: stage.to_string(),
            epoch,
            step,
            loss: loss.to_string(),
            value,
        })
    }
}

fn check_domains(source: &DomainView, target: &DomainView) -> Result<()> {
    if source.domain_tag() == target.domain_tag() {
        return Err(contract("source and target views carry the same domain tag"));
    }
    Ok(())
}

pub(crate) fn source_stats(view: &DomainView) -> Vec<StatVector> {
    view.all_stats_for_normalizer()
}

/// Stage one: minimise the ranking loss plus `ν` times the kernel
/// discrepancy over `g` and the ranking head.
pub fn train_stage1_daca(
    source: &DomainView,
    target: &DomainView,
    cfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<EpochLog>)> {
    cfg.validate()?;
    check_domains(source, target)?;
    let backbone = Backbone::new(cfg.backbone.clone())?;
    let model = DacaModel {
        head: RankHead::new(backbone.feature_dim(), &cfg.rph_hidden),
        backbone,
        kernel: cfg.kernel.clone(),
    };
    let mut params = model.backbone.init_params(cfg.seed, cfg.init);
    model.backbone.fit_normalizer(&mut params, &source_stats(source))?;
    params.merge(&model.head.init_params(cfg.seed, cfg.init));

    let mut opt = Optimizer::new(cfg.optimizer)
        .with_rate("g", cfg.lr_stage1)
        .with_rate("rph", cfg.lr_stage1);
    let mut sampler = TargetSampler::new(target.len(), cfg.seed, 1);
    let mut log = Vec::with_capacity(cfg.stage1_epochs);
    let mut step = 0;
    for epoch in 0..cfg.stage1_epochs {
        let mut acc = EpochAcc::default();
        for batch in epoch_batches(source.len(), cfg.batch_size, cfg.seed, 1, epoch) {
            let (xs, ys) = source.fetch(&batch);
            let xt = target.fetch_unlabeled(&sampler.take(batch.len()));
            let mut g = Graph::new();
            let b = params.bind(&mut g);
            let (terms, _) = loss_daca(&mut g, &b, &model, &xs, &ys, &xt, cfg.nu, None)?;
            let total = g.scalar(terms.total);
            guard("stage1", epoch, step, "L_DACA", total)?;
            guard("stage1", epoch, step, "L_D-MMD", terms.mmd_value)?;
            let grads = b.gradients(&g.backward(terms.total), &params);
            if !grads.all_finite() {
                guard("stage1", epoch, step, "gradient", f64::NAN)?;
            }
            opt.step(&mut params, &grads);
            acc.steps += 1;
            acc.add(RANK, g.scalar(terms.rank));
            acc.add(MMD, terms.mmd_value);
            step += 1;
        }
        log.push(acc.finish("stage1", epoch));
    }
    let meta = ModelMeta {
        kind: CheckpointKind::Stage1,
        method: Method::Upda,
        backbone: cfg.backbone.clone(),
        seed: cfg.seed,
    };
    Ok((checkpoint(&meta, params), log))
}

/// `g` parameters of a stage-one checkpoint, checked against `cfg`.
fn stage1_backbone(stage1: &Checkpoint, cfg: &TrainConfig, backbone: &Backbone) -> Result<ParamSet> {
    let meta = ModelMeta::from_checkpoint(stage1)?;
    if meta.kind != CheckpointKind::Stage1 {
        return Err(Error::Checkpoint(format!(
            "expected a stage-1 checkpoint, found {:?}",
            meta.kind
        )));
    }
    if meta.backbone != cfg.backbone {
        return Err(Error::Checkpoint(
            "stage-1 backbone differs from the configured one".into(),
        ));
    }
    let mut params = backbone.init_params(cfg.seed, cfg.init);
    params
        .load_from(&stage1.params.select_groups(&["g"]))
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    if params.len() != stage1.params.select_groups(&["g"]).len() {
        return Err(Error::Checkpoint("stage-1 checkpoint lacks backbone tensors".into()));
    }
    Ok(params)
}

/// Stage two: fine-tune `g` and train the fusion block, discriminator and
/// regressor on `L_Q + μ·L_D`, starting from a stage-one checkpoint.
pub fn train_stage2_pffa(
    source: &DomainView,
    target: &DomainView,
    stage1: &Checkpoint,
    cfg: &TrainConfig,
) -> Result<Stage2Output> {
    cfg.validate()?;
    check_domains(source, target)?;
    let backbone = Backbone::new(cfg.backbone.clone())?;
    let mut params = stage1_backbone(stage1, cfg, &backbone)?;
    let model = PffaModel::new(backbone, cfg.fusion)?;
    params.merge(&model.init_heads(cfg.seed, cfg.init));

    let mut opt = Optimizer::new(cfg.optimizer)
        .with_rate("g", cfg.lr_stage2)
        .with_rate("fusion", cfg.lr_head)
        .with_rate("disc", cfg.lr_head)
        .with_rate("reg", cfg.lr_head);
    let per_epoch = epoch_batches(source.len(), cfg.batch_size, cfg.seed, 2, 0).len();
    let total_steps = (per_epoch * cfg.stage2_epochs) as f64;
    let mut sampler = TargetSampler::new(target.len(), cfg.seed, 2);
    let mut log = Vec::with_capacity(cfg.stage2_epochs);
    let mut step = 0;
    for epoch in 0..cfg.stage2_epochs {
        let mut acc = EpochAcc::default();
        for batch in epoch_batches(source.len(), cfg.batch_size, cfg.seed, 2, epoch) {
            let (xs, ys) = source.fetch(&batch);
            let xt = target.fetch_unlabeled(&sampler.take(batch.len()));
            let lambda = cfg.lambda.at(step as f64 / total_steps);
            let gate = if epoch < cfg.gate_warmup_epochs {
                GateMode::Forced(vec![1; batch.len()])
            } else {
                GateMode::Computed
            };
            let opts = PffaOptions {
                mu: cfg.mu,
                lambda,
                convention: cfg.adv_label_convention,
            };
            let mut g = Graph::new();
            let b = params.bind(&mut g);
            let terms = loss_pffa(&mut g, &b, &model, &xs, &ys, &xt, &opts, &gate)?;
            guard("stage2", epoch, step, "L_PFFA", g.scalar(terms.total))?;
            let grads = b.gradients(&g.backward(terms.total), &params);
            if !grads.all_finite() {
                guard("stage2", epoch, step, "gradient", f64::NAN)?;
            }
            opt.step(&mut params, &grads);
            acc.steps += 1;
            acc.add(QUALITY, g.scalar(terms.quality));
            acc.add(DISC, g.scalar(terms.disc.total));
            acc.add(LAMBDA, lambda);
            acc.add(
                GATE,
                terms.h.iter().map(|&h| f64::from(h)).sum::<f64>() / terms.h.len() as f64,
            );
            step += 1;
        }
        log.push(acc.finish("stage2", epoch));
    }
    let meta = |kind| ModelMeta {
        kind,
        method: Method::Upda,
        backbone: cfg.backbone.clone(),
        seed: cfg.seed,
    };
    Ok(Stage2Output {
        inference: checkpoint(&meta(CheckpointKind::Inference), params.select_groups(&["g", "reg"])),
        final_model: checkpoint(&meta(CheckpointKind::Final), params),
        epochs: log,
    })
}

/// Both stages back to back.
pub fn train_upda(source: &DomainView, target: &DomainView, cfg: &TrainConfig) -> Result<UpdaOutput> {
    let start = Instant::now();
    let mut record = RunRecord::new(Method::Upda, cfg);
    let (stage1, log1) = train_stage1_daca(source, target, cfg)?;
    let out = train_stage2_pffa(source, target, &stage1, cfg)?;
    record.epochs = log1;
    record.epochs.extend(out.epochs);
    record.wall_clock = start.elapsed().as_secs_f64();
    Ok(UpdaOutput {
        stage1,
        final_model: out.final_model,
        inference: out.inference,
        record,
    })
}

/// `q = R(G(x))` for each descriptor. Only the `g` and `reg` groups of the
/// checkpoint are used.
pub fn predict(ckpt: &Checkpoint, stats: &[StatVector]) -> Result<Vec<f64>> {
    let meta = ModelMeta::from_checkpoint(ckpt)?;
    let backbone = Backbone::new(meta.backbone.clone()).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let reg = regressor_mlp(backbone.feature_dim());
    let mut expected = backbone.init_params(0, crate::nn::InitScheme::Zeros);
    reg.init(
        &mut expected,
        &mut crate::rng::stream(0, &[]),
        crate::nn::InitScheme::Zeros,
    );
    let have = ckpt.params.select_groups(&["g", "reg"]);
    if have.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} of the {} backbone/regressor tensors",
            have.len(),
            expected.len()
        )));
    }
    expected
        .load_from(&have)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let x = crate::backbone::stack_stats(stats)?;
    let mut g = Graph::new();
    let b = expected.bind(&mut g);
    let input = g.constant(x);
    let f = backbone.forward(&mut g, &b, input);
    let q = reg.forward(&mut g, &b, f);
    Ok(g.value(q).as_slice().to_vec())
}

/// Raw `Matrix` of features from an inference checkpoint, for probes.
pub fn backbone_features(
    params: &ParamSet,
    backbone: &crate::backbone::BackboneConfig,
    stats: &[StatVector],
) -> Result<Matrix> {
    Backbone::new(backbone.clone())?.features(params, stats)
}
