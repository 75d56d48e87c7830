//! Cross-domain k-fold protocol.
//!
//! For every seed and every fold of the target's content groups, each
//! method adapts on the full labelled source plus the unlabelled
//! target-train groups and is scored on the held-out target-test groups.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::logistic::plcc_after_fit;
use super::metrics::srcc;
use crate::backbone::StatVector;
use crate::checkpoint::Checkpoint;
use crate::dataset::{split_folds, DistortionKind, DomainConfig, DomainDataset, DomainTag, Fold, ShapeFamily};
use crate::error::{config, Error, Result};
use crate::rng::derive_seed;
use crate::train::{descriptors, predict, train_diradapt, train_noadapt, train_upda, DomainView, Method, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Source and target differ in distortion kinds.
    CrossDistortion,
    /// Source and target differ in shape families.
    CrossDataset,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::CrossDistortion => "cross_distortion",
            Scenario::CrossDataset => "cross_dataset",
        }
    }
}

/// One row of `report.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub method: Method,
    pub fold: usize,
    pub seed: u64,
    pub srcc: f64,
    pub plcc: f64,
}

/// What one (method, fold, seed) run read, for hygiene checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAudit {
    pub scenario: String,
    pub method: Method,
    pub fold: usize,
    pub seed: u64,
    /// Target indices read during adaptation.
    pub target_read: BTreeSet<usize>,
    pub target_reads: u64,
    pub test: Vec<usize>,
    /// Contents seen during adaptation (source and target) that also occur
    /// in the test split. Must be empty.
    pub content_overlap: Vec<u32>,
    pub plcc_converged: bool,
    /// SRCC or PLCC was undefined (constant predictions) and reported as 0.
    pub degenerate: bool,
}

/// Predictions of one run on its test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPredictions {
    pub method: Method,
    pub fold: usize,
    pub seed: u64,
    pub pred: Vec<f64>,
    pub mos: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub folds: usize,
    pub train: TrainConfig,
    /// Worker threads; 0 uses the available parallelism.
    #[serde(default)]
    pub threads: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProtocolOutput {
    pub rows: Vec<ReportRow>,
    pub audits: Vec<RunAudit>,
    pub predictions: Vec<RunPredictions>,
}

/// The inference checkpoint of `method` trained on the given views.
pub fn train_method(method: Method, source: &DomainView, target: &DomainView, cfg: &TrainConfig) -> Result<Checkpoint> {
    Ok(match method {
        Method::NoAdapt => train_noadapt(source, cfg)?.inference,
        Method::DirAdapt => train_diradapt(source, target, cfg)?.inference,
        Method::Upda => train_upda(source, target, cfg)?.inference,
    })
}

/// SRCC and PLCC after the logistic fit; undefined correlations (constant
/// predictions) count as 0 and set the third flag.
pub fn score(pred: &[f64], mos: &[f64]) -> Result<(f64, f64, bool, bool)> {
    let (s, s_bad) = match srcc(pred, mos) {
        Ok(v) => (v, false),
        Err(Error::UndefinedCorrelation(_)) => (0.0, true),
        Err(e) => return Err(e),
    };
    let (p, conv, p_bad) = match plcc_after_fit(pred, mos) {
        Ok((v, fit)) => (v, fit.converged, false),
        Err(Error::UndefinedCorrelation(_)) => (0.0, false, true),
        Err(e) => return Err(e),
    };
    Ok((s, p, conv, s_bad || p_bad))
}

struct Job {
    seed: u64,
    fold: usize,
    method: Method,
}

#[allow(clippy::too_many_arguments)]
fn run_job(
    scenario: &str,
    job: &Job,
    source: &DomainDataset,
    source_stats: &[StatVector],
    target: &DomainDataset,
    target_stats: &[StatVector],
    fold: &Fold,
    cfg: &TrainConfig,
) -> Result<(ReportRow, RunAudit, RunPredictions)> {
    let run_cfg = TrainConfig {
        seed: derive_seed(job.seed, &[job.fold as u64]),
        ..cfg.clone()
    };
    let src = DomainView::full(source, source_stats)?;
    let tgt = DomainView::new(target, target_stats, fold.train.clone())?;
    let ckpt = train_method(job.method, &src, &tgt, &run_cfg)?;

    let test_stats: Vec<StatVector> = fold.test.iter().map(|&i| target_stats[i].clone()).collect();
    let pred = predict(&ckpt, &test_stats)?;
    let mos: Vec<f64> = fold.test.iter().map(|&i| target.samples[i].mos).collect();
    let (s, p, converged, degenerate) = score(&pred, &mos)?;
    if degenerate {
        log::warn!(
            "{scenario}: {} fold {} seed {} produced constant predictions; correlations reported as 0",
            job.method,
            job.fold,
            job.seed
        );
    }
    let test_contents: BTreeSet<u32> = fold.test.iter().map(|&i| target.samples[i].content_id).collect();
    let adapted: BTreeSet<u32> = src.touched_contents().union(&tgt.touched_contents()).copied().collect();
    let audit = RunAudit {
        scenario: scenario.to_string(),
        method: job.method,
        fold: job.fold,
        seed: job.seed,
        target_read: tgt.touched(),
        target_reads: tgt.reads(),
        test: fold.test.clone(),
        content_overlap: adapted.intersection(&test_contents).copied().collect(),
        plcc_converged: converged,
        degenerate,
    };
    let row = ReportRow {
        scenario: scenario.to_string(),
        method: job.method,
        fold: job.fold,
        seed: job.seed,
        srcc: s,
        plcc: p,
    };
    let preds = RunPredictions {
        method: job.method,
        fold: job.fold,
        seed: job.seed,
        pred,
        mos,
    };
    Ok((row, audit, preds))
}

/// Runs every (seed, fold, method) combination. Output order is seed-major,
/// then fold, then the configured method order, independent of threading.
pub fn run_protocol(
    scenario: &str,
    source: &DomainDataset,
    target: &DomainDataset,
    cfg: &ProtocolConfig,
) -> Result<ProtocolOutput> {
    if cfg.methods.is_empty() || cfg.seeds.is_empty() {
        return Err(config("protocol needs at least one method and one seed"));
    }
    if source.domain_tag != DomainTag::Source || target.domain_tag != DomainTag::Target {
        return Err(config("protocol expects a source and a target dataset"));
    }
    cfg.train.validate()?;
    let folds = split_folds(target, cfg.folds)?;
    let source_stats = descriptors(source)?;
    let target_stats = descriptors(target)?;

    let mut jobs = Vec::new();
    for &seed in &cfg.seeds {
        for fold in 0..folds.len() {
            for &method in &cfg.methods {
                jobs.push(Job { seed, fold, method });
            }
        }
    }
    let threads = match cfg.threads {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(jobs.len());
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<_>>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(k) else { break };
                let r = run_job(
                    scenario,
                    job,
                    source,
                    &source_stats,
                    target,
                    &target_stats,
                    &folds[job.fold],
                    &cfg.train,
                );
                results.lock().expect("no poisoned workers")[k] = Some(r);
            });
        }
    });
    let mut out = ProtocolOutput::default();
    for r in results.into_inner().expect("no poisoned workers") {
        let (row, audit, preds) = r.expect("every job ran")?;
        out.rows.push(row);
        out.audits.push(audit);
        out.predictions.push(preds);
    }
    Ok(out)
}

/// Leave-one-kind-out pairs: each kind in turn is the target, the rest the
/// source. Source and target use disjoint content ids.
pub fn cross_distortion_splits(
    base: &DomainConfig,
    kinds: &[DistortionKind],
) -> Result<Vec<(String, DomainConfig, DomainConfig)>> {
    if kinds.len() < 2 {
        return Err(config("leave-one-out needs at least two distortion kinds"));
    }
    Ok(kinds
        .iter()
        .map(|&held| {
            let source = DomainConfig {
                domain_tag: DomainTag::Source,
                distortions: kinds.iter().copied().filter(|&k| k != held).collect(),
                content_offset: base.content_offset,
                ..base.clone()
            };
            let target = DomainConfig {
                domain_tag: DomainTag::Target,
                distortions: vec![held],
                content_offset: base.content_offset + base.groups as u32,
                ..base.clone()
            };
            (format!("{}/{held}", Scenario::CrossDistortion.name()), source, target)
        })
        .collect())
}

/// Leave-one-family-out pairs over shape families.
pub fn cross_dataset_splits(
    base: &DomainConfig,
    families: &[ShapeFamily],
) -> Result<Vec<(String, DomainConfig, DomainConfig)>> {
    if families.len() < 2 {
        return Err(config("leave-one-out needs at least two shape families"));
    }
    Ok(families
        .iter()
        .map(|&held| {
            let source = DomainConfig {
                domain_tag: DomainTag::Source,
                shape_families: families.iter().copied().filter(|&f| f != held).collect(),
                ..base.clone()
            };
            let target = DomainConfig {
                domain_tag: DomainTag::Target,
                shape_families: vec![held],
                content_offset: base.content_offset + base.groups as u32,
                ..base.clone()
            };
            (
                format!("{}/{}", Scenario::CrossDataset.name(), held.name()),
                source,
                target,
            )
        })
        .collect())
}
