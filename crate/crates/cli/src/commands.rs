//! Subcommand implementations.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use upda_core::backbone::StatVector;
use upda_core::checkpoint::Checkpoint;
use upda_core::dataset::{build_domain, load_dataset, save_dataset, split_folds, DomainDataset};
use upda_core::eval::{
    compare_methods, fit_logistic, rows_to_csv, run_protocol, score, ComparisonTable, ProtocolConfig, ReportRow,
    RunAudit, RunPredictions,
};
use upda_core::rng::derive_seed;
use upda_core::train::{
    descriptors, predict, train_diradapt, train_noadapt, train_stage1_daca, train_stage2_pffa, CheckpointKind,
    DomainView, Method, ModelMeta, TrainConfig,
};

use crate::config::{ConfigError, ExperimentConfig};
use crate::plot::scatter_svg;
use crate::run_dir::{append_jsonl, prepare, write_json, write_text};

const RUN_INFO: &str = "config.json";
const STAGE1: &str = "stage1.ckpt";
const FINAL: &str = "final.ckpt";
const INFERENCE: &str = "inference.ckpt";
const LOG: &str = "log.jsonl";

fn load_pair(data: &Path) -> Result<(DomainDataset, DomainDataset)> {
    let source = load_dataset(&data.join("source")).with_context(|| format!("loading {}/source", data.display()))?;
    let target = load_dataset(&data.join("target")).with_context(|| format!("loading {}/target", data.display()))?;
    Ok((source, target))
}

pub fn gen_data(config: &Path, seed: Option<u64>, out: PathBuf) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let seed = seed.unwrap_or(cfg.data_seed);
    let _lock = prepare(&out, false)?;
    for (name, domain) in [("source", &cfg.source), ("target", &cfg.target)] {
        let start = Instant::now();
        let ds = build_domain(domain, seed)?;
        let dir = out.join(name);
        save_dataset(&ds, &dir)?;
        println!(
            "{name}: {} samples, {} contents -> {} ({:.1}s)",
            ds.len(),
            ds.groups.len(),
            dir.display(),
            start.elapsed().as_secs_f64()
        );
    }
    Ok(())
}

/// Written to `config.json` in every run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub experiment: ExperimentConfig,
    pub method: Method,
    /// Seed given on the command line.
    pub seed: u64,
    pub fold: Option<usize>,
    /// Effective training configuration (seed derived per fold).
    pub train: TrainConfig,
    pub source_dir: PathBuf,
    pub target_dir: PathBuf,
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub method: String,
    pub seed: Option<u64>,
    pub fold: Option<usize>,
    pub target: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: bool,
    pub data: PathBuf,
}

#[derive(Serialize)]
struct DivergenceRecord<'a> {
    event: &'static str,
    error: &'a str,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let method: Method = args.method.parse()?;
    let seed = args.seed.unwrap_or(cfg.seeds[0]);
    if method == Method::NoAdapt && args.target.is_some() {
        log::warn!("noadapt never reads the target domain; --target is ignored");
    }
    let source_dir = args.data.join("source");
    let target_dir = args.target.clone().unwrap_or_else(|| args.data.join("target"));
    let train_cfg = TrainConfig {
        seed: args.fold.map_or(seed, |f| derive_seed(seed, &[f as u64])),
        ..cfg.train.clone()
    };
    let info = RunInfo {
        experiment: cfg,
        method,
        seed,
        fold: args.fold,
        train: train_cfg,
        source_dir,
        target_dir,
    };

    let _lock = prepare(&args.out, args.resume)?;
    let info_path = args.out.join(RUN_INFO);
    if args.resume && info_path.exists() {
        let prev: RunInfo = serde_json::from_str(&fs::read_to_string(&info_path)?)
            .with_context(|| format!("reading {}", info_path.display()))?;
        if prev != info {
            return Err(ConfigError(format!(
                "{} was created with different settings; refusing to resume",
                args.out.display()
            ))
            .into());
        }
    } else {
        write_json(&info_path, &info)?;
    }

    let result = run_training(&info, &args.out, args.resume);
    if let Err(e) = &result {
        if let Some(d @ upda_core::Error::Diverged { .. }) = e.downcast_ref::<upda_core::Error>() {
            append_jsonl(
                &args.out.join(LOG),
                &[DivergenceRecord {
                    event: "diverged",
                    error: &d.to_string(),
                }],
            )?;
        }
    }
    result
}

fn run_training(info: &RunInfo, out: &Path, resume: bool) -> Result<()> {
    let source = load_dataset(&info.source_dir).with_context(|| format!("loading {}", info.source_dir.display()))?;
    let source_stats = descriptors(&source)?;
    let src = DomainView::full(&source, &source_stats)?;
    let log_path = out.join(LOG);
    let cfg = &info.train;
    let start = Instant::now();

    if info.method == Method::NoAdapt {
        let run = train_noadapt(&src, cfg)?;
        append_jsonl(&log_path, &run.record.epochs)?;
        save_final(out, info, run.full)?;
        run.inference.save(&out.join(INFERENCE))?;
    } else {
        let target =
            load_dataset(&info.target_dir).with_context(|| format!("loading {}", info.target_dir.display()))?;
        let target_stats = descriptors(&target)?;
        let indices = match info.fold {
            Some(f) => {
                let folds = split_folds(&target, info.experiment.folds)?;
                folds
                    .get(f)
                    .ok_or_else(|| ConfigError(format!("fold {f} out of range (0..{})", folds.len())))?
                    .train
                    .clone()
            }
            None => (0..target.len()).collect(),
        };
        let tgt = DomainView::new(&target, &target_stats, indices)?;
        match info.method {
            Method::DirAdapt => {
                let run = train_diradapt(&src, &tgt, cfg)?;
                append_jsonl(&log_path, &run.record.epochs)?;
                save_final(out, info, run.full)?;
                run.inference.save(&out.join(INFERENCE))?;
            }
            Method::Upda => {
                let stage1_path = out.join(STAGE1);
                let stage1 = if resume && stage1_path.exists() {
                    log::info!("resuming from {}", stage1_path.display());
                    let ckpt = Checkpoint::load(&stage1_path)?;
                    let meta = ModelMeta::from_checkpoint(&ckpt)?;
                    if meta.kind != CheckpointKind::Stage1 || meta.seed != cfg.seed {
                        return Err(ConfigError(format!("{} does not match this run", stage1_path.display())).into());
                    }
                    ckpt
                } else {
                    let (ckpt, log1) = train_stage1_daca(&src, &tgt, cfg)?;
                    ckpt.save(&stage1_path)?;
                    append_jsonl(&log_path, &log1)?;
                    ckpt
                };
                let run = train_stage2_pffa(&src, &tgt, &stage1, cfg)?;
                append_jsonl(&log_path, &run.epochs)?;
                run.final_model.save(&out.join(FINAL))?;
                run.inference.save(&out.join(INFERENCE))?;
            }
            Method::NoAdapt => unreachable!(),
        }
    }
    log::info!(
        "{} trained in {:.1}s -> {}",
        info.method,
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

fn save_final(out: &Path, info: &RunInfo, params: upda_core::params::ParamSet) -> Result<()> {
    let meta = ModelMeta {
        kind: CheckpointKind::Final,
        method: info.method,
        backbone: info.train.backbone.clone(),
        seed: info.train.seed,
    };
    Checkpoint::new(serde_json::to_value(meta)?, params).save(&out.join(FINAL))?;
    Ok(())
}

pub fn eval_protocol(
    config: &Path,
    method: Option<&str>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    threads: usize,
    data: &Path,
) -> Result<()> {
    let cfg = ExperimentConfig::load(config)?;
    let methods = match method {
        Some(m) => vec![m.parse::<Method>()?],
        None => cfg.methods.clone(),
    };
    let seeds = seed.map_or_else(|| cfg.seeds.clone(), |s| vec![s]);
    let out = out
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .ok_or_else(|| ConfigError("no output directory: pass --out or set output_dir".into()))?;
    let (source, target) = load_pair(data)?;
    let _lock = prepare(&out, false)?;
    let protocol = ProtocolConfig {
        methods,
        seeds,
        folds: cfg.folds,
        train: cfg.train.clone(),
        threads,
    };
    write_json(&out.join("config.json"), &cfg)?;
    let start = Instant::now();
    let result = run_protocol(cfg.scenario.name(), &source, &target, &protocol)?;
    write_json(&out.join("rows.json"), &result.rows)?;
    write_text(&out.join("rows.csv"), &rows_to_csv(&result.rows))?;
    write_json(&out.join("audit.json"), &result.audits)?;
    write_json(&out.join("predictions.json"), &result.predictions)?;
    if let Some(bad) = result.audits.iter().find(|a| !a.content_overlap.is_empty()) {
        log::error!(
            "{} fold {} adapted on test contents {:?}",
            bad.method,
            bad.fold,
            bad.content_overlap
        );
    }
    println!(
        "{} runs in {:.1}s -> {}",
        result.rows.len(),
        start.elapsed().as_secs_f64(),
        out.display()
    );
    if let Ok(table) = compare_methods(&result.rows) {
        print!("{}", table.to_markdown());
    }
    Ok(())
}

/// Result of evaluating one run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEval {
    pub row: ReportRow,
    pub predictions: RunPredictions,
    pub plcc_converged: bool,
    pub degenerate: bool,
}

pub fn eval_run(run: &Path, out: Option<PathBuf>, data: &Path) -> Result<()> {
    let info_path = run.join(RUN_INFO);
    let info: RunInfo = serde_json::from_str(
        &fs::read_to_string(&info_path).with_context(|| format!("reading {}", info_path.display()))?,
    )
    .with_context(|| format!("parsing {}", info_path.display()))?;
    let ckpt = Checkpoint::load(&run.join(INFERENCE))?;
    let target_dir = if info.target_dir.exists() {
        info.target_dir.clone()
    } else {
        data.join("target")
    };
    let target = load_dataset(&target_dir).with_context(|| format!("loading {}", target_dir.display()))?;
    let test = match info.fold {
        Some(f) => split_folds(&target, info.experiment.folds)?[f].test.clone(),
        None => (0..target.len()).collect(),
    };
    let stats = descriptors(&target)?;
    let test_stats: Vec<StatVector> = test.iter().map(|&i| stats[i].clone()).collect();
    let pred = predict(&ckpt, &test_stats)?;
    let mos: Vec<f64> = test.iter().map(|&i| target.samples[i].mos).collect();
    let (srcc, plcc, plcc_converged, degenerate) = score(&pred, &mos)?;
    let fold = info.fold.unwrap_or(0);
    let record = RunEval {
        row: ReportRow {
            scenario: info.experiment.scenario.name().to_string(),
            method: info.method,
            fold,
            seed: info.seed,
            srcc,
            plcc,
        },
        predictions: RunPredictions {
            method: info.method,
            fold,
            seed: info.seed,
            pred,
            mos,
        },
        plcc_converged,
        degenerate,
    };
    println!(
        "{} fold {fold} seed {}: SRCC {srcc:.4}  PLCC {plcc:.4}",
        info.method, info.seed
    );
    if let Some(path) = out {
        write_json(&path, &record)?;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub comparison: Option<ComparisonTable>,
}

type Collected = (Vec<ReportRow>, Vec<(String, RunPredictions)>);

/// Collects rows and predictions from protocol directories or single-run
/// evaluation files.
fn collect(inputs: &[PathBuf]) -> Result<Collected> {
    let mut rows = Vec::new();
    let mut preds = Vec::new();
    for input in inputs {
        let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("reading {}", p.display()));
        if input.is_dir() {
            let r: Vec<ReportRow> = serde_json::from_str(&read(&input.join("rows.json"))?)?;
            let p = input.join("predictions.json");
            if p.exists() {
                let scenario = r.first().map(|r| r.scenario.clone()).unwrap_or_default();
                let ps: Vec<RunPredictions> = serde_json::from_str(&read(&p)?)?;
                preds.extend(ps.into_iter().map(|p| (scenario.clone(), p)));
            }
            let audit = input.join("audit.json");
            if audit.exists() {
                let audits: Vec<RunAudit> = serde_json::from_str(&read(&audit)?)?;
                if audits.iter().any(|a| !a.content_overlap.is_empty()) {
                    log::warn!("{}: some runs adapted on test contents", input.display());
                }
            }
            rows.extend(r);
        } else {
            let e: RunEval =
                serde_json::from_str(&read(input)?).with_context(|| format!("parsing {}", input.display()))?;
            preds.push((e.row.scenario.clone(), e.predictions));
            rows.push(e.row);
        }
    }
    let mut seen = BTreeSet::new();
    for r in &rows {
        if !seen.insert((r.scenario.clone(), r.method, r.fold, r.seed)) {
            return Err(ConfigError(format!(
                "duplicate row for {} {} fold {} seed {}",
                r.scenario, r.method, r.fold, r.seed
            ))
            .into());
        }
    }
    Ok((rows, preds))
}

pub fn report(inputs: &[PathBuf], out: &Path, plots: bool) -> Result<()> {
    let (rows, preds) = collect(inputs)?;
    if rows.is_empty() {
        return Err(ConfigError("no report rows found in the inputs".into()).into());
    }
    let _lock = prepare(out, false)?;
    let comparison = compare_methods(&rows).ok();
    write_text(&out.join("report.csv"), &rows_to_csv(&rows))?;
    let report = Report { rows, comparison };
    write_json(&out.join("report.json"), &report)?;
    let summary = match &report.comparison {
        Some(t) => t.to_markdown(),
        None => {
            let mut s = String::from("| scenario | method | fold | seed | SRCC | PLCC |\n|---|---|---|---|---|---|\n");
            for r in &report.rows {
                s.push_str(&format!(
                    "| {} | {} | {} | {} | {:.4} | {:.4} |\n",
                    r.scenario, r.method, r.fold, r.seed, r.srcc, r.plcc
                ));
            }
            s
        }
    };
    write_text(&out.join("summary.md"), &summary)?;
    print!("{summary}");
    if plots {
        let dir = out.join("plots");
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (scenario, p) in &preds {
            let fit = fit_logistic(&p.pred, &p.mos).ok();
            let title = format!("{scenario} {} fold {} seed {}", p.method, p.fold, p.seed);
            let name = format!(
                "{scenario}_{}_f{}_s{}.svg",
                p.method.name().to_lowercase(),
                p.fold,
                p.seed
            );
            write_text(&dir.join(name), &scatter_svg(&title, &p.pred, &p.mos, fit.as_ref()))?;
        }
    }
    Ok(())
}
