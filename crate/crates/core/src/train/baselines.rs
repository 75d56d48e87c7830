//! Source-only (NoAdapt) and direct adversarial (DirAdapt) baselines.
//!
//! Both train `R∘G` on the source MSE over the same budget and with the
//! same schedule as the two UPDA stages (stage-one rate for the first
//! `stage1_epochs`, stage-two rate after), from the same initial weights
//! and in the same batch order. DirAdapt adds a plain domain classifier on
//! the unfused features behind the gradient-reversal layer.

use std::time::Instant;

use super::{
    checkpoint, epoch_batches, guard, source_stats, BaselineOutput, CheckpointKind, DomainView, EpochAcc, Method,
    ModelMeta, RunRecord, TargetSampler, TrainConfig, DISC, LAMBDA, QUALITY,
};
use crate::backbone::Backbone;
use crate::error::{contract, Result};
use crate::graph::Graph;
use crate::optim::Optimizer;
use crate::pffa::{discriminator_mlp, loss_domain_bce, loss_quality, regressor_mlp};
use crate::rng::stream;

pub fn train_noadapt(source: &DomainView, cfg: &TrainConfig) -> Result<BaselineOutput> {
    train_baseline(source, None, cfg)
}

pub fn train_diradapt(source: &DomainView, target: &DomainView, cfg: &TrainConfig) -> Result<BaselineOutput> {
    if source.domain_tag() == target.domain_tag() {
        return Err(contract("source and target views carry the same domain tag"));
    }
    train_baseline(source, Some(target), cfg)
}

fn train_baseline(source: &DomainView, target: Option<&DomainView>, cfg: &TrainConfig) -> Result<BaselineOutput> {
    cfg.validate()?;
    let start = Instant::now();
    let method = if target.is_some() {
        Method::DirAdapt
    } else {
        Method::NoAdapt
    };
    let mut record = RunRecord::new(method, cfg);

    let backbone = Backbone::new(cfg.backbone.clone())?;
    let d = backbone.feature_dim();
    let reg = regressor_mlp(d);
    let disc = discriminator_mlp(d);
    let mut params = backbone.init_params(cfg.seed, cfg.init);
    backbone.fit_normalizer(&mut params, &source_stats(source))?;
    reg.init(&mut params, &mut stream(cfg.seed, &[0x1417, 5]), cfg.init);
    if target.is_some() {
        disc.init(&mut params, &mut stream(cfg.seed, &[0x1417, 4]), cfg.init);
    }

    let phases = [
        (1u64, cfg.stage1_epochs, cfg.lr_stage1),
        (2, cfg.stage2_epochs, cfg.lr_stage2),
    ];
    let per_epoch = epoch_batches(source.len(), cfg.batch_size, cfg.seed, 1, 0).len();
    let total_steps = (per_epoch * (cfg.stage1_epochs + cfg.stage2_epochs)) as f64;
    let mut sampler = target.map(|t| TargetSampler::new(t.len(), cfg.seed, 3));
    let mut step = 0;
    for (phase, epochs, lr_g) in phases {
        let stage = format!("{}-{phase}", method.name().to_ascii_lowercase());
        let mut opt = Optimizer::new(cfg.optimizer)
            .with_rate("g", lr_g)
            .with_rate("reg", cfg.lr_head)
            .with_rate("disc", cfg.lr_head);
        for epoch in 0..epochs {
            let mut acc = EpochAcc::default();
            for batch in epoch_batches(source.len(), cfg.batch_size, cfg.seed, phase, epoch) {
                let (xs, ys) = source.fetch(&batch);
                let mut g = Graph::new();
                let b = params.bind(&mut g);
                let xs = g.constant(xs);
                let fs = backbone.forward(&mut g, &b, xs);
                let pred = reg.forward(&mut g, &b, fs);
                let quality = loss_quality(&mut g, pred, &ys)?;
                let mut total = quality;
                if let (Some(t), Some(s)) = (target, sampler.as_mut()) {
                    let lambda = cfg.lambda.at(step as f64 / total_steps);
                    let xt = g.constant(t.fetch_unlabeled(&s.take(batch.len())));
                    let ft = backbone.forward(&mut g, &b, xt);
                    let adv = loss_domain_bce(&mut g, &b, &disc, fs, ft, lambda)?;
                    let scaled = g.scale(adv, cfg.mu);
                    total = g.add(quality, scaled);
                    acc.add(DISC, g.scalar(adv));
                    acc.add(LAMBDA, lambda);
                }
                guard(&stage, epoch, step, "loss", g.scalar(total))?;
                let grads = b.gradients(&g.backward(total), &params);
                if !grads.all_finite() {
                    guard(&stage, epoch, step, "gradient", f64::NAN)?;
                }
                opt.step(&mut params, &grads);
                acc.steps += 1;
                acc.add(QUALITY, g.scalar(quality));
                step += 1;
            }
            record.epochs.push(acc.finish(&stage, epoch));
        }
    }
    record.wall_clock = start.elapsed().as_secs_f64();
    let meta = ModelMeta {
        kind: CheckpointKind::Inference,
        method,
        backbone: cfg.backbone.clone(),
        seed: cfg.seed,
    };
    Ok(BaselineOutput {
        inference: checkpoint(&meta, params.select_groups(&["g", "reg"])),
        full: params,
        record,
    })
}
