use serde::{Deserialize, Serialize};

use crate::backbone::{Backbone, BackboneConfig};
use crate::daca::KernelConfig;
use crate::error::{config, Result};
use crate::nn::InitScheme;
use crate::optim::OptimizerKind;
use crate::pffa::{AdvLabelConvention, FusionConfig};

/// Gradient-reversal coefficient as a function of training progress
/// `p ∈ [0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaSchedule {
    /// `2 / (1 + exp(−γ·p)) − 1`.
    Warmup {
        gamma: f64,
    },
    Constant {
        value: f64,
    },
}

impl Default for LambdaSchedule {
    fn default() -> Self {
        LambdaSchedule::Warmup { gamma: 10.0 }
    }
}

impl LambdaSchedule {
    pub fn at(&self, progress: f64) -> f64 {
        match *self {
            LambdaSchedule::Warmup { gamma } => 2.0 / (1.0 + (-gamma * progress).exp()) - 1.0,
            LambdaSchedule::Constant { value } => value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Weight of the kernel discrepancy in stage one.
    pub nu: f64,
    /// Weight of the adversarial loss in stage two (and in DirAdapt).
    pub mu: f64,
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    /// Backbone and ranking-head rate in stage one.
    pub lr_stage1: f64,
    /// Backbone rate in stage two.
    pub lr_stage2: f64,
    /// Rate of freshly initialised heads (fusion, discriminator, regressor).
    pub lr_head: f64,
    pub seed: u64,
    pub lambda: LambdaSchedule,
    pub kernel: KernelConfig,
    pub adv_label_convention: AdvLabelConvention,
    /// Stage-two epochs run with `h` forced to 1 before the gate is used.
    pub gate_warmup_epochs: usize,
    pub backbone: BackboneConfig,
    pub fusion: FusionConfig,
    pub rph_hidden: Vec<usize>,
    pub init: InitScheme,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            nu: 1.0,
            mu: 0.8,
            stage1_epochs: 50,
            stage2_epochs: 50,
            batch_size: 16,
            optimizer: OptimizerKind::Adam,
            lr_stage1: 1e-3,
            lr_stage2: 1e-5,
            lr_head: 1e-3,
            seed: 0,
            lambda: LambdaSchedule::default(),
            kernel: KernelConfig::default(),
            adv_label_convention: AdvLabelConvention::Paper,
            gate_warmup_epochs: 1,
            backbone: BackboneConfig::default(),
            fusion: FusionConfig::default(),
            rph_hidden: Vec::new(),
            init: InitScheme::UniformFanin,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("lr_stage1", self.lr_stage1),
            ("lr_stage2", self.lr_stage2),
            ("lr_head", self.lr_head),
        ] {
            if !(lr > 0.0) || !lr.is_finite() {
                return Err(config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.stage1_epochs == 0 || self.stage2_epochs == 0 {
            return Err(config("epoch counts must be at least 1"));
        }
        if self.batch_size < 2 {
            return Err(config("batch_size must be at least 2"));
        }
        for (name, w) in [("nu", self.nu), ("mu", self.mu)] {
            if !(w >= 0.0) || !w.is_finite() {
                return Err(config(format!("{name} must be non-negative, got {w}")));
            }
        }
        match self.lambda {
            LambdaSchedule::Warmup { gamma } if !(gamma > 0.0) || !gamma.is_finite() => {
                return Err(config("lambda warm-up gamma must be positive"))
            }
            LambdaSchedule::Constant { value } if !(value >= 0.0) || !value.is_finite() => {
                return Err(config("constant lambda must be non-negative"))
            }
            _ => {}
        }
        self.kernel.validate()?;
        let backbone = Backbone::new(self.backbone.clone())?;
        self.fusion.validate(backbone.feature_dim())?;
        if self.rph_hidden.contains(&0) {
            return Err(config("ranking-head widths must be positive"));
        }
        Ok(())
    }

    /// FNV-1a of the canonical JSON encoding, as 16 hex digits.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
        format!("{h:016x}")
    }
}
