//! Training loops: configs, per-iteration records, and the ZO-SGD entry.
//!
//! Both the plain ZO-SGD baseline and the projected variant execute the
//! same engine (`crate::dizo::run_engine`) so that a projection that never
//! triggers is bitwise-indistinguishable from the baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{Batch, LossOracle};
use crate::param::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LrSchedule {
    Constant,
    LinearDecay,
}

impl LrSchedule {
    pub fn as_str(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::LinearDecay => "linear_decay",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "linear_decay" => Ok(LrSchedule::LinearDecay),
            _ => Err(Error::config(format!("unknown lr schedule `{s}`"))),
        }
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub lr: f64,
    pub lr_schedule: LrSchedule,
    pub eps: f64,
    pub q: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("steps must be ≥ 1"));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::config("lr must be finite and ≥ 0"));
        }
        if self.eps <= 0.0 || !self.eps.is_finite() {
            return Err(Error::config("eps must be positive and finite"));
        }
        if self.q == 0 {
            return Err(Error::config("q must be ≥ 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be ≥ 1"));
        }
        Ok(())
    }

    /// Learning rate at 0-based step index `t`.
    pub fn schedule_lr(&self, t: usize) -> f64 {
        debug_assert!(t < self.steps);
        match self.lr_schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::LinearDecay => self.lr * (1.0 - t as f64 / self.steps as f64),
        }
    }
}

/// Metrics captured at one recorded iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub iteration: usize,
    /// Loss of the current params on the iteration's batch.
    pub loss_clean: f64,
    /// Mean of the estimator's probe losses at this iteration.
    pub loss_probe: f64,
    pub lr_used: f64,
    /// ‖θ_{t} − θ_{t-1}‖ over the whole iteration (ZO step + projection).
    pub step_movement: f64,
    /// (η‖ĝ‖ + τ·R_max) − movement at this iteration.
    pub stability_slack: f64,
    /// ‖θ^(ℓ) − θ_init^(ℓ)‖ per layer, after the iteration.
    pub per_layer_gap: BTreeMap<String, f64>,
    /// η·‖ĝ^(ℓ)‖ per layer (the ZO update, before any projection).
    pub per_layer_update_norm: BTreeMap<String, f64>,
    /// γ^(ℓ)/‖Δθ^(ℓ)‖ applied this iteration (projection cycles only).
    pub projection_mag: Option<BTreeMap<String, f64>>,
}

/// Everything a finished (or aborted) run produced.
#[derive(Debug)]
pub struct RunOutput {
    pub final_params: ParamSet,
    pub records: Vec<RunRecord>,
    /// Iterations whose movement exceeded the stability bound by > 1e-6.
    pub stability_violations: usize,
    /// Projection applications after which a layer's gap differed from its
    /// γ by more than 1e-9 relative.
    pub projection_gap_mismatches: usize,
    /// Training forward passes: 2q per step plus 2 per projection round.
    pub forward_passes: u64,
    /// Set when a numeric failure stopped the run early; records end at the
    /// last good iteration.
    pub aborted: Option<String>,
}

/// Plain ZO-SGD: θ ← θ − η_t·ĝ_t for `config.steps` iterations, cycling
/// `data` deterministically. `hooks` sees every emitted record.
pub fn zo_sgd_run(
    oracle: &dyn LossOracle,
    init: &ParamSet,
    data: &[Batch],
    config: &TrainConfig,
    hooks: &mut dyn FnMut(&RunRecord),
) -> Result<RunOutput> {
    crate::dizo::run_engine(oracle, init, data, config, None, hooks)
}
