//! Brute-force gradient machinery for verification and FO reference runs.
//!
//! None of this is reachable from the training loops; it exists to check
//! them. The coordinate loop saves and restores each entry exactly (bitwise)
//! instead of adding and subtracting, so the oracle itself is above
//! suspicion of rounding drift.

use crate::error::{Error, Result};
use crate::models::{Batch, LossOracle};
use crate::param::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FdScheme {
    Central,
}

/// Finite-difference settings: per-coordinate step h = base·(1 + |x|).
#[derive(Debug, Clone, Copy)]
pub struct FdSpec {
    pub base: f64,
    pub scheme: FdScheme,
    /// Cost guard: refuse models larger than this many parameters.
    pub dim_guard: usize,
}

impl Default for FdSpec {
    fn default() -> Self {
        Self {
            base: 1e-5,
            scheme: FdScheme::Central,
            dim_guard: 5000,
        }
    }
}

impl FdSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base <= 0.0 || !self.base.is_finite() {
            return Err(Error::config("fd base step must be positive and finite"));
        }
        Ok(())
    }
}

/// Dense central-difference gradient. Params are returned bitwise
/// unchanged.
pub fn fd_gradient(
    oracle: &dyn LossOracle,
    params: &mut ParamSet,
    batch: &Batch,
    spec: FdSpec,
) -> Result<ParamSet> {
    spec.validate()?;
    if params.total_dim() > spec.dim_guard {
        return Err(Error::config(format!(
            "fd_gradient over {} params exceeds the guard of {}",
            params.total_dim(),
            spec.dim_guard
        )));
    }
    let mut grad = ParamSet::zeros(params.specs().cloned().collect())?;
    for layer in 0..params.num_layers() {
        for j in 0..params.spec(layer).dim() {
            let saved = params.values(layer)[j];
            let h = spec.base * (1.0 + saved.abs());
            params.values_mut(layer)[j] = saved + h;
            let up = oracle.evaluate(params, batch)?;
            params.values_mut(layer)[j] = saved - h;
            let down = oracle.evaluate(params, batch)?;
            params.values_mut(layer)[j] = saved;
            grad.values_mut(layer)[j] = (up - down) / (2.0 * h);
        }
    }
    Ok(grad)
}

/// (L(θ + h·u) − L(θ − h·u)) / 2h, evaluated on a scratch copy of params.
pub fn directional_derivative(
    oracle: &dyn LossOracle,
    params: &ParamSet,
    batch: &Batch,
    direction: &ParamSet,
    h: f64,
) -> Result<f64> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::config("h must be positive and finite"));
    }
    let mut probe = params.clone_values();
    probe.axpy_toward(direction, h)?;
    let up = oracle.evaluate(&probe, batch)?;
    let mut probe = params.clone_values();
    probe.axpy_toward(direction, -h)?;
    let down = oracle.evaluate(&probe, batch)?;
    Ok((up - down) / (2.0 * h))
}

/// The gradient used by FO reference runs: analytic when the oracle has
/// one, central differences otherwise.
pub fn reference_gradient(
    oracle: &dyn LossOracle,
    params: &mut ParamSet,
    batch: &Batch,
    spec: FdSpec,
) -> Result<ParamSet> {
    if let Some(grad) = oracle.analytic_gradient(params, batch)? {
        return Ok(grad);
    }
    fd_gradient(oracle, params, batch, spec)
}
