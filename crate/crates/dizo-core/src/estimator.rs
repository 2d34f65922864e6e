//! Two-point gradient estimation from forward passes.
//!
//! One estimate is `(1/q) Σᵢ [(L(θ+εuᵢ) − L(θ−εuᵢ)) / 2ε] uᵢ` with each
//! `uᵢ` standard normal. The directions are never stored: a [`GradSketch`]
//! keeps only `(seed, coefficient)` per query and regenerates `uᵢ` when the
//! estimate is materialized or applied, so the memory footprint of a
//! gradient is q pairs of numbers regardless of model size.

use crate::error::{Error, Result};
use crate::models::{Batch, LossOracle};
use crate::param::{NoiseHandle, ParamSet};
use crate::rng::{fnv1a64, NormalStream};

/// How multi-query estimates are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleConvention {
    /// Coefficients carry the 1/q factor: the sketch materializes to the
    /// mean of the per-query estimates.
    MeanOverQ,
}

/// Compact gradient estimate: per-query seeds and scalar coefficients.
#[derive(Debug, Clone)]
pub struct GradSketch {
    queries: Vec<(u64, f64)>,
    eps: f64,
    convention: ScaleConvention,
    /// Layer layout at estimation time, for shape checks on replay.
    layout: Vec<(String, usize)>,
}

impl GradSketch {
    pub fn num_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn convention(&self) -> ScaleConvention {
        self.convention
    }

    pub fn queries(&self) -> &[(u64, f64)] {
        &self.queries
    }

    fn check_layout(&self, params: &ParamSet) -> Result<()> {
        if params.num_layers() != self.layout.len()
            || params
                .specs()
                .zip(&self.layout)
                .any(|(s, (name, dim))| s.name() != name || s.dim() != *dim)
        {
            return Err(Error::structure(
                "params shape differs from the sketch's estimation-time shape",
            ));
        }
        Ok(())
    }

    /// Dense Σᵢ coeffᵢ·uᵢ in the sketch's layer layout.
    pub fn materialize(&self, template: &ParamSet) -> Result<ParamSet> {
        self.check_layout(template)?;
        let mut dense = ParamSet::zeros(template.specs().cloned().collect())?;
        for &(seed, coeff) in &self.queries {
            for idx in 0..dense.num_layers() {
                let name = dense.spec(idx).name().to_string();
                let mut stream = NormalStream::new(seed ^ fnv1a64(name.as_bytes()));
                for v in dense.values_mut(idx) {
                    *v += coeff * stream.next_normal();
                }
            }
        }
        Ok(dense)
    }

    /// `params ← params − step · materialized(self)`, streamed one layer at
    /// a time; peak extra memory is one buffer of the largest layer dim.
    ///
    /// Returns per-layer norms of the materialized estimate, which the
    /// training loop reuses for update-norm and movement records.
    pub fn apply(&self, params: &mut ParamSet, step: f64) -> Result<StepStats> {
        if !step.is_finite() {
            return Err(Error::config("step must be finite"));
        }
        self.check_layout(params)?;
        let max_dim = self.layout.iter().map(|(_, d)| *d).max().unwrap_or(0);
        let mut buf = vec![0.0; max_dim];
        let mut per_layer = Vec::with_capacity(self.layout.len());
        let mut total_sq = 0.0;
        for idx in 0..params.num_layers() {
            let dim = params.spec(idx).dim();
            let name_hash = fnv1a64(params.spec(idx).name().as_bytes());
            let chunk = &mut buf[..dim];
            chunk.fill(0.0);
            for &(seed, coeff) in &self.queries {
                let mut stream = NormalStream::new(seed ^ name_hash);
                for b in chunk.iter_mut() {
                    *b += coeff * stream.next_normal();
                }
            }
            let sq: f64 = chunk.iter().map(|v| v * v).sum();
            per_layer.push(sq.sqrt());
            total_sq += sq;
            let values = params.values_mut(idx);
            for (v, b) in values.iter_mut().zip(chunk.iter()) {
                *v -= step * b;
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "apply produced non-finite values in layer `{}`",
                    params.spec(idx).name()
                )));
            }
        }
        Ok(StepStats {
            per_layer_grad_norm: per_layer,
            grad_norm: total_sq.sqrt(),
        })
    }
}

/// Norms of the materialized estimate observed while applying a sketch.
#[derive(Debug, Clone)]
pub struct StepStats {
    /// ‖ĝ^(ℓ)‖ per layer, in layer order.
    pub per_layer_grad_norm: Vec<f64>,
    /// ‖ĝ‖ over all layers.
    pub grad_norm: f64,
}

/// Two-point estimate of ∇L at `params` on `batch`.
///
/// Per query i (seed = `seed + i`): perturb by +ε·uᵢ, evaluate, perturb by
/// −2ε·uᵢ, evaluate, perturb by +ε·uᵢ to restore. The same batch is used
/// for both probes. Returns the sketch and the mean of all 2q probe losses.
pub fn grad_est(
    oracle: &dyn LossOracle,
    params: &mut ParamSet,
    batch: &Batch,
    eps: f64,
    q: usize,
    seed: u64,
) -> Result<(GradSketch, f64)> {
    if eps <= 0.0 || !eps.is_finite() {
        return Err(Error::config("eps must be positive and finite"));
    }
    if q == 0 {
        return Err(Error::config("q must be ≥ 1"));
    }
    let layout: Vec<(String, usize)> = params
        .specs()
        .map(|s| (s.name().to_string(), s.dim()))
        .collect();
    let mut queries = Vec::with_capacity(q);
    let mut probe_sum = 0.0;
    for i in 0..q {
        let qseed = seed.wrapping_add(i as u64);
        params.perturb_in_place(NoiseHandle::new(qseed, eps), None)?;
        let loss_plus = match finite_loss(oracle.evaluate(params, batch), i) {
            Ok(l) => l,
            Err(e) => {
                params.perturb_in_place(NoiseHandle::new(qseed, -eps), None)?;
                return Err(e);
            }
        };
        params.perturb_in_place(NoiseHandle::new(qseed, -2.0 * eps), None)?;
        let loss_minus = match finite_loss(oracle.evaluate(params, batch), i) {
            Ok(l) => l,
            Err(e) => {
                params.perturb_in_place(NoiseHandle::new(qseed, eps), None)?;
                return Err(e);
            }
        };
        params.perturb_in_place(NoiseHandle::new(qseed, eps), None)?;
        probe_sum += loss_plus + loss_minus;
        queries.push((qseed, (loss_plus - loss_minus) / (2.0 * eps * q as f64)));
    }
    let sketch = GradSketch {
        queries,
        eps,
        convention: ScaleConvention::MeanOverQ,
        layout,
    };
    Ok((sketch, probe_sum / (2.0 * q as f64)))
}

fn finite_loss(loss: Result<f64>, query: usize) -> Result<f64> {
    let loss = loss.map_err(|e| Error::numeric(format!("query {query}: {e}")))?;
    if !loss.is_finite() {
        return Err(Error::numeric(format!(
            "query {query}: probe loss is not finite ({loss})"
        )));
    }
    Ok(loss)
}
