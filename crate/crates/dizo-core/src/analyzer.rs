//! Offline and online diagnostics: layer-wise divergence traces, the
//! estimator's variance-symmetry check, stability auditing of finished
//! runs, empirical convergence-rate fits, and exact-gradient reference
//! trajectories for the FO-vs-ZO comparison.
//!
//! Everything here is a pure function of its inputs; any run persisted as
//! records can be re-audited byte-for-byte.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::estimator::grad_est;
use crate::gradcheck::{reference_gradient, FdSpec};
use crate::models::{Batch, LossOracle};
use crate::optimizer::{RunOutput, RunRecord, TrainConfig};
use crate::param::ParamSet;
use crate::rng::{fnv1a64, NormalStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodTag {
    Fo,
    Zo,
    Dizo,
}

/// Per-layer gap time series extracted from run records.
#[derive(Debug, Clone)]
pub struct DivergenceTrace {
    pub method: MethodTag,
    pub iterations: Vec<usize>,
    pub per_layer_gaps: BTreeMap<String, Vec<f64>>,
    /// Cross-layer coefficient of variation of update norms, one entry per
    /// record that carries a nonzero mean update.
    pub update_norm_cv: Vec<f64>,
}

/// Population CV across a slice: std/mean, 0 when the mean is 0.
fn coefficient_of_variation(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return 0.0;
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    var.sqrt() / mean
}

/// Extracts the divergence trace from records.
pub fn divergence_trace(records: &[RunRecord], method: MethodTag) -> Result<DivergenceTrace> {
    if records.is_empty() {
        return Err(Error::structure("no records to trace"));
    }
    let mut per_layer: BTreeMap<String, Vec<f64>> = records[0]
        .per_layer_gap
        .keys()
        .map(|k| (k.clone(), Vec::with_capacity(records.len())))
        .collect();
    let mut iterations = Vec::with_capacity(records.len());
    let mut cv = Vec::new();
    let mut last_iter = None;
    for rec in records {
        if let Some(prev) = last_iter {
            if rec.iteration <= prev {
                return Err(Error::structure("record iterations must strictly increase"));
            }
        }
        last_iter = Some(rec.iteration);
        if rec.per_layer_gap.len() != per_layer.len() {
            return Err(Error::structure("records disagree on the layer set"));
        }
        for (name, series) in per_layer.iter_mut() {
            let gap = rec
                .per_layer_gap
                .get(name)
                .ok_or_else(|| Error::structure(format!("record missing gap for `{name}`")))?;
            series.push(*gap);
        }
        iterations.push(rec.iteration);
        let upd: Vec<f64> = rec.per_layer_update_norm.values().cloned().collect();
        if upd.iter().sum::<f64>() > 0.0 {
            cv.push(coefficient_of_variation(&upd));
        }
    }
    Ok(DivergenceTrace {
        method,
        iterations,
        per_layer_gaps: per_layer,
        update_norm_cv: cv,
    })
}

impl DivergenceTrace {
    pub fn mean_update_cv(&self) -> f64 {
        if self.update_norm_cv.is_empty() {
            return 0.0;
        }
        self.update_norm_cv.iter().sum::<f64>() / self.update_norm_cv.len() as f64
    }

    /// Cross-layer CV of the gap norms at each recorded step: a scale-free
    /// "divergence spread". Zero while all gaps are zero.
    pub fn gap_spread_series(&self) -> Vec<f64> {
        (0..self.iterations.len())
            .map(|i| {
                let gaps: Vec<f64> = self.per_layer_gaps.values().map(|s| s[i]).collect();
                coefficient_of_variation(&gaps)
            })
            .collect()
    }

    /// First recorded iteration at which the spread reaches
    /// `fraction · final spread`.
    pub fn first_iteration_reaching_spread(&self, fraction: f64) -> Option<usize> {
        let spread = self.gap_spread_series();
        let target = fraction * spread.last()?;
        spread
            .iter()
            .position(|s| *s >= target)
            .map(|i| self.iterations[i])
    }
}

/// Per-layer second moments of single-query estimates.
#[derive(Debug, Clone, serde::Serialize)]
pub struct LayerMoment {
    pub dim: usize,
    /// Mean of ‖ĝ^(ℓ)‖² over the samples.
    pub mean_sq_norm: f64,
    /// mean_sq_norm / dim.
    pub normalized: f64,
}

/// Draws `n_samples` single-query estimates at a fixed point and reports
/// per-layer second moments. Isotropic perturbations make the moments
/// proportional to each layer's dimension.
pub fn variance_symmetry_test(
    oracle: &dyn LossOracle,
    params: &mut ParamSet,
    batch: &Batch,
    eps: f64,
    n_samples: usize,
    seed: u64,
) -> Result<BTreeMap<String, LayerMoment>> {
    if n_samples < 1000 {
        return Err(Error::config("variance symmetry needs n_samples ≥ 1000"));
    }
    let layout: Vec<(String, usize)> = params
        .specs()
        .map(|s| (s.name().to_string(), s.dim()))
        .collect();
    let mut sums: Vec<f64> = vec![0.0; layout.len()];
    for k in 0..n_samples {
        let (sketch, _) = grad_est(oracle, params, batch, eps, 1, seed.wrapping_add(k as u64))?;
        let (qseed, coeff) = sketch.queries()[0];
        for (i, (name, dim)) in layout.iter().enumerate() {
            let mut stream = NormalStream::new(qseed ^ fnv1a64(name.as_bytes()));
            let sq: f64 = (0..*dim).map(|_| stream.next_normal().powi(2)).sum();
            sums[i] += coeff * coeff * sq;
        }
    }
    Ok(layout
        .into_iter()
        .zip(sums)
        .map(|((name, dim), sum)| {
            let mean = sum / n_samples as f64;
            (
                name,
                LayerMoment {
                    dim,
                    mean_sq_norm: mean,
                    normalized: mean / dim as f64,
                },
            )
        })
        .collect())
}

/// Stability report over persisted records.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StabilityReport {
    /// Records whose recorded slack is below −1e-6.
    pub violations: usize,
    /// Iterations of those records.
    pub violation_iterations: Vec<usize>,
    /// Max over records of ‖ĝ_t‖ (recovered from update norms and lr).
    pub g_max: f64,
    /// Max over records of the global gap norm.
    pub r_max: f64,
    /// Median of η‖ĝ_t‖/‖Δθ_t‖ over records where both are positive: the
    /// τ the clipping-impulse heuristic recommends.
    pub recommended_tau: f64,
    pub min_slack: f64,
}

/// Audits records against the movement bound η‖ĝ‖ + τ·R_max.
///
/// The per-iteration slack stored in the records is authoritative (the
/// training loop computes it online, against the anchor the projection
/// actually used); this recomputes the summary statistics and flags any
/// recorded violation beyond 1e-6.
pub fn stability_audit(records: &[RunRecord], tau: f64) -> Result<StabilityReport> {
    if records.is_empty() {
        return Err(Error::structure("no records to audit"));
    }
    let mut violations = 0;
    let mut violation_iterations = Vec::new();
    let mut g_max = 0.0f64;
    let mut r_max = 0.0f64;
    let mut ratios = Vec::new();
    let mut min_slack = f64::INFINITY;
    for rec in records {
        let gap_global = rec
            .per_layer_gap
            .values()
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt();
        r_max = r_max.max(gap_global);
        let eta_g = rec
            .per_layer_update_norm
            .values()
            .map(|u| u * u)
            .sum::<f64>()
            .sqrt();
        if rec.lr_used > 0.0 {
            g_max = g_max.max(eta_g / rec.lr_used);
        }
        if rec.iteration > 0 {
            min_slack = min_slack.min(rec.stability_slack);
            if rec.stability_slack < -1e-6 {
                violations += 1;
                violation_iterations.push(rec.iteration);
            }
            if eta_g > 0.0 && gap_global > 0.0 {
                ratios.push(eta_g / gap_global);
            }
        }
    }
    let recommended_tau = median(&mut ratios).unwrap_or(tau);
    Ok(StabilityReport {
        violations,
        violation_iterations,
        g_max,
        r_max,
        recommended_tau,
        min_slack: if min_slack.is_finite() { min_slack } else { 0.0 },
    })
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    Some(values[values.len() / 2])
}

/// Log-log fit of min-gradient-norm² against the step budget.
#[derive(Debug, Clone, serde::Serialize)]
pub struct RateFit {
    /// Exponent α in min-norm² ∝ T^(−α).
    pub exponent: f64,
    /// RMS residual of the fit in log space.
    pub residual: f64,
    /// (budget, aggregated min-norm²) pairs that were fitted.
    pub points: Vec<(usize, f64)>,
}

/// Least squares of ln y = ln C − α·ln T.
pub fn fit_decay_exponent(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.len() < 2 {
        return Err(Error::config("need at least two points to fit"));
    }
    if points.iter().any(|(t, y)| *t <= 0.0 || *y <= 0.0) {
        return Err(Error::numeric("fit requires positive budgets and values"));
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|(t, _)| t.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, y)| y.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::config("budgets must not be all equal"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let alpha = -slope;
    let intercept = my - slope * mx;
    let rss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let fitted = intercept + slope * x;
            (y - fitted) * (y - fitted)
        })
        .sum();
    Ok((alpha, (rss / n).sqrt()))
}

/// Runs `probe(budget, seed)` over all budgets and seeds, aggregates
/// per-budget by the median over seeds, and fits the decay exponent.
/// Budgets must number ≥ 4 and span at least one decade.
pub fn rate_fit(
    probe: &mut dyn FnMut(usize, u64) -> Result<f64>,
    budgets: &[usize],
    seeds: &[u64],
) -> Result<RateFit> {
    if budgets.len() < 4 {
        return Err(Error::config("rate fit needs ≥ 4 budgets"));
    }
    let min_b = *budgets.iter().min().unwrap();
    let max_b = *budgets.iter().max().unwrap();
    if min_b == 0 || (max_b as f64) < 10.0 * min_b as f64 {
        return Err(Error::config("budgets must span at least one decade"));
    }
    if seeds.is_empty() {
        return Err(Error::config("rate fit needs at least one seed"));
    }
    let mut points = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let mut values = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            values.push(probe(budget, seed)?);
        }
        let m = median(&mut values).unwrap();
        points.push((budget, m));
    }
    let float_points: Vec<(f64, f64)> = points
        .iter()
        .map(|(t, y)| (*t as f64, *y))
        .collect();
    let (exponent, residual) = fit_decay_exponent(&float_points)?;
    if !exponent.is_finite() {
        return Err(Error::numeric("fitted exponent is not finite"));
    }
    Ok(RateFit {
        exponent,
        residual,
        points,
    })
}

/// Minimum over checkpoints of ‖∇L‖² along a ZO-SGD run, where L is the
/// full objective (the gradient is averaged over every batch in `data`).
/// Measured with the exact-gradient oracle every `checkpoint_every` steps;
/// the run executes in segments between checkpoints. The cost guard
/// applies when the model has no analytic gradient.
pub fn zo_min_grad_norm_sq(
    oracle: &dyn LossOracle,
    init: &ParamSet,
    data: &[Batch],
    config: &TrainConfig,
    checkpoint_every: usize,
) -> Result<f64> {
    if checkpoint_every == 0 {
        return Err(Error::config("checkpoint_every must be ≥ 1"));
    }
    if data.is_empty() {
        return Err(Error::config("batch stream is empty"));
    }
    let has_analytic = oracle.analytic_gradient(init, &data[0])?.is_some();
    if !has_analytic && init.total_dim() > FdSpec::default().dim_guard {
        return Err(Error::config(
            "model too large for finite-difference checkpoints",
        ));
    }
    let mut params = init.clone_values();
    let mut min_sq = f64::INFINITY;
    let mut measure = |params: &mut ParamSet| -> Result<()> {
        let mut full = ParamSet::zeros(params.specs().cloned().collect())?;
        for batch in data {
            let grad = reference_gradient(oracle, params, batch, FdSpec::default())?;
            full.axpy_toward(&grad, 1.0 / data.len() as f64)?;
        }
        let mut sq = 0.0;
        for i in 0..full.num_layers() {
            sq += full.values(i).iter().map(|g| g * g).sum::<f64>();
        }
        min_sq = min_sq.min(sq);
        Ok(())
    };
    measure(&mut params)?;
    let mut done = 0usize;
    let mut segment = 0u64;
    while done < config.steps {
        let steps = checkpoint_every.min(config.steps - done);
        let seg_config = TrainConfig {
            steps,
            seed: crate::rng::mix_seed(config.seed, segment),
            ..config.clone()
        };
        let out = crate::optimizer::zo_sgd_run(oracle, &params, data, &seg_config, &mut |_| {})?;
        if let Some(reason) = out.aborted {
            return Err(Error::numeric(format!("rate probe aborted: {reason}")));
        }
        params = out.final_params;
        done += steps;
        segment += 1;
        measure(&mut params)?;
    }
    Ok(min_sq)
}

/// Exact-gradient descent producing the same record schema as the ZO runs,
/// so traces are directly comparable.
pub fn fo_reference_run(
    oracle: &dyn LossOracle,
    init: &ParamSet,
    data: &[Batch],
    lr: f64,
    steps: usize,
    eval_every: usize,
    hooks: &mut dyn FnMut(&RunRecord),
) -> Result<RunOutput> {
    if steps == 0 || eval_every == 0 {
        return Err(Error::config("steps and eval_every must be ≥ 1"));
    }
    if !lr.is_finite() || lr < 0.0 {
        return Err(Error::config("lr must be finite and ≥ 0"));
    }
    if data.is_empty() {
        return Err(Error::config("batch stream is empty"));
    }
    let has_analytic = oracle.analytic_gradient(init, &data[0])?.is_some();
    if !has_analytic && init.total_dim() > FdSpec::default().dim_guard {
        return Err(Error::config(
            "model too large for finite-difference reference gradients",
        ));
    }

    let mut params = init.clone_values();
    let init_ref = init.clone_values();
    let layer_names: Vec<String> = params.specs().map(|s| s.name().to_string()).collect();
    let mut records = Vec::new();
    let mut aborted = None;

    let loss0 = oracle.evaluate(&params, &data[0])?;
    let rec0 = RunRecord {
        iteration: 0,
        loss_clean: loss0,
        loss_probe: loss0,
        lr_used: lr,
        step_movement: 0.0,
        stability_slack: 0.0,
        per_layer_gap: params.diff_norms(&init_ref)?,
        per_layer_update_norm: layer_names.iter().map(|n| (n.clone(), 0.0)).collect(),
        projection_mag: None,
    };
    hooks(&rec0);
    records.push(rec0);

    let mut forward = 0u64;
    for t in 1..=steps {
        let batch = &data[(t - 1) % data.len()];
        let grad = match reference_gradient(oracle, &mut params, batch, FdSpec::default()) {
            Ok(g) => g,
            Err(e) => {
                aborted = Some(format!("iteration {t}: {e}"));
                break;
            }
        };
        let upd: Vec<f64> = (0..grad.num_layers())
            .map(|i| lr * grad.layer_norm(i))
            .collect();
        let movement = upd.iter().map(|u| u * u).sum::<f64>().sqrt();
        if let Err(e) = params.axpy_toward(&grad, -lr) {
            aborted = Some(format!("iteration {t}: {e}"));
            break;
        }
        if t % eval_every == 0 || t == steps {
            let loss_clean = match oracle.evaluate(&params, batch) {
                Ok(l) if l.is_finite() => l,
                Ok(l) => {
                    aborted = Some(format!("iteration {t}: loss {l}"));
                    break;
                }
                Err(e) => {
                    aborted = Some(format!("iteration {t}: {e}"));
                    break;
                }
            };
            let rec = RunRecord {
                iteration: t,
                loss_clean,
                loss_probe: loss_clean,
                lr_used: lr,
                step_movement: movement,
                stability_slack: 0.0,
                per_layer_gap: params.diff_norms(&init_ref)?,
                per_layer_update_norm: layer_names
                    .iter()
                    .cloned()
                    .zip(upd.iter().cloned())
                    .collect(),
                projection_mag: None,
            };
            hooks(&rec);
            records.push(rec);
        }
        forward += 1;
    }

    Ok(RunOutput {
        final_params: params,
        records,
        stability_violations: 0,
        projection_gap_mismatches: 0,
        forward_passes: forward,
        aborted,
    })
}
