//! Anchor-based learnable projections over ZO-SGD.
//!
//! Every κ iterations the loop freezes the weights and learns one scalar
//! γ^(ℓ) per anchored layer: the target L2 distance of that layer from its
//! anchor. γ is re-initialized to the current distance gaps (so the
//! projection starts as the identity), optimized by SPSA in γ-space on the
//! same minibatch as the main step, clipped so the resulting magnitude
//! γ/‖Δθ‖ stays within [1−τ, 1+τ], and then applied by rescaling each
//! layer's deviation from the anchor to norm γ.

use std::collections::{BTreeMap, BTreeSet};

use crate::anchor::{AnchorPrecision, AnchorStore};
use crate::error::{Error, Result};
use crate::estimator::grad_est;
use crate::models::{Batch, LossOracle};
use crate::optimizer::{RunOutput, RunRecord, TrainConfig};
use crate::param::{LayerRole, ParamSet};
use crate::rng::{mix_seed, NormalStream};

/// Layers whose gap is below this are skipped by projection (the rescale
/// divides by the gap, which is exactly zero at iteration 0).
pub const DELTA_GAP: f64 = 1e-12;

const PROJ_SALT: u64 = 0x5052_4f4a;

/// Snapshot of the anchored layers of `params` matching `roles`.
pub fn build_anchor(
    params: &ParamSet,
    roles: &BTreeSet<LayerRole>,
    precision: AnchorPrecision,
) -> Result<AnchorStore> {
    AnchorStore::build(params, roles, precision)
}

/// Per-layer projection targets plus the hyperparameters that govern them.
#[derive(Debug, Clone)]
pub struct ProjectionState {
    /// (layer name, γ) in anchored-layer order.
    gamma: Vec<(String, f64)>,
    tau: f64,
    kappa: usize,
    eps_proj: f64,
    inner_iters: usize,
    inner_lr: f64,
}

impl ProjectionState {
    pub fn new(
        anchor: &AnchorStore,
        tau: f64,
        kappa: usize,
        eps_proj: f64,
        inner_iters: usize,
        inner_lr: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&tau) || tau == 0.0 {
            return Err(Error::config("tau must lie in (0, 1)"));
        }
        if kappa == 0 {
            return Err(Error::config("kappa must be ≥ 1"));
        }
        if eps_proj <= 0.0 || !eps_proj.is_finite() {
            return Err(Error::config("eps_proj must be positive and finite"));
        }
        if !inner_lr.is_finite() || inner_lr < 0.0 {
            return Err(Error::config("inner_lr must be finite and ≥ 0"));
        }
        Ok(Self {
            gamma: anchor.layer_names().map(|n| (n.to_string(), 0.0)).collect(),
            tau,
            kappa,
            eps_proj,
            inner_iters,
            inner_lr,
        })
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn kappa(&self) -> usize {
        self.kappa
    }

    pub fn eps_proj(&self) -> f64 {
        self.eps_proj
    }

    pub fn inner_iters(&self) -> usize {
        self.inner_iters
    }

    pub fn inner_lr(&self) -> f64 {
        self.inner_lr
    }

    pub fn gamma(&self) -> impl Iterator<Item = (&str, f64)> {
        self.gamma.iter().map(|(n, g)| (n.as_str(), *g))
    }

    pub fn gamma_names(&self) -> impl Iterator<Item = &str> {
        self.gamma.iter().map(|(n, _)| n.as_str())
    }

    pub(crate) fn gamma_values(&self) -> Vec<f64> {
        self.gamma.iter().map(|(_, g)| *g).collect()
    }

    pub(crate) fn set_gamma_values(&mut self, values: &[f64]) {
        debug_assert_eq!(values.len(), self.gamma.len());
        for ((_, g), v) in self.gamma.iter_mut().zip(values) {
            *g = *v;
        }
    }

    /// γ^(ℓ) ← gap^(ℓ): the projection becomes the identity.
    pub fn reinit_gamma(&mut self, gaps: &BTreeMap<String, f64>) -> Result<()> {
        for (name, g) in &mut self.gamma {
            *g = *gaps
                .get(name)
                .ok_or_else(|| Error::structure(format!("gaps missing anchored layer `{name}`")))?;
        }
        Ok(())
    }

    /// Clamp each γ^(ℓ) into [(1−τ)·gap, (1+τ)·gap].
    pub fn clip_gamma(&mut self, gaps: &BTreeMap<String, f64>) -> Result<()> {
        for (name, g) in &mut self.gamma {
            let gap = *gaps
                .get(name)
                .ok_or_else(|| Error::structure(format!("gaps missing anchored layer `{name}`")))?;
            let lo = (1.0 - self.tau) * gap;
            let hi = (1.0 + self.tau) * gap;
            *g = g.clamp(lo, hi);
        }
        Ok(())
    }

    /// Projection magnitudes γ^(ℓ)/gap^(ℓ) for layers with gap > δ.
    pub fn magnitudes(&self, gaps: &BTreeMap<String, f64>) -> BTreeMap<String, f64> {
        self.gamma
            .iter()
            .filter_map(|(name, g)| {
                gaps.get(name).and_then(|gap| {
                    (*gap > DELTA_GAP).then(|| (name.clone(), g / gap))
                })
            })
            .collect()
    }
}

/// Rescales each anchored layer's deviation from the anchor to norm γ^(ℓ):
/// θ^(ℓ) ← θ₀^(ℓ) + (γ^(ℓ)/‖Δθ^(ℓ)‖)·Δθ^(ℓ). Layers with gap ≤ δ are left
/// untouched, as are non-anchored layers.
pub fn apply_projection(
    params: &mut ParamSet,
    anchor: &AnchorStore,
    state: &ProjectionState,
) -> Result<()> {
    for (name, gamma) in &state.gamma {
        if !gamma.is_finite() {
            return Err(Error::numeric(format!("γ for layer `{name}` is not finite")));
        }
    }
    for (name, gamma) in &state.gamma {
        let idx = params
            .layer_index(name)
            .ok_or_else(|| Error::structure(format!("params lack anchored layer `{name}`")))?;
        let anchor_values = anchor
            .values(name)
            .ok_or_else(|| Error::structure(format!("anchor lacks layer `{name}`")))?;
        if anchor_values.len() != params.spec(idx).dim() {
            return Err(Error::structure(format!("layer `{name}`: anchor dim mismatch")));
        }
        let values = params.values_mut(idx);
        let gap = values
            .iter()
            .zip(&anchor_values)
            .map(|(v, a)| (v - a) * (v - a))
            .sum::<f64>()
            .sqrt();
        if gap <= DELTA_GAP {
            continue;
        }
        let ratio = gamma / gap;
        if ratio == 1.0 {
            continue;
        }
        for (v, a) in values.iter_mut().zip(&anchor_values) {
            *v = a + ratio * (*v - a);
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric(format!(
                "projection produced non-finite values in layer `{name}`"
            )));
        }
    }
    Ok(())
}

/// One probe round of projection learning.
#[derive(Debug, Clone)]
pub struct ProjectionRound {
    pub w_seed: u64,
    pub gamma_before: Vec<f64>,
    pub loss_plus: f64,
    pub loss_minus: f64,
    pub gamma_after: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ProjectionLearnReport {
    /// Distance gaps at entry (and, since weights are frozen, throughout).
    pub gaps: BTreeMap<String, f64>,
    pub rounds: Vec<ProjectionRound>,
    /// Round index at which a non-finite probe aborted learning, if any.
    pub aborted_round: Option<usize>,
}

/// SPSA in γ-space on a frozen model: re-initializes γ to the current gaps,
/// then for `inner_iters` rounds perturbs γ by ±ε′w (one shared Gaussian w
/// across layers), evaluates the projected model on `batch`, steps γ along
/// −lr·ĝ·w and clips. Params are restored bitwise from a cache after every
/// probe, and γ keeps its last clipped value if a probe goes non-finite.
pub fn learn_projection(
    oracle: &dyn LossOracle,
    params: &mut ParamSet,
    anchor: &AnchorStore,
    state: &mut ProjectionState,
    batch: &Batch,
    seed: u64,
) -> Result<ProjectionLearnReport> {
    let gaps = anchor.gap_norms(params)?;
    state.reinit_gamma(&gaps)?;

    // De-projection cache: exact pre-projection values of anchored layers.
    let cache: Vec<(usize, Vec<f64>)> = state
        .gamma
        .iter()
        .map(|(name, _)| {
            params
                .layer_index(name)
                .map(|idx| (idx, params.values(idx).to_vec()))
                .ok_or_else(|| Error::structure(format!("params lack anchored layer `{name}`")))
        })
        .collect::<Result<_>>()?;
    let restore = |params: &mut ParamSet| {
        for (idx, values) in &cache {
            params.values_mut(*idx).copy_from_slice(values);
        }
    };

    let n = state.gamma.len();
    let eps = state.eps_proj;
    let mut rounds = Vec::with_capacity(state.inner_iters);
    let mut aborted_round = None;

    for j in 0..state.inner_iters {
        let w_seed = seed.wrapping_add(j as u64);
        let mut stream = NormalStream::new(w_seed);
        let w: Vec<f64> = (0..n).map(|_| stream.next_normal()).collect();
        let base = state.gamma_values();

        let probe = |params: &mut ParamSet, state: &mut ProjectionState, sign: f64| -> Result<f64> {
            let shifted: Vec<f64> = base
                .iter()
                .zip(&w)
                .map(|(g, wi)| g + sign * eps * wi)
                .collect();
            state.set_gamma_values(&shifted);
            apply_projection(params, anchor, state)?;
            let loss = oracle.evaluate(params, batch);
            restore(params);
            let loss = loss?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("projection probe loss {loss}")));
            }
            Ok(loss)
        };

        let loss_plus = probe(params, state, 1.0);
        let loss_minus = match &loss_plus {
            Ok(_) => probe(params, state, -1.0),
            Err(_) => Err(Error::numeric("skipped")),
        };
        state.set_gamma_values(&base);

        match (loss_plus, loss_minus) {
            (Ok(lp), Ok(lm)) => {
                let g = (lp - lm) / (2.0 * eps);
                let updated: Vec<f64> = base
                    .iter()
                    .zip(&w)
                    .map(|(gamma, wi)| gamma - state.inner_lr * g * wi)
                    .collect();
                state.set_gamma_values(&updated);
                state.clip_gamma(&gaps)?;
                rounds.push(ProjectionRound {
                    w_seed,
                    gamma_before: base,
                    loss_plus: lp,
                    loss_minus: lm,
                    gamma_after: state.gamma_values(),
                });
            }
            (Err(e), _) | (_, Err(e)) => {
                // Keep the previous (already clipped) γ; params are restored.
                if matches!(e, Error::Structure(_) | Error::Config(_)) {
                    return Err(e);
                }
                aborted_round = Some(j);
                break;
            }
        }
    }

    Ok(ProjectionLearnReport {
        gaps,
        rounds,
        aborted_round,
    })
}

/// The full projected run: ZO-SGD with a projection cycle every κ steps.
pub fn dizo_run(
    oracle: &dyn LossOracle,
    init: &ParamSet,
    data: &[Batch],
    config: &TrainConfig,
    mut state: ProjectionState,
    anchor: &AnchorStore,
    hooks: &mut dyn FnMut(&RunRecord),
) -> Result<RunOutput> {
    run_engine(oracle, init, data, config, Some((&mut state, anchor)), hooks)
}

struct LastIter {
    t: usize,
    probe: f64,
    movement: f64,
    slack: f64,
    lr: f64,
    upd: Vec<f64>,
}

fn finite_eval(oracle: &dyn LossOracle, params: &ParamSet, batch: &Batch) -> Result<f64> {
    let loss = oracle.evaluate(params, batch)?;
    if !loss.is_finite() {
        return Err(Error::numeric(format!("loss is not finite ({loss})")));
    }
    Ok(loss)
}

fn global_norm_sq(values: impl Iterator<Item = f64>) -> f64 {
    values.map(|v| v * v).sum()
}

/// Shared training loop. `projection: None` is plain ZO-SGD; with a state
/// and anchor, every κ-th iteration appends a projection cycle. One code
/// path serves both so that a never-triggering projection is bitwise
/// identical to the baseline.
pub(crate) fn run_engine(
    oracle: &dyn LossOracle,
    init: &ParamSet,
    data: &[Batch],
    config: &TrainConfig,
    mut projection: Option<(&mut ProjectionState, &AnchorStore)>,
    hooks: &mut dyn FnMut(&RunRecord),
) -> Result<RunOutput> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::config("batch stream is empty"));
    }
    if let Some((_, anchor)) = &projection {
        anchor.gap_norms(init)?;
    }
    let tau = projection.as_ref().map(|(s, _)| s.tau()).unwrap_or(0.0);
    let kappa = projection.as_ref().map(|(s, _)| s.kappa()).unwrap_or(usize::MAX);

    let mut params = init.clone_values();
    let init_ref = init.clone_values();
    let layer_names: Vec<String> = params.specs().map(|s| s.name().to_string()).collect();

    let mut records: Vec<RunRecord> = Vec::new();
    let mut violations = 0usize;
    let mut gap_mismatches = 0usize;
    let mut forward: u64 = 0;
    let mut r_max = 0.0f64;
    let mut aborted: Option<String> = None;
    let mut last_iter: Option<LastIter> = None;

    let loss0 = finite_eval(oracle, &params, &data[0])?;
    let rec0 = RunRecord {
        iteration: 0,
        loss_clean: loss0,
        loss_probe: loss0,
        lr_used: config.schedule_lr(0),
        step_movement: 0.0,
        stability_slack: 0.0,
        per_layer_gap: params.diff_norms(&init_ref)?,
        per_layer_update_norm: layer_names.iter().map(|n| (n.clone(), 0.0)).collect(),
        projection_mag: None,
    };
    hooks(&rec0);
    records.push(rec0);

    for t in 1..=config.steps {
        let batch = &data[(t - 1) % data.len()];
        let lr_t = config.schedule_lr(t - 1);
        let iter_seed = mix_seed(config.seed, t as u64);
        let is_proj_iter = projection.is_some() && t % kappa == 0;

        // Pre-step snapshot of anchored layers: projection movement is
        // measured against the iteration's entry point.
        let anchored_before: Option<Vec<(usize, Vec<f64>)>> = if is_proj_iter {
            let (state, _) = projection.as_ref().unwrap();
            let mut snap = Vec::new();
            for name in state.gamma_names() {
                let idx = params.layer_index(name).ok_or_else(|| {
                    Error::structure(format!("params lack anchored layer `{name}`"))
                })?;
                snap.push((idx, params.values(idx).to_vec()));
            }
            Some(snap)
        } else {
            None
        };

        let (sketch, probe_loss) =
            match grad_est(oracle, &mut params, batch, config.eps, config.q, iter_seed) {
                Ok(v) => v,
                Err(e) => {
                    aborted = Some(format!("iteration {t}: {e}"));
                    break;
                }
            };
        forward += 2 * config.q as u64;
        let stats = match sketch.apply(&mut params, lr_t) {
            Ok(s) => s,
            Err(e) => {
                aborted = Some(format!("iteration {t}: {e}"));
                break;
            }
        };
        let eta_g = lr_t * stats.grad_norm;

        // Running max of the deviation norm that bounds projection motion:
        // over anchored layers vs the anchor when projecting, else over all
        // layers vs the initialization.
        let current_radius = if let Some((state, anchor)) = projection.as_ref() {
            let gaps = anchor.gap_norms(&params)?;
            let _ = state;
            global_norm_sq(gaps.values().cloned()).sqrt()
        } else {
            let mut sq = 0.0;
            for i in 0..params.num_layers() {
                sq += params
                    .values(i)
                    .iter()
                    .zip(init_ref.values(i))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>();
            }
            sq.sqrt()
        };
        r_max = r_max.max(current_radius);

        let mut movement = eta_g;
        let mut proj_mags: Option<BTreeMap<String, f64>> = None;
        if is_proj_iter {
            let (state, anchor) = projection.as_mut().unwrap();
            let proj_seed = mix_seed(iter_seed, PROJ_SALT);
            match learn_projection(oracle, &mut params, anchor, state, batch, proj_seed) {
                Ok(report) => {
                    forward += 2 * report.rounds.len() as u64;
                    if let Err(e) = apply_projection(&mut params, anchor, state) {
                        aborted = Some(format!("iteration {t}: {e}"));
                        break;
                    }
                    proj_mags = Some(state.magnitudes(&report.gaps));

                    // Post-projection audit: each projected layer's gap must
                    // now equal its γ.
                    let gaps_after = anchor.gap_norms(&params)?;
                    for (name, gamma) in state.gamma() {
                        if let (Some(before), Some(after)) =
                            (report.gaps.get(name), gaps_after.get(name))
                        {
                            if *before > DELTA_GAP
                                && (after - gamma).abs() > 1e-9 * gamma.abs().max(1e-12)
                            {
                                gap_mismatches += 1;
                            }
                        }
                    }

                    // Actual movement of anchored layers, analytic for the rest.
                    let snap = anchored_before.as_ref().unwrap();
                    let anchored_idx: BTreeSet<usize> = snap.iter().map(|(i, _)| *i).collect();
                    let mut mv_sq = 0.0;
                    for (i, norm) in stats.per_layer_grad_norm.iter().enumerate() {
                        if !anchored_idx.contains(&i) {
                            let u = lr_t * norm;
                            mv_sq += u * u;
                        }
                    }
                    for (idx, before) in snap {
                        mv_sq += params
                            .values(*idx)
                            .iter()
                            .zip(before)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f64>();
                    }
                    movement = mv_sq.sqrt();
                }
                Err(e) => {
                    aborted = Some(format!("iteration {t}: projection: {e}"));
                    break;
                }
            }
        }

        let slack = eta_g + tau * r_max - movement;
        if slack < -1e-6 {
            violations += 1;
        }
        let upd: Vec<f64> = stats
            .per_layer_grad_norm
            .iter()
            .map(|n| lr_t * n)
            .collect();
        last_iter = Some(LastIter {
            t,
            probe: probe_loss,
            movement,
            slack,
            lr: lr_t,
            upd: upd.clone(),
        });

        // Projection iterations are always recorded so every applied
        // magnitude is auditable from the persisted records.
        if t % config.eval_every == 0 || t == config.steps || proj_mags.is_some() {
            let loss_clean = match finite_eval(oracle, &params, batch) {
                Ok(l) => l,
                Err(e) => {
                    aborted = Some(format!("iteration {t}: {e}"));
                    break;
                }
            };
            let rec = RunRecord {
                iteration: t,
                loss_clean,
                loss_probe: probe_loss,
                lr_used: lr_t,
                step_movement: movement,
                stability_slack: slack,
                per_layer_gap: params.diff_norms(&init_ref)?,
                per_layer_update_norm: layer_names
                    .iter()
                    .cloned()
                    .zip(upd.iter().cloned())
                    .collect(),
                projection_mag: proj_mags,
            };
            hooks(&rec);
            records.push(rec);
        }
    }

    // On an abort, attach the last completed iteration if it was not
    // already recorded and the state still evaluates cleanly.
    if aborted.is_some() {
        if let Some(ls) = last_iter {
            if records.last().map(|r| r.iteration) != Some(ls.t) {
                let batch = &data[(ls.t - 1) % data.len()];
                if let (Ok(loss_clean), Ok(gaps)) =
                    (finite_eval(oracle, &params, batch), params.diff_norms(&init_ref))
                {
                    let rec = RunRecord {
                        iteration: ls.t,
                        loss_clean,
                        loss_probe: ls.probe,
                        lr_used: ls.lr,
                        step_movement: ls.movement,
                        stability_slack: ls.slack,
                        per_layer_gap: gaps,
                        per_layer_update_norm: layer_names
                            .iter()
                            .cloned()
                            .zip(ls.upd.iter().cloned())
                            .collect(),
                        projection_mag: None,
                    };
                    hooks(&rec);
                    records.push(rec);
                }
            }
        }
    }

    Ok(RunOutput {
        final_params: params,
        records,
        stability_violations: violations,
        projection_gap_mismatches: gap_mismatches,
        forward_passes: forward,
        aborted,
    })
}
