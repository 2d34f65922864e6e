//! Acceptance suite: one test per criterion, each printing a pass line
//! with the measured values once its assertions hold. Run with
//! `cargo test --test acceptance -- --nocapture` to see the lines.

use std::collections::BTreeSet;

use dizo_core::analyzer::{
    divergence_trace, fo_reference_run, rate_fit, stability_audit, variance_symmetry_test,
    zo_min_grad_norm_sq, MethodTag,
};
use dizo_core::dizo::{build_anchor, dizo_run, ProjectionState};
use dizo_core::estimator::grad_est;
use dizo_core::gradcheck::{fd_gradient, FdSpec};
use dizo_core::models::{
    batch_tags, gaussian_blobs, make_attention_model, token_sequences, Batch, LogisticTask,
    LossOracle, MlpTask, QuadraticTask,
};
use dizo_core::optimizer::{zo_sgd_run, LrSchedule, RunRecord, TrainConfig};
use dizo_core::param::{LayerRole, LayerSpec, NoiseHandle, ParamSet};
use dizo_core::AnchorPrecision;

fn config(steps: usize, lr: f64, seed: u64, eval_every: usize) -> TrainConfig {
    TrainConfig {
        steps,
        lr,
        lr_schedule: LrSchedule::Constant,
        eps: 1e-3,
        q: 1,
        batch_size: 32,
        seed,
        eval_every,
    }
}

fn first_below(records: &[RunRecord], fraction: f64) -> Option<usize> {
    let target = fraction * records[0].loss_clean;
    records
        .iter()
        .find(|r| r.loss_clean <= target)
        .map(|r| r.iteration)
}

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Criterion 1: the mean of 10⁴ single-query estimates at a fixed point of
/// the heterogeneous quadratic matches the analytic gradient within 5%
/// relative per coordinate.
#[test]
fn c01_estimator_unbiasedness() {
    let start = std::time::Instant::now();
    // One dim per layer so every coordinate's |∂L| is comparable and far
    // above the Monte-Carlo noise at this sample count.
    let task = QuadraticTask::heterogeneous_benchmark(1, 42).unwrap();
    let mut params = task.param_template();
    for i in 0..params.num_layers() {
        let name = params.spec(i).name().to_string();
        let c = task.center(&name).unwrap()[0];
        params.values_mut(i)[0] = c + 1.0;
    }
    let grad = task
        .analytic_gradient(&params, &Batch::empty())
        .unwrap()
        .unwrap();

    let n = 10_000u64;
    let mut mean = vec![0.0; params.num_layers()];
    for k in 0..n {
        let (sketch, _) = grad_est(&task, &mut params, &Batch::empty(), 1e-3, 1, 2000 + k).unwrap();
        let est = sketch.materialize(&params).unwrap();
        for (i, m) in mean.iter_mut().enumerate() {
            *m += est.values(i)[0] / n as f64;
        }
    }
    let mut worst = 0.0f64;
    for (i, m) in mean.iter().enumerate() {
        let g = grad.values(i)[0];
        let rel = (m - g).abs() / g.abs();
        worst = worst.max(rel);
        assert!(rel <= 0.05, "coordinate {i}: mean {m} vs gradient {g}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!(
        "criterion 01 estimator-unbiasedness: PASS (worst per-coordinate error {:.2}% ≤ 5%, {:?})",
        100.0 * worst,
        elapsed
    );
}

/// Criterion 2: per-layer second moments of single-query estimates are
/// proportional to layer dimension.
#[test]
fn c02_variance_symmetry() {
    let start = std::time::Instant::now();
    let spec = vec![
        (LayerSpec::new("eq_a", LayerRole::Other, 64).unwrap(), 1.0, vec![0.0; 64]),
        (LayerSpec::new("eq_b", LayerRole::Other, 64).unwrap(), 1.0, vec![0.0; 64]),
        (LayerSpec::new("big", LayerRole::Other, 256).unwrap(), 1.0, vec![0.0; 256]),
    ];
    let task = QuadraticTask::new(spec).unwrap();
    let mut params = task.param_template();
    for i in 0..params.num_layers() {
        for v in params.values_mut(i) {
            *v = 0.1;
        }
    }
    let report =
        variance_symmetry_test(&task, &mut params, &Batch::empty(), 1e-3, 10_000, 99).unwrap();
    let eq_ratio = report["eq_a"].normalized / report["eq_b"].normalized;
    assert!(
        (0.9..=1.1).contains(&eq_ratio),
        "equal-dim normalized ratio {eq_ratio}"
    );
    let raw_ratio = report["big"].mean_sq_norm / report["eq_a"].mean_sq_norm;
    assert!(
        (raw_ratio - 4.0).abs() <= 0.4,
        "dims 256 vs 64 raw ratio {raw_ratio}"
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 30, "took {elapsed:?}");
    println!(
        "criterion 02 variance-symmetry: PASS (equal-dim ratio {eq_ratio:.4} ∈ [0.9,1.1], 256/64 ratio {raw_ratio:.3} = 4±10%, {elapsed:?})"
    );
}

/// Criterion 3: a projection that never triggers (κ > T) is bitwise
/// identical to plain ZO-SGD.
#[test]
fn c03_revert_equivalence() {
    let start = std::time::Instant::now();
    let task = QuadraticTask::heterogeneous_benchmark(16, 1000).unwrap();
    let init = task.param_template();
    let tc = config(400, 1e-2, 7, 20);
    let zo = zo_sgd_run(&task, &init, &[Batch::empty()], &tc, &mut |_| {}).unwrap();

    let roles: BTreeSet<LayerRole> = [LayerRole::Other].into();
    let anchor = build_anchor(&init, &roles, AnchorPrecision::F64).unwrap();
    let state = ProjectionState::new(&anchor, 0.2, 401, 0.1, 10, 0.3).unwrap();
    let dz = dizo_run(&task, &init, &[Batch::empty()], &tc, state, &anchor, &mut |_| {}).unwrap();

    for i in 0..zo.final_params.num_layers() {
        for (a, b) in zo
            .final_params
            .values(i)
            .iter()
            .zip(dz.final_params.values(i))
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
    assert_eq!(zo.records.len(), dz.records.len());
    for (a, b) in zo.records.iter().zip(&dz.records) {
        assert_eq!(a.iteration, b.iteration);
        assert_eq!(a.loss_clean.to_bits(), b.loss_clean.to_bits());
        assert_eq!(a.loss_probe.to_bits(), b.loss_probe.to_bits());
        assert_eq!(a.step_movement.to_bits(), b.step_movement.to_bits());
        assert_eq!(a.per_layer_gap, b.per_layer_gap);
        assert_eq!(a.per_layer_update_norm, b.per_layer_update_norm);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 5, "took {elapsed:?}");
    println!("criterion 03 revert-equivalence: PASS (bitwise-identical trajectory, {elapsed:?})");
}

/// Criteria 4 + 5: over a 10-seed × 3-τ sweep on the attention model with
/// Q/V anchoring, every logged projection magnitude stays inside
/// [1−τ, 1+τ], every post-projection gap equals its γ, and the stability
/// bound holds online.
#[test]
fn c04_c05_clipping_and_gap_equality_sweep() {
    let start = std::time::Instant::now();
    let task = make_attention_model(8, 3, 1000).unwrap();
    let init = task.param_template();
    let data = token_sequences(10, 8, 6, task.vocab(), 3, 7);
    let roles: BTreeSet<LayerRole> = [LayerRole::AttnQ, LayerRole::AttnV].into();
    let anchor = build_anchor(&init, &roles, AnchorPrecision::F64).unwrap();

    let mut logged = 0usize;
    for tau in [0.1, 0.2, 0.3] {
        for seed in 1..=10u64 {
            let tc = config(150, 1e-2, seed, 50);
            let state = ProjectionState::new(&anchor, tau, 50, 0.1, 10, 0.1).unwrap();
            let out = dizo_run(&task, &init, &data, &tc, state, &anchor, &mut |_| {}).unwrap();
            assert!(out.aborted.is_none());
            assert_eq!(out.stability_violations, 0, "τ={tau} seed={seed}");
            assert_eq!(out.projection_gap_mismatches, 0, "τ={tau} seed={seed}");
            for rec in &out.records {
                if let Some(mags) = &rec.projection_mag {
                    for (name, mag) in mags {
                        logged += 1;
                        assert!(
                            *mag >= (1.0 - tau) * (1.0 - 1e-12)
                                && *mag <= (1.0 + tau) * (1.0 + 1e-12),
                            "τ={tau} seed={seed} iter={} layer={name}: magnitude {mag}",
                            rec.iteration
                        );
                    }
                }
            }
        }
    }
    assert!(logged >= 10 * 3 * 3 * 2, "only {logged} magnitudes logged");
    let elapsed = start.elapsed();
    println!(
        "criterion 04 clipping-invariant: PASS ({logged} logged magnitudes within bounds over 10 seeds × 3 τ, {elapsed:?})"
    );
    println!(
        "criterion 05 post-projection-gap-equality: PASS (zero mismatches across the sweep, {elapsed:?})"
    );
}

/// Criterion 6: per-iteration movement obeys η‖ĝ‖ + τ·R_max with zero
/// violations beyond 1e-6, online and in the persisted records.
#[test]
fn c06_stability_bound() {
    let start = std::time::Instant::now();
    let mut checked_runs = 0usize;

    // Plain ZO on the quadratic.
    let task = QuadraticTask::heterogeneous_benchmark(16, 1000).unwrap();
    let init = task.param_template();
    let zo = zo_sgd_run(&task, &init, &[Batch::empty()], &config(500, 1e-2, 3, 10), &mut |_| {})
        .unwrap();
    assert_eq!(zo.stability_violations, 0);
    assert_eq!(stability_audit(&zo.records, 0.0).unwrap().violations, 0);
    checked_runs += 1;

    // Projected runs across τ on quadratic and MLP, f64 and q8 anchors.
    let roles: BTreeSet<LayerRole> = [LayerRole::Other].into();
    let anchor = build_anchor(&init, &roles, AnchorPrecision::F64).unwrap();
    for tau in [0.1, 0.2, 0.3] {
        for seed in [1u64, 2, 3] {
            let state = ProjectionState::new(&anchor, tau, 25, 0.1, 10, 0.3).unwrap();
            let out = dizo_run(
                &task,
                &init,
                &[Batch::empty()],
                &config(500, 1e-2, seed, 10),
                state,
                &anchor,
                &mut |_| {},
            )
            .unwrap();
            assert_eq!(out.stability_violations, 0, "quadratic τ={tau} seed={seed}");
            let audit = stability_audit(&out.records, tau).unwrap();
            assert_eq!(audit.violations, 0);
            assert!(audit.min_slack >= -1e-6);
            checked_runs += 1;
        }
    }

    let mlp = MlpTask::new(2, 16, 3, 1000).unwrap();
    let mlp_init = mlp.param_template();
    let blobs = gaussian_blobs(50, 32, 2, 3, 4.0, 7);
    let dense: BTreeSet<LayerRole> = [LayerRole::Dense].into();
    for precision in [AnchorPrecision::F64, AnchorPrecision::Q8] {
        let anchor = build_anchor(&mlp_init, &dense, precision).unwrap();
        let state = ProjectionState::new(&anchor, 0.2, 50, 0.1, 10, 0.1).unwrap();
        let out = dizo_run(
            &mlp,
            &mlp_init,
            &blobs,
            &config(1000, 5e-3, 1, 10),
            state,
            &anchor,
            &mut |_| {},
        )
        .unwrap();
        assert_eq!(out.stability_violations, 0, "{precision:?}");
        let audit = stability_audit(&out.records, 0.2).unwrap();
        assert_eq!(audit.violations, 0);
        checked_runs += 1;
    }

    let elapsed = start.elapsed();
    println!(
        "criterion 06 stability-bound: PASS (zero violations over {checked_runs} runs, {elapsed:?})"
    );
}

/// Criterion 7: DiZO reaches the 10%-of-initial-loss threshold in ≥ 20%
/// fewer iterations than ZO-SGD on the heterogeneous quadratic and on
/// blobs_mlp (5-seed medians), with final loss no worse.
#[test]
fn c07_convergence_acceleration() {
    let start = std::time::Instant::now();
    let seeds = [1u64, 2, 3, 4, 5];

    // Heterogeneous quadratic arm.
    let task = QuadraticTask::heterogeneous_benchmark(16, 1000).unwrap();
    let init = task.param_template();
    let roles: BTreeSet<LayerRole> = [LayerRole::Other].into();
    let anchor = build_anchor(&init, &roles, AnchorPrecision::F64).unwrap();
    let mut zo_iters = Vec::new();
    let mut dz_iters = Vec::new();
    let mut zo_finals = Vec::new();
    let mut dz_finals = Vec::new();
    for seed in seeds {
        let tc = config(2000, 1e-2, seed, 10);
        let zo = zo_sgd_run(&task, &init, &[Batch::empty()], &tc, &mut |_| {}).unwrap();
        let state = ProjectionState::new(&anchor, 0.2, 25, 0.1, 10, 0.3).unwrap();
        let dz =
            dizo_run(&task, &init, &[Batch::empty()], &tc, state, &anchor, &mut |_| {}).unwrap();
        zo_iters.push(first_below(&zo.records, 0.1).expect("zo reaches threshold") as f64);
        dz_iters.push(first_below(&dz.records, 0.1).expect("dizo reaches threshold") as f64);
        zo_finals.push(zo.records.last().unwrap().loss_clean);
        dz_finals.push(dz.records.last().unwrap().loss_clean);
    }
    let quad_ratio = median(dz_iters.clone()) / median(zo_iters.clone());
    assert!(
        quad_ratio <= 0.8,
        "quadratic iteration ratio {quad_ratio} > 0.8 (zo {zo_iters:?}, dizo {dz_iters:?})"
    );
    let quad_final_ok = median(dz_finals.clone()) <= median(zo_finals.clone());
    assert!(
        quad_final_ok,
        "quadratic final loss: dizo {dz_finals:?} vs zo {zo_finals:?}"
    );

    // blobs_mlp arm.
    let mlp = MlpTask::new(2, 16, 3, 1000).unwrap();
    let mlp_init = mlp.param_template();
    let blobs = gaussian_blobs(50, 32, 2, 3, 4.0, 7);
    let dense: BTreeSet<LayerRole> = [LayerRole::Dense].into();
    let mlp_anchor = build_anchor(&mlp_init, &dense, AnchorPrecision::F64).unwrap();
    let mut zo_iters = Vec::new();
    let mut dz_iters = Vec::new();
    let mut zo_finals = Vec::new();
    let mut dz_finals = Vec::new();
    for seed in seeds {
        let tc = config(2000, 5e-3, seed, 10);
        let zo = zo_sgd_run(&mlp, &mlp_init, &blobs, &tc, &mut |_| {}).unwrap();
        let state = ProjectionState::new(&mlp_anchor, 0.2, 50, 0.1, 10, 0.1).unwrap();
        let dz = dizo_run(&mlp, &mlp_init, &blobs, &tc, state, &mlp_anchor, &mut |_| {}).unwrap();
        zo_iters.push(first_below(&zo.records, 0.1).expect("zo reaches threshold") as f64);
        dz_iters.push(first_below(&dz.records, 0.1).expect("dizo reaches threshold") as f64);
        zo_finals.push(zo.records.last().unwrap().loss_clean);
        dz_finals.push(dz.records.last().unwrap().loss_clean);
    }
    let mlp_ratio = median(dz_iters.clone()) / median(zo_iters.clone());
    assert!(
        mlp_ratio <= 0.8,
        "mlp iteration ratio {mlp_ratio} > 0.8 (zo {zo_iters:?}, dizo {dz_iters:?})"
    );
    let mlp_final_ok = median(dz_finals.clone()) <= median(zo_finals.clone());
    assert!(mlp_final_ok, "mlp final loss: dizo {dz_finals:?} vs zo {zo_finals:?}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}");
    println!(
        "criterion 07 convergence-acceleration: PASS (iteration ratios quadratic {quad_ratio:.2}, mlp {mlp_ratio:.2}, both ≤ 0.8; final losses no worse; {elapsed:?})"
    );
}

/// Criterion 8: ZO updates are uniform across equal-dim layers
/// (cross-layer CV < 0.15) and the FO reference establishes its gap
/// spread within the first 10% of steps while ZO needs more than half.
#[test]
fn c08_divergence_pattern() {
    let start = std::time::Instant::now();
    let task = QuadraticTask::divergence_benchmark(96, 21).unwrap();
    let init = task.param_template();
    let steps = 800;

    let fo = fo_reference_run(&task, &init, &[Batch::empty()], 0.1, steps, 5, &mut |_| {}).unwrap();
    let fo_trace = divergence_trace(&fo.records, MethodTag::Fo).unwrap();
    let fo_at = fo_trace.first_iteration_reaching_spread(0.8).unwrap();
    assert!(fo_at <= steps / 10, "FO reached 80% spread at {fo_at}/{steps}");

    let zo = zo_sgd_run(
        &task,
        &init,
        &[Batch::empty()],
        &config(steps, 2e-3, 13, 5),
        &mut |_| {},
    )
    .unwrap();
    let zo_trace = divergence_trace(&zo.records, MethodTag::Zo).unwrap();
    let zo_at = zo_trace.first_iteration_reaching_spread(0.8).unwrap();
    assert!(zo_at > steps / 2, "ZO reached 80% spread at {zo_at}/{steps}");

    let cv = zo_trace.mean_update_cv();
    assert!(cv < 0.15, "ZO cross-layer update CV {cv}");

    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}");
    println!(
        "criterion 08 divergence-pattern: PASS (ZO update CV {cv:.3} < 0.15; FO 80% spread at {fo_at}/{steps}, ZO at {zo_at}/{steps}; {elapsed:?})"
    );
}

/// Criterion 9: a q8-quantized anchor reconstructs within scale/2 per
/// element and costs at most 10% relative in final loss on blobs_mlp.
#[test]
fn c09_quantized_anchor() {
    let start = std::time::Instant::now();
    let mlp = MlpTask::new(2, 16, 3, 1000).unwrap();
    let init = mlp.param_template();
    let blobs = gaussian_blobs(50, 32, 2, 3, 4.0, 7);
    let dense: BTreeSet<LayerRole> = [LayerRole::Dense].into();

    // Reconstruction bound, per element.
    let q8 = build_anchor(&init, &dense, AnchorPrecision::Q8).unwrap();
    for name in ["fc1.w", "fc2.w"] {
        let original = init.values_by_name(name).unwrap();
        let decoded = q8.values(name).unwrap();
        let min = original.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = original.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = (max - min) / 255.0;
        for (x, d) in original.iter().zip(&decoded) {
            assert!(
                (x - d).abs() <= scale / 2.0 * (1.0 + 1e-12),
                "layer {name}: |{x} - {d}| > scale/2 = {}",
                scale / 2.0
            );
        }
    }

    // Training parity, 5-seed medians.
    let mut finals = Vec::new();
    for precision in [AnchorPrecision::F64, AnchorPrecision::Q8] {
        let anchor = build_anchor(&init, &dense, precision).unwrap();
        let mut fs = Vec::new();
        for seed in [1u64, 2, 3, 4, 5] {
            let tc = config(2000, 5e-3, seed, 10);
            let state = ProjectionState::new(&anchor, 0.2, 50, 0.1, 10, 0.1).unwrap();
            let out = dizo_run(&mlp, &init, &blobs, &tc, state, &anchor, &mut |_| {}).unwrap();
            assert!(out.aborted.is_none());
            fs.push(out.records.last().unwrap().loss_clean);
        }
        finals.push(median(fs));
    }
    let rel = (finals[1] - finals[0]).abs() / finals[0];
    assert!(
        rel <= 0.10,
        "q8 median final loss {} vs f64 {} ({:.1}% apart)",
        finals[1],
        finals[0],
        100.0 * rel
    );
    let elapsed = start.elapsed();
    println!(
        "criterion 09 quantized-anchor: PASS (reconstruction ≤ scale/2; final-loss gap {:.2}% ≤ 10%; {elapsed:?})",
        100.0 * rel
    );
}

/// Criterion 10: the fitted decay exponent of min ‖∇L‖² against the step
/// budget lies in [0.3, 0.7] on the (minibatch) quadratic.
#[test]
fn c10_rate_sanity() {
    let start = std::time::Instant::now();
    let task = QuadraticTask::heterogeneous_benchmark(16, 1000)
        .unwrap()
        .with_jitter(1.0);
    let init = task.param_template();
    let data = batch_tags(64);
    let mut probe = |budget: usize, seed: u64| {
        let tc = TrainConfig {
            steps: budget,
            lr: 0.35 / (budget as f64).sqrt(),
            lr_schedule: LrSchedule::Constant,
            eps: 1e-3,
            q: 1,
            batch_size: 1,
            seed,
            eval_every: budget,
        };
        zo_min_grad_norm_sq(&task, &init, &data, &tc, (budget / 16).max(1))
    };
    let fit = rate_fit(&mut probe, &[500, 1000, 2000, 4000, 8000], &[1, 2, 3]).unwrap();
    assert!(
        (0.3..=0.7).contains(&fit.exponent),
        "fitted exponent α = {} (points {:?})",
        fit.exponent,
        fit.points
    );
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}");
    println!(
        "criterion 10 rate-sanity: PASS (α = {:.3} ∈ [0.3, 0.7], residual {:.3}, {elapsed:?})",
        fit.exponent, fit.residual
    );
}

/// Criterion 11: the finite-difference oracle matches analytic gradients
/// within 1e-6 relative wherever a model provides them, and the
/// perturb/reverse round trip holds within 1e-9 everywhere.
#[test]
fn c11_oracle_integrity() {
    let start = std::time::Instant::now();

    // fd vs analytic on the models that provide exact gradients.
    let mut worst_rel = 0.0f64;
    {
        let task = QuadraticTask::heterogeneous_benchmark(8, 1000).unwrap();
        for seed in 0..10u64 {
            let mut params = task.param_template();
            params.perturb_in_place(NoiseHandle::new(seed, 0.5), None).unwrap();
            let analytic = task.analytic_gradient(&params, &Batch::empty()).unwrap().unwrap();
            let fd = fd_gradient(&task, &mut params, &Batch::empty(), FdSpec::default()).unwrap();
            worst_rel = worst_rel.max(max_rel_error(&fd, &analytic));
        }
    }
    {
        let task = LogisticTask::new(3, 3, 1000).unwrap();
        let data = gaussian_blobs(10, 12, 3, 3, 2.0, 3);
        for seed in 0..10u64 {
            let mut params = task.param_template();
            params.perturb_in_place(NoiseHandle::new(seed, 0.3), None).unwrap();
            let batch = &data[seed as usize % data.len()];
            let analytic = task.analytic_gradient(&params, batch).unwrap().unwrap();
            let fd = fd_gradient(&task, &mut params, batch, FdSpec::default()).unwrap();
            worst_rel = worst_rel.max(max_rel_error(&fd, &analytic));
        }
    }
    assert!(worst_rel <= 1e-6, "worst fd-vs-analytic relative error {worst_rel}");

    // Perturb/reverse round trip across every model family.
    let mut worst_round = 0.0f64;
    let oracles: Vec<Box<dyn LossOracle>> = vec![
        Box::new(QuadraticTask::heterogeneous_benchmark(8, 1000).unwrap()),
        Box::new(LogisticTask::new(3, 3, 1000).unwrap()),
        Box::new(MlpTask::new(2, 16, 3, 1000).unwrap()),
        Box::new(make_attention_model(8, 3, 1000).unwrap()),
    ];
    for oracle in &oracles {
        for seed in 0..20u64 {
            let mut params = oracle.param_template();
            let reference = params.clone_values();
            let handle = NoiseHandle::new(seed, 1e-3);
            params.perturb_in_place(handle, None).unwrap();
            params.perturb_in_place(handle.reversed(), None).unwrap();
            for i in 0..params.num_layers() {
                for (a, b) in params.values(i).iter().zip(reference.values(i)) {
                    let rel = (a - b).abs() / b.abs().max(1.0);
                    worst_round = worst_round.max(rel);
                }
            }
        }
    }
    assert!(worst_round <= 1e-9, "worst round-trip relative error {worst_round}");

    let elapsed = start.elapsed();
    println!(
        "criterion 11 oracle-integrity: PASS (fd error {worst_rel:.2e} ≤ 1e-6, round trip {worst_round:.2e} ≤ 1e-9, {elapsed:?})"
    );
}

/// Max |fd − analytic| relative to the gradient's max-norm.
fn max_rel_error(fd: &ParamSet, analytic: &ParamSet) -> f64 {
    let mut scale = 0.0f64;
    for i in 0..analytic.num_layers() {
        for g in analytic.values(i) {
            scale = scale.max(g.abs());
        }
    }
    let mut worst = 0.0f64;
    for i in 0..analytic.num_layers() {
        for (f, a) in fd.values(i).iter().zip(analytic.values(i)) {
            worst = worst.max((f - a).abs() / scale);
        }
    }
    worst
}
