//! CLI experiment harness: config parsing, arm execution, metrics
//! persistence, and A/B comparison.
//!
//! One experiment = one task, a set of methods, and a set of seeds. Every
//! (method, seed) arm runs independently in a worker pool and writes one
//! record CSV plus a final-params checkpoint; the experiment writes a
//! summary and a manifest embedding the resolved config. Reruns of the
//! same config produce byte-identical files.

mod compare;
mod config;
mod records_io;

pub use compare::{
    compare_arms, expected_forward_passes, ArmSummary, ComparisonReport, ExperimentSummary,
    MethodComparison, ProjectionSummary,
};
pub use config::{
    AnchorKind, AnchorSettings, DataSettings, ExperimentConfig, Method, ProjSettings,
    RateSettings, TaskKind, TaskShape, TrainSettings, VarsymSettings,
};
pub use records_io::{read_records_csv, records_to_csv, write_records_csv};

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::analyzer::{rate_fit, variance_symmetry_test, zo_min_grad_norm_sq, LayerMoment, RateFit};
use crate::anchor::AnchorStore;
use crate::checkpoint::{atomic_write_bytes, load_params, save_params};
use crate::dizo::{build_anchor, dizo_run, ProjectionState};
use crate::error::{Error, Result};
use crate::models::{
    gaussian_blobs, token_sequences, AttentionTask, Batch, LogisticTask, LossOracle, MlpTask,
    QuadraticTask,
};
use crate::optimizer::{zo_sgd_run, RunOutput, RunRecord, TrainConfig};
use crate::param::ParamSet;
use crate::rng::RNG_ALGO_ID;

/// Environment variable limiting the arm worker pool.
pub const WORKERS_ENV: &str = "DIZO_WORKERS";

/// Builds the configured loss oracle.
pub fn build_oracle(config: &ExperimentConfig) -> Result<Box<dyn LossOracle>> {
    let shape = &config.shape;
    Ok(match config.task {
        TaskKind::QuadraticHetero => {
            Box::new(QuadraticTask::heterogeneous_benchmark(shape.dim, shape.seed)?)
        }
        TaskKind::BlobsLogreg => {
            Box::new(LogisticTask::new(shape.features, shape.classes, shape.seed)?)
        }
        TaskKind::BlobsMlp => Box::new(MlpTask::new(
            shape.features,
            shape.hidden,
            shape.classes,
            shape.seed,
        )?),
        TaskKind::TokensAttention => Box::new(AttentionTask::new(
            shape.d_model,
            shape.classes,
            shape.vocab,
            shape.seed,
        )?),
    })
}

/// Builds the configured dataset (deterministic in `data.seed`).
pub fn build_data(config: &ExperimentConfig) -> Vec<Batch> {
    let shape = &config.shape;
    let data = &config.data;
    match config.task {
        TaskKind::QuadraticHetero => vec![Batch::empty()],
        TaskKind::BlobsLogreg | TaskKind::BlobsMlp => gaussian_blobs(
            data.n_batches,
            config.train.batch_size,
            shape.features,
            shape.classes,
            shape.separation,
            data.seed,
        ),
        TaskKind::TokensAttention => token_sequences(
            data.n_batches,
            config.train.batch_size,
            shape.seq_len,
            shape.vocab,
            shape.classes,
            data.seed,
        ),
    }
}

/// Starting parameters: the model template, or a warm-start checkpoint.
pub fn initial_params(config: &ExperimentConfig, oracle: &dyn LossOracle) -> Result<ParamSet> {
    let template = oracle.param_template();
    match &config.anchor.kind {
        AnchorKind::Init => Ok(template),
        AnchorKind::Warmstart(path) => {
            let loaded = load_params(path)?;
            template.check_same_shape(&loaded).map_err(|e| {
                Error::config(format!(
                    "warmstart checkpoint {} does not match the task: {e}",
                    path.display()
                ))
            })?;
            Ok(loaded)
        }
    }
}

fn train_config(config: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        steps: config.train.steps,
        lr: config.train.lr,
        lr_schedule: config.train.lr_schedule,
        eps: config.train.eps,
        q: config.train.q,
        batch_size: config.train.batch_size,
        seed,
        eval_every: config.train.eval_every,
    }
}

fn mean_accuracy(
    oracle: &dyn LossOracle,
    params: &ParamSet,
    data: &[Batch],
) -> Result<Option<f64>> {
    let mut sum = 0.0;
    for batch in data {
        match oracle.accuracy(params, batch)? {
            Some(acc) => sum += acc,
            None => return Ok(None),
        }
    }
    Ok(Some(sum / data.len() as f64))
}

fn projection_summary(records: &[RunRecord]) -> Option<ProjectionSummary> {
    let mut mags = Vec::new();
    let mut cycles = 0;
    for rec in records {
        if let Some(m) = &rec.projection_mag {
            cycles += 1;
            mags.extend(m.values().cloned());
        }
    }
    if mags.is_empty() {
        return None;
    }
    let min = mags.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = mags.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = mags.iter().sum::<f64>() / mags.len() as f64;
    Some(ProjectionSummary {
        cycles,
        min_magnitude: min,
        max_magnitude: max,
        mean_magnitude: mean,
    })
}

fn iterations_to_threshold(records: &[RunRecord], fraction: f64) -> Option<usize> {
    let initial = records.first()?.loss_clean;
    let target = fraction * initial;
    records
        .iter()
        .find(|r| r.loss_clean <= target)
        .map(|r| r.iteration)
}

struct ArmResult {
    summary: ArmSummary,
}

fn run_arm(
    config: &ExperimentConfig,
    oracle: &dyn LossOracle,
    init: &ParamSet,
    data: &[Batch],
    anchor: Option<&AnchorStore>,
    method: Method,
    seed: u64,
) -> Result<ArmResult> {
    let tc = train_config(config, seed);
    let output: RunOutput = match method {
        Method::ZoSgd => zo_sgd_run(oracle, init, data, &tc, &mut |_| {})?,
        Method::Dizo => {
            let proj = config.proj.as_ref().expect("validated: dizo requires proj");
            let anchor = anchor.expect("anchor built for dizo");
            let state = ProjectionState::new(
                anchor,
                proj.tau,
                proj.kappa,
                proj.eps,
                proj.inner_iters,
                proj.inner_lr,
            )?;
            dizo_run(oracle, init, data, &tc, state, anchor, &mut |_| {})?
        }
        Method::FoRef => crate::analyzer::fo_reference_run(
            oracle,
            init,
            data,
            config.train.lr,
            config.train.steps,
            config.train.eval_every,
            &mut |_| {},
        )?,
    };

    let layer_order: Vec<String> = init.specs().map(|s| s.name().to_string()).collect();
    let base = format!("{}_seed{}", method.as_str(), seed);
    let csv_name = format!("{base}.csv");
    let ckpt_name = format!("{base}.ckpt");
    write_records_csv(
        &config.output_dir.join(&csv_name),
        &output.records,
        &layer_order,
        method == Method::Dizo,
    )?;
    save_params(&config.output_dir.join(&ckpt_name), &output.final_params)?;

    let records = &output.records;
    let min_slack = records
        .iter()
        .filter(|r| r.iteration > 0)
        .map(|r| r.stability_slack)
        .fold(f64::INFINITY, f64::min);
    let summary = ArmSummary {
        method: method.as_str().to_string(),
        seed,
        csv: csv_name,
        checkpoint: ckpt_name,
        initial_loss: records.first().map(|r| r.loss_clean).unwrap_or(f64::NAN),
        final_loss: records.last().map(|r| r.loss_clean).unwrap_or(f64::NAN),
        final_accuracy: mean_accuracy(oracle, &output.final_params, data)?,
        iterations_to_threshold: iterations_to_threshold(records, config.threshold),
        forward_passes: output.forward_passes,
        stability_violations: output.stability_violations,
        projection_gap_mismatches: output.projection_gap_mismatches,
        min_stability_slack: if min_slack.is_finite() { min_slack } else { 0.0 },
        projection: projection_summary(records),
        aborted: output.aborted,
    };
    Ok(ArmResult { summary })
}

#[derive(Serialize)]
struct Manifest<'a> {
    code_version: &'static str,
    rng_algo: &'static str,
    config: &'a ExperimentConfig,
}

fn worker_count(arms: usize) -> usize {
    let available = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let requested = std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|n| *n >= 1)
        .unwrap_or(available);
    requested.min(arms.max(1))
}

/// Runs every (method, seed) arm, writes one CSV and checkpoint per arm
/// plus `summary.json` and `manifest.json`, and returns the summary.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentSummary> {
    let oracle = build_oracle(config)?;
    let data = build_data(config);
    let init = initial_params(config, oracle.as_ref())?;
    let anchor = if config.methods.contains(&Method::Dizo) {
        Some(build_anchor(
            &init,
            &config.anchor_roles(),
            config.anchor.precision,
        )?)
    } else {
        None
    };

    std::fs::create_dir_all(&config.output_dir)?;

    let arms: Vec<(Method, u64)> = config
        .methods
        .iter()
        .flat_map(|m| config.seeds.iter().map(move |s| (*m, *s)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count(arms.len()))
        .build()
        .map_err(|e| Error::config(format!("worker pool: {e}")))?;
    let results: Vec<Result<ArmResult>> = pool.install(|| {
        arms.par_iter()
            .map(|(method, seed)| {
                run_arm(config, oracle.as_ref(), &init, &data, anchor.as_ref(), *method, *seed)
            })
            .collect()
    });

    let mut summaries = Vec::with_capacity(results.len());
    for result in results {
        summaries.push(result?.summary);
    }

    let summary = ExperimentSummary {
        task: config.task.as_str().to_string(),
        threshold_fraction: config.threshold,
        arms: summaries,
    };
    let summary_bytes =
        serde_json::to_vec_pretty(&summary).map_err(|e| Error::format(e.to_string()))?;
    atomic_write_bytes(&config.output_dir.join("summary.json"), &summary_bytes)?;

    let manifest = Manifest {
        code_version: env!("CARGO_PKG_VERSION"),
        rng_algo: RNG_ALGO_ID,
        config,
    };
    let manifest_bytes =
        serde_json::to_vec_pretty(&manifest).map_err(|e| Error::format(e.to_string()))?;
    atomic_write_bytes(&config.output_dir.join("manifest.json"), &manifest_bytes)?;

    Ok(summary)
}

pub fn load_summary(path: &Path) -> Result<ExperimentSummary> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// Variance-symmetry diagnostic at the task's initial parameters.
pub fn run_varsym(config: &ExperimentConfig) -> Result<BTreeMap<String, LayerMoment>> {
    let oracle = build_oracle(config)?;
    let data = build_data(config);
    let mut params = initial_params(config, oracle.as_ref())?;
    variance_symmetry_test(
        oracle.as_ref(),
        &mut params,
        &data[0],
        config.varsym.eps,
        config.varsym.samples,
        config.varsym.seed,
    )
}

/// Rate sweep: for each budget T the run uses η = lr_scale/√T, and the
/// minimum full-objective gradient norm over checkpoints is log-log
/// fitted against T. On the quadratic task the centers are jittered per
/// batch so the run has the gradient-noise floor the 1/√T rate assumes.
pub fn run_rate(config: &ExperimentConfig) -> Result<RateFit> {
    let (oracle, data): (Box<dyn LossOracle>, Vec<Batch>) = match config.task {
        TaskKind::QuadraticHetero => {
            let task = QuadraticTask::heterogeneous_benchmark(config.shape.dim, config.shape.seed)?
                .with_jitter(config.rate.jitter);
            (Box::new(task), crate::models::batch_tags(config.rate.batches))
        }
        _ => (build_oracle(config)?, build_data(config)),
    };
    let init = initial_params(config, oracle.as_ref())?;
    let base = train_config(config, 0);
    let lr_scale = config.rate.lr_scale;
    let mut probe = |budget: usize, seed: u64| -> Result<f64> {
        let tc = TrainConfig {
            steps: budget,
            lr: lr_scale / (budget as f64).sqrt(),
            seed,
            ..base.clone()
        };
        let checkpoint_every = (budget / 16).max(1);
        zo_min_grad_norm_sq(oracle.as_ref(), &init, &data, &tc, checkpoint_every)
    };
    rate_fit(&mut probe, &config.rate.budgets, &config.rate.seeds)
}
