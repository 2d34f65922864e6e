//! A/B comparison of finished arms: iterations-to-threshold medians and
//! the forward-pass accounting behind the convergence-speed claims.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One finished (method, seed) arm as persisted in `summary.json`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArmSummary {
    pub method: String,
    pub seed: u64,
    pub csv: String,
    pub checkpoint: String,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub final_accuracy: Option<f64>,
    /// First recorded iteration whose clean loss reached the threshold.
    pub iterations_to_threshold: Option<usize>,
    pub forward_passes: u64,
    pub stability_violations: usize,
    pub projection_gap_mismatches: usize,
    pub min_stability_slack: f64,
    pub projection: Option<ProjectionSummary>,
    pub aborted: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectionSummary {
    pub cycles: usize,
    pub min_magnitude: f64,
    pub max_magnitude: f64,
    pub mean_magnitude: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub task: String,
    pub threshold_fraction: f64,
    pub arms: Vec<ArmSummary>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodComparison {
    pub method: String,
    pub arms: usize,
    /// Arms that never reached the threshold (excluded from the median).
    pub dnf: usize,
    pub per_seed_iterations: BTreeMap<u64, Option<usize>>,
    pub median_iterations_to_threshold: Option<f64>,
    pub median_final_loss: f64,
    pub total_forward_passes: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub task: String,
    pub threshold_fraction: f64,
    pub methods: Vec<MethodComparison>,
    /// median iterations(dizo) / median iterations(zo_sgd), when both ran.
    pub iteration_ratio_dizo_over_zo_sgd: Option<f64>,
    pub warnings: Vec<String>,
}

fn median_f64(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Merges summaries (which must agree on task and threshold) and compares
/// methods by median iterations-to-threshold.
pub fn compare_arms(summaries: &[ExperimentSummary]) -> Result<ComparisonReport> {
    if summaries.is_empty() {
        return Err(Error::config("no summaries to compare"));
    }
    let task = summaries[0].task.clone();
    let threshold = summaries[0].threshold_fraction;
    for s in summaries {
        if s.task != task {
            return Err(Error::config(format!(
                "summaries mix tasks `{task}` and `{}`",
                s.task
            )));
        }
        if s.threshold_fraction != threshold {
            return Err(Error::config("summaries disagree on the loss threshold"));
        }
    }
    let arms: Vec<&ArmSummary> = summaries.iter().flat_map(|s| s.arms.iter()).collect();
    if arms.len() < 2 {
        return Err(Error::config("need at least two arms to compare"));
    }

    let mut warnings = Vec::new();
    let mut by_method: BTreeMap<String, Vec<&ArmSummary>> = BTreeMap::new();
    for arm in &arms {
        by_method.entry(arm.method.clone()).or_default().push(arm);
    }

    let mut methods = Vec::new();
    for (method, arms) in &by_method {
        let mut iterations = Vec::new();
        let mut per_seed = BTreeMap::new();
        let mut finals = Vec::new();
        let mut dnf = 0;
        let mut passes = 0u64;
        for arm in arms {
            per_seed.insert(arm.seed, arm.iterations_to_threshold);
            match arm.iterations_to_threshold {
                Some(it) => iterations.push(it as f64),
                None => {
                    dnf += 1;
                    warnings.push(format!(
                        "{method} seed {} never reached the threshold (DNF)",
                        arm.seed
                    ));
                }
            }
            if let Some(reason) = &arm.aborted {
                warnings.push(format!("{method} seed {} aborted: {reason}", arm.seed));
            }
            finals.push(arm.final_loss);
            passes += arm.forward_passes;
        }
        methods.push(MethodComparison {
            method: method.clone(),
            arms: arms.len(),
            dnf,
            per_seed_iterations: per_seed,
            median_iterations_to_threshold: median_f64(&mut iterations),
            median_final_loss: median_f64(&mut finals).unwrap(),
            total_forward_passes: passes,
        });
    }

    let median_of = |name: &str| -> Option<f64> {
        methods
            .iter()
            .find(|m| m.method == name)
            .and_then(|m| m.median_iterations_to_threshold)
    };
    let ratio = match (median_of("dizo"), median_of("zo_sgd")) {
        (Some(d), Some(z)) if z > 0.0 => Some(d / z),
        _ => None,
    };

    Ok(ComparisonReport {
        task,
        threshold_fraction: threshold,
        methods,
        iteration_ratio_dizo_over_zo_sgd: ratio,
        warnings,
    })
}

/// Training forward passes a run will spend: 2q per step plus 2·inner per
/// projection cycle.
pub fn expected_forward_passes(steps: usize, q: usize, kappa: Option<usize>, inner_iters: usize) -> u64 {
    let base = 2 * q as u64 * steps as u64;
    match kappa {
        Some(k) if k > 0 => base + 2 * inner_iters as u64 * (steps / k) as u64,
        _ => base,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arm(method: &str, seed: u64, iters: Option<usize>, final_loss: f64) -> ArmSummary {
        ArmSummary {
            method: method.into(),
            seed,
            csv: format!("{method}_seed{seed}.csv"),
            checkpoint: format!("{method}_seed{seed}.ckpt"),
            initial_loss: 10.0,
            final_loss,
            final_accuracy: None,
            iterations_to_threshold: iters,
            forward_passes: 2000,
            stability_violations: 0,
            projection_gap_mismatches: 0,
            min_stability_slack: 0.0,
            projection: None,
            aborted: None,
        }
    }

    fn summary(arms: Vec<ArmSummary>) -> ExperimentSummary {
        ExperimentSummary {
            task: "quadratic_hetero".into(),
            threshold_fraction: 0.1,
            arms,
        }
    }

    #[test]
    fn identical_arms_have_ratio_one() {
        let s = summary(vec![
            arm("zo_sgd", 1, Some(400), 0.5),
            arm("zo_sgd", 2, Some(600), 0.5),
            arm("dizo", 1, Some(400), 0.5),
            arm("dizo", 2, Some(600), 0.5),
        ]);
        let report = compare_arms(&[s]).unwrap();
        assert_eq!(report.iteration_ratio_dizo_over_zo_sgd, Some(1.0));
    }

    #[test]
    fn dnf_arms_are_excluded_with_warning() {
        let s = summary(vec![
            arm("zo_sgd", 1, Some(400), 0.5),
            arm("zo_sgd", 2, None, 3.0),
            arm("dizo", 1, Some(200), 0.4),
            arm("dizo", 2, Some(300), 0.4),
        ]);
        let report = compare_arms(&[s]).unwrap();
        let zo = report.methods.iter().find(|m| m.method == "zo_sgd").unwrap();
        assert_eq!(zo.dnf, 1);
        assert_eq!(zo.median_iterations_to_threshold, Some(400.0));
        assert_eq!(report.iteration_ratio_dizo_over_zo_sgd, Some(250.0 / 400.0));
        assert!(report.warnings.iter().any(|w| w.contains("DNF")));
    }

    #[test]
    fn mixed_tasks_are_rejected() {
        let a = summary(vec![arm("zo_sgd", 1, Some(1), 0.1)]);
        let mut b = summary(vec![arm("dizo", 1, Some(1), 0.1)]);
        b.task = "blobs_mlp".into();
        assert!(compare_arms(&[a, b]).is_err());
    }

    #[test]
    fn forward_pass_formula() {
        // T steps at q = 1 with κ = 100 and 10 inner rounds.
        assert_eq!(expected_forward_passes(1000, 1, Some(100), 10), 2 * 1000 + 20 * 10);
        assert_eq!(expected_forward_passes(950, 1, Some(100), 10), 2 * 950 + 20 * 9);
        assert_eq!(expected_forward_passes(1000, 2, None, 0), 4000);
    }
}
