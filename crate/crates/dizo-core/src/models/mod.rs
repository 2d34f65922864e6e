//! Forward-only loss oracles and synthetic data.
//!
//! Everything here is evaluated by forward passes alone; the training side
//! never sees a derivative. Oracles are immutable after construction and
//! deterministic in `(params, batch)`, which the two-point estimator relies
//! on (a stochastic forward pass would corrupt the probe differences).

mod attention;
mod datasets;
mod logistic;
mod mlp;
mod quadratic;

pub use attention::{make_attention_model, AttentionTask};
pub use datasets::{
    batch_tags, gaussian_blobs, load_csv_batches, make_dataset, token_sequences, two_spirals,
    DatasetKind,
};
pub use logistic::LogisticTask;
pub use mlp::MlpTask;
pub use quadratic::QuadraticTask;

use crate::error::{Error, Result};
use crate::param::ParamSet;

/// Mini-batch of inputs with targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    batch_size: usize,
    feature_dim: usize,
    targets: Targets,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    /// Class indices for classification.
    Classes(Vec<usize>),
    /// Real targets for regression.
    Values(Vec<f64>),
    /// No targets (synthetic objectives that ignore data).
    None,
}

impl Batch {
    pub fn new(
        inputs: Vec<f64>,
        batch_size: usize,
        feature_dim: usize,
        targets: Targets,
    ) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch_size must be ≥ 1"));
        }
        if inputs.len() != batch_size * feature_dim {
            return Err(Error::structure(format!(
                "batch inputs: {} values for {}×{}",
                inputs.len(),
                batch_size,
                feature_dim
            )));
        }
        match &targets {
            Targets::Classes(c) if c.len() != batch_size => {
                return Err(Error::structure("one class index per example required"))
            }
            Targets::Values(v) if v.len() != batch_size => {
                return Err(Error::structure("one target value per example required"))
            }
            _ => {}
        }
        Ok(Self {
            inputs,
            batch_size,
            feature_dim,
            targets,
        })
    }

    /// Placeholder batch for objectives that ignore data.
    pub fn empty() -> Self {
        Self {
            inputs: Vec::new(),
            batch_size: 1,
            feature_dim: 0,
            targets: Targets::None,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    /// Features of example `i`.
    pub fn example(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn class(&self, i: usize) -> Option<usize> {
        match &self.targets {
            Targets::Classes(c) => Some(c[i]),
            _ => None,
        }
    }
}

/// A forward-pass loss oracle over a fixed parameter layout.
pub trait LossOracle: Send + Sync {
    /// Initial parameters; also defines the layer layout every call expects.
    fn param_template(&self) -> ParamSet;

    /// Loss of `params` on `batch`. Deterministic, never mutates params.
    fn evaluate(&self, params: &ParamSet, batch: &Batch) -> Result<f64>;

    /// Exact gradient where the model supplies one (`Ok(None)` otherwise).
    /// Test and FO-reference machinery only; training never calls this.
    fn analytic_gradient(&self, _params: &ParamSet, _batch: &Batch) -> Result<Option<ParamSet>> {
        Ok(None)
    }

    /// Classification accuracy on `batch`, if the task defines one.
    fn accuracy(&self, _params: &ParamSet, _batch: &Batch) -> Result<Option<f64>> {
        Ok(None)
    }
}

/// Wraps an oracle, multiplying its loss (and gradient) by a constant.
pub struct ScaledLoss<O> {
    inner: O,
    factor: f64,
}

impl<O: LossOracle> ScaledLoss<O> {
    pub fn new(inner: O, factor: f64) -> Self {
        Self { inner, factor }
    }
}

impl<O: LossOracle> LossOracle for ScaledLoss<O> {
    fn param_template(&self) -> ParamSet {
        self.inner.param_template()
    }

    fn evaluate(&self, params: &ParamSet, batch: &Batch) -> Result<f64> {
        Ok(self.factor * self.inner.evaluate(params, batch)?)
    }

    fn analytic_gradient(&self, params: &ParamSet, batch: &Batch) -> Result<Option<ParamSet>> {
        match self.inner.analytic_gradient(params, batch)? {
            None => Ok(None),
            Some(mut grad) => {
                let zero = ParamSet::zeros(grad.specs().cloned().collect())?;
                // grad := factor * grad, via axpy on a zero base.
                let mut scaled = zero;
                scaled.axpy_toward(&grad, self.factor)?;
                grad = scaled;
                Ok(Some(grad))
            }
        }
    }

    fn accuracy(&self, params: &ParamSet, batch: &Batch) -> Result<Option<f64>> {
        self.inner.accuracy(params, batch)
    }
}

/// log(Σ exp(x_i)), stabilized.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Softmax probabilities, stabilized, written into `out`.
pub(crate) fn softmax_into(xs: &[f64], out: &mut [f64]) {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, x) in out.iter_mut().zip(xs) {
        *o = (x - m).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Mean cross-entropy and (optionally) mean accuracy from per-example
/// logits produced by `forward`.
pub(crate) fn cross_entropy_from_logits(
    batch: &Batch,
    num_classes: usize,
    mut forward: impl FnMut(usize, &mut [f64]) -> Result<()>,
) -> Result<(f64, f64)> {
    let classes = match batch.targets() {
        Targets::Classes(c) => c,
        _ => return Err(Error::structure("classification batch requires class targets")),
    };
    let mut logits = vec![0.0; num_classes];
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (i, &y) in classes.iter().enumerate() {
        if y >= num_classes {
            return Err(Error::structure(format!(
                "class index {y} out of range for {num_classes} classes"
            )));
        }
        forward(i, &mut logits)?;
        let lse = log_sum_exp(&logits);
        loss += lse - logits[y];
        let argmax = logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap();
        if argmax == y {
            correct += 1;
        }
    }
    let n = batch.batch_size() as f64;
    let mean_loss = loss / n;
    if !mean_loss.is_finite() {
        return Err(Error::numeric("cross-entropy overflowed"));
    }
    Ok((mean_loss, correct as f64 / n))
}
