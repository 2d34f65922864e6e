//! Multinomial logistic regression with an exact gradient.

use crate::error::{Error, Result};
use crate::models::{cross_entropy_from_logits, softmax_into, Batch, LossOracle, Targets};
use crate::param::{LayerRole, LayerSpec, ParamSet};
use crate::rng::{mix_seed, NormalStream};

pub struct LogisticTask {
    feature_dim: usize,
    num_classes: usize,
    seed: u64,
}

impl LogisticTask {
    pub fn new(feature_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if feature_dim == 0 || num_classes < 2 {
            return Err(Error::config(
                "logistic task needs feature_dim ≥ 1 and num_classes ≥ 2",
            ));
        }
        Ok(Self {
            feature_dim,
            num_classes,
            seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::new("linear.w", LayerRole::Dense, self.num_classes * self.feature_dim)
                .unwrap(),
            LayerSpec::new("linear.b", LayerRole::Bias, self.num_classes).unwrap(),
        ]
    }

    fn check_shape(&self, params: &ParamSet) -> Result<()> {
        let want = self.specs();
        if params.num_layers() != want.len() || params.specs().zip(&want).any(|(a, b)| a != b) {
            return Err(Error::structure("params do not match logistic layout"));
        }
        Ok(())
    }

    fn logits_for(&self, params: &ParamSet, x: &[f64], out: &mut [f64]) {
        let w = params.values(0);
        let b = params.values(1);
        for k in 0..self.num_classes {
            let row = &w[k * self.feature_dim..(k + 1) * self.feature_dim];
            out[k] = b[k] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
        }
    }

    fn check_batch(&self, batch: &Batch) -> Result<()> {
        if batch.feature_dim() != self.feature_dim {
            return Err(Error::structure(format!(
                "batch feature_dim {} but model expects {}",
                batch.feature_dim(),
                self.feature_dim
            )));
        }
        Ok(())
    }
}

impl LossOracle for LogisticTask {
    fn param_template(&self) -> ParamSet {
        // Weights ~ N(0, 1/fan_in), biases zero.
        let mut stream = NormalStream::new(mix_seed(self.seed, 0x6c6f67));
        let std = 1.0 / (self.feature_dim as f64).sqrt();
        let w: Vec<f64> = (0..self.num_classes * self.feature_dim)
            .map(|_| std * stream.next_normal())
            .collect();
        let b = vec![0.0; self.num_classes];
        ParamSet::new(vec![(self.specs()[0].clone(), w), (self.specs()[1].clone(), b)])
            .expect("layout is valid")
    }

    fn evaluate(&self, params: &ParamSet, batch: &Batch) -> Result<f64> {
        self.check_shape(params)?;
        self.check_batch(batch)?;
        let (loss, _) = cross_entropy_from_logits(batch, self.num_classes, |i, logits| {
            self.logits_for(params, batch.example(i), logits);
            Ok(())
        })?;
        Ok(loss)
    }

    fn analytic_gradient(&self, params: &ParamSet, batch: &Batch) -> Result<Option<ParamSet>> {
        self.check_shape(params)?;
        self.check_batch(batch)?;
        let classes = match batch.targets() {
            Targets::Classes(c) => c,
            _ => return Err(Error::structure("logistic gradient requires class targets")),
        };
        let mut grad = ParamSet::zeros(self.specs())?;
        let mut logits = vec![0.0; self.num_classes];
        let mut probs = vec![0.0; self.num_classes];
        let n = batch.batch_size() as f64;
        for (i, &y) in classes.iter().enumerate() {
            let x = batch.example(i);
            self.logits_for(params, x, &mut logits);
            softmax_into(&logits, &mut probs);
            for (k, &p) in probs.iter().enumerate() {
                let delta = (p - if k == y { 1.0 } else { 0.0 }) / n;
                let row =
                    &mut grad.values_mut(0)[k * self.feature_dim..(k + 1) * self.feature_dim];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += delta * xi;
                }
                grad.values_mut(1)[k] += delta;
            }
        }
        Ok(Some(grad))
    }

    fn accuracy(&self, params: &ParamSet, batch: &Batch) -> Result<Option<f64>> {
        self.check_shape(params)?;
        self.check_batch(batch)?;
        let (_, acc) = cross_entropy_from_logits(batch, self.num_classes, |i, logits| {
            self.logits_for(params, batch.example(i), logits);
            Ok(())
        })?;
        Ok(Some(acc))
    }
}
