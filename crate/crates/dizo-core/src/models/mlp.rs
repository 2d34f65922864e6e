//! Two-layer tanh MLP classifier.
//!
//! tanh keeps the loss smooth, which the two-point estimator's accuracy
//! and the finite-difference cross-checks both assume.

use crate::error::{Error, Result};
use crate::models::{cross_entropy_from_logits, Batch, LossOracle};
use crate::param::{LayerRole, LayerSpec, ParamSet};
use crate::rng::{mix_seed, NormalStream};

pub struct MlpTask {
    feature_dim: usize,
    hidden_dim: usize,
    num_classes: usize,
    seed: u64,
}

impl MlpTask {
    pub fn new(feature_dim: usize, hidden_dim: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if feature_dim == 0 || hidden_dim == 0 || num_classes < 2 {
            return Err(Error::config(
                "mlp task needs feature_dim ≥ 1, hidden_dim ≥ 1, num_classes ≥ 2",
            ));
        }
        Ok(Self {
            feature_dim,
            hidden_dim,
            num_classes,
            seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::new("fc1.w", LayerRole::Dense, self.hidden_dim * self.feature_dim).unwrap(),
            LayerSpec::new("fc1.b", LayerRole::Bias, self.hidden_dim).unwrap(),
            LayerSpec::new("fc2.w", LayerRole::Dense, self.num_classes * self.hidden_dim).unwrap(),
            LayerSpec::new("fc2.b", LayerRole::Bias, self.num_classes).unwrap(),
        ]
    }

    fn check_shape(&self, params: &ParamSet) -> Result<()> {
        let want = self.specs();
        if params.num_layers() != want.len() || params.specs().zip(&want).any(|(a, b)| a != b) {
            return Err(Error::structure("params do not match mlp layout"));
        }
        Ok(())
    }

    fn logits_for(&self, params: &ParamSet, x: &[f64], hidden: &mut [f64], out: &mut [f64]) {
        let w1 = params.values(0);
        let b1 = params.values(1);
        let w2 = params.values(2);
        let b2 = params.values(3);
        for h in 0..self.hidden_dim {
            let row = &w1[h * self.feature_dim..(h + 1) * self.feature_dim];
            let pre = b1[h] + row.iter().zip(x).map(|(wi, xi)| wi * xi).sum::<f64>();
            hidden[h] = pre.tanh();
        }
        for k in 0..self.num_classes {
            let row = &w2[k * self.hidden_dim..(k + 1) * self.hidden_dim];
            out[k] = b2[k] + row.iter().zip(hidden.iter()).map(|(wi, hi)| wi * hi).sum::<f64>();
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

impl LossOracle for MlpTask {
    fn param_template(&self) -> ParamSet {
        let mut stream = NormalStream::new(mix_seed(self.seed, 0x6d6c70));
        let mut layer = |fan_in: usize, n: usize| -> Vec<f64> {
            let std = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| std * stream.next_normal()).collect()
        };
        let w1 = layer(self.feature_dim, self.hidden_dim * self.feature_dim);
        let w2 = layer(self.hidden_dim, self.num_classes * self.hidden_dim);
        let specs = self.specs();
        ParamSet::new(vec![
            (specs[0].clone(), w1),
            (specs[1].clone(), vec![0.0; self.hidden_dim]),
            (specs[2].clone(), w2),
            (specs[3].clone(), vec![0.0; self.num_classes]),
        ])
        .expect("layout is valid")
    }

    fn evaluate(&self, params: &ParamSet, batch: &Batch) -> Result<f64> {
        self.check_shape(params)?;
        self.check_batch(batch)?;
        let mut hidden = vec![0.0; self.hidden_dim];
        let (loss, _) = cross_entropy_from_logits(batch, self.num_classes, |i, logits| {
            self.logits_for(params, batch.example(i), &mut hidden, logits);
            Ok(())
        })?;
        Ok(loss)
    }

    fn accuracy(&self, params: &ParamSet, batch: &Batch) -> Result<Option<f64>> {
        self.check_shape(params)?;
        self.check_batch(batch)?;
        let mut hidden = vec![0.0; self.hidden_dim];
        let (_, acc) = cross_entropy_from_logits(batch, self.num_classes, |i, logits| {
            self.logits_for(params, batch.example(i), &mut hidden, logits);
            Ok(())
        })?;
        Ok(Some(acc))
    }
}
