//! Single-block softmax self-attention classifier.
//!
//! Token sequences are embedded with a fixed (non-trainable) table plus
//! sinusoidal positions, passed through one attention block with distinct
//! Q/K/V/O matrices, mean-pooled, and classified by a linear head. The
//! point of the model is to give the projection machinery genuinely
//! role-tagged attention layers at desk scale, not to be a language model.

use crate::error::{Error, Result};
use crate::models::{cross_entropy_from_logits, softmax_into, Batch, LossOracle};
use crate::param::{LayerRole, LayerSpec, ParamSet};
use crate::rng::{mix_seed, NormalStream};

pub const DEFAULT_VOCAB: usize = 16;

pub struct AttentionTask {
    d_model: usize,
    num_classes: usize,
    vocab: usize,
    seed: u64,
    /// Fixed embedding table, vocab × d_model.
    embed: Vec<f64>,
}

/// Convenience constructor with the default vocabulary size.
pub fn make_attention_model(d_model: usize, num_classes: usize, seed: u64) -> Result<AttentionTask> {
    AttentionTask::new(d_model, num_classes, DEFAULT_VOCAB, seed)
}

impl AttentionTask {
    pub fn new(d_model: usize, num_classes: usize, vocab: usize, seed: u64) -> Result<Self> {
        if d_model < 2 {
            return Err(Error::config("d_model must be ≥ 2"));
        }
        if num_classes < 2 || vocab < 2 {
            return Err(Error::config("num_classes and vocab must be ≥ 2"));
        }
        let mut stream = NormalStream::new(mix_seed(seed, 0x656d62));
        let embed = (0..vocab * d_model).map(|_| stream.next_normal()).collect();
        Ok(Self {
            d_model,
            num_classes,
            vocab,
            seed,
            embed,
        })
    }

    pub fn d_model(&self) -> usize {
        self.d_model
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn specs(&self) -> Vec<LayerSpec> {
        let d = self.d_model;
        vec![
            LayerSpec::new("attn.q", LayerRole::AttnQ, d * d).unwrap(),
            LayerSpec::new("attn.k", LayerRole::AttnK, d * d).unwrap(),
            LayerSpec::new("attn.v", LayerRole::AttnV, d * d).unwrap(),
            LayerSpec::new("attn.o", LayerRole::AttnO, d * d).unwrap(),
            LayerSpec::new("head.w", LayerRole::Dense, self.num_classes * d).unwrap(),
            LayerSpec::new("head.b", LayerRole::Bias, self.num_classes).unwrap(),
        ]
    }

    fn check_shape(&self, params: &ParamSet) -> Result<()> {
        let want = self.specs();
        if params.num_layers() != want.len() || params.specs().zip(&want).any(|(a, b)| a != b) {
            return Err(Error::structure("params do not match attention layout"));
        }
        Ok(())
    }

    fn tokens_of(&self, batch: &Batch, i: usize) -> Result<Vec<usize>> {
        batch
            .example(i)
            .iter()
            .map(|&t| {
                let id = t as usize;
                if t.fract() != 0.0 || t < 0.0 || id >= self.vocab {
                    Err(Error::structure(format!(
                        "token {t} is not a valid id for vocab {}",
                        self.vocab
                    )))
                } else {
                    Ok(id)
                }
            })
            .collect()
    }

    /// Embedded input for one position: table row plus sinusoidal position.
    fn embed_token(&self, token: usize, pos: usize, out: &mut [f64]) {
        let d = self.d_model;
        let row = &self.embed[token * d..(token + 1) * d];
        for (j, o) in out.iter_mut().enumerate() {
            let angle = pos as f64 / 10_000f64.powf(2.0 * (j / 2) as f64 / d as f64);
            let pe = if j % 2 == 0 { angle.sin() } else { angle.cos() };
            *o = row[j] + pe;
        }
    }

    fn mat_vec(w: &[f64], x: &[f64], out: &mut [f64]) {
        let d_in = x.len();
        for (r, o) in out.iter_mut().enumerate() {
            *o = w[r * d_in..(r + 1) * d_in]
                .iter()
                .zip(x)
                .map(|(wi, xi)| wi * xi)
                .sum();
        }
    }

    /// Pooled block output for one example's tokens.
    fn pooled_output(&self, params: &ParamSet, tokens: &[usize], pooled: &mut [f64]) {
        let d = self.d_model;
        let t_len = tokens.len();
        let wq = params.values(0);
        let wk = params.values(1);
        let wv = params.values(2);
        let wo = params.values(3);

        let mut x = vec![0.0; t_len * d];
        let mut q = vec![0.0; t_len * d];
        let mut k = vec![0.0; t_len * d];
        let mut v = vec![0.0; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            self.embed_token(tok, t, &mut x[t * d..(t + 1) * d]);
        }
        for t in 0..t_len {
            let xt = &x[t * d..(t + 1) * d];
            Self::mat_vec(wq, xt, &mut q[t * d..(t + 1) * d]);
            Self::mat_vec(wk, xt, &mut k[t * d..(t + 1) * d]);
            Self::mat_vec(wv, xt, &mut v[t * d..(t + 1) * d]);
        }

        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let mut scores = vec![0.0; t_len];
        let mut probs = vec![0.0; t_len];
        let mut h = vec![0.0; d];
        let mut o = vec![0.0; d];
        pooled.fill(0.0);
        for t in 0..t_len {
            let qt = &q[t * d..(t + 1) * d];
            for s in 0..t_len {
                let ks = &k[s * d..(s + 1) * d];
                scores[s] = inv_sqrt_d * qt.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>();
            }
            softmax_into(&scores, &mut probs);
            h.fill(0.0);
            for s in 0..t_len {
                let vs = &v[s * d..(s + 1) * d];
                for (hj, vj) in h.iter_mut().zip(vs) {
                    *hj += probs[s] * vj;
                }
            }
            Self::mat_vec(wo, &h, &mut o);
            for (p, oj) in pooled.iter_mut().zip(&o) {
                *p += oj / t_len as f64;
            }
        }
    }

    /// Attention probability matrix (rows = query positions) for one
    /// example. Diagnostic surface for tests.
    pub fn attention_probs(&self, params: &ParamSet, batch: &Batch, i: usize) -> Result<Vec<Vec<f64>>> {
        self.check_shape(params)?;
        let tokens = self.tokens_of(batch, i)?;
        let d = self.d_model;
        let t_len = tokens.len();
        let wq = params.values(0);
        let wk = params.values(1);
        let mut x = vec![0.0; t_len * d];
        let mut q = vec![0.0; t_len * d];
        let mut k = vec![0.0; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            self.embed_token(tok, t, &mut x[t * d..(t + 1) * d]);
        }
        for t in 0..t_len {
            let xt = &x[t * d..(t + 1) * d];
            Self::mat_vec(wq, xt, &mut q[t * d..(t + 1) * d]);
            Self::mat_vec(wk, xt, &mut k[t * d..(t + 1) * d]);
        }
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let mut rows = Vec::with_capacity(t_len);
        let mut scores = vec![0.0; t_len];
        for t in 0..t_len {
            let qt = &q[t * d..(t + 1) * d];
            for s in 0..t_len {
                let ks = &k[s * d..(s + 1) * d];
                scores[s] = inv_sqrt_d * qt.iter().zip(ks).map(|(a, b)| a * b).sum::<f64>();
            }
            let mut probs = vec![0.0; t_len];
            softmax_into(&scores, &mut probs);
            rows.push(probs);
        }
        Ok(rows)
    }
}

impl LossOracle for AttentionTask {
    fn param_template(&self) -> ParamSet {
        let d = self.d_model;
        let mut stream = NormalStream::new(mix_seed(self.seed, 0x61746e));
        let std = 1.0 / (d as f64).sqrt();
        let mut mat = |n: usize| -> Vec<f64> { (0..n).map(|_| std * stream.next_normal()).collect() };
        let specs = self.specs();
        ParamSet::new(vec![
            (specs[0].clone(), mat(d * d)),
            (specs[1].clone(), mat(d * d)),
            (specs[2].clone(), mat(d * d)),
            (specs[3].clone(), mat(d * d)),
            (specs[4].clone(), mat(self.num_classes * d)),
            (specs[5].clone(), vec![0.0; self.num_classes]),
        ])
        .expect("layout is valid")
    }

    fn evaluate(&self, params: &ParamSet, batch: &Batch) -> Result<f64> {
        self.check_shape(params)?;
        let d = self.d_model;
        let wh = params.values(4);
        let bh = params.values(5);
        let mut pooled = vec![0.0; d];
        let (loss, _) = cross_entropy_from_logits(batch, self.num_classes, |i, logits| {
            let tokens = self.tokens_of(batch, i)?;
            self.pooled_output(params, &tokens, &mut pooled);
            for (c, l) in logits.iter_mut().enumerate() {
                *l = bh[c]
                    + wh[c * d..(c + 1) * d]
                        .iter()
                        .zip(&pooled)
                        .map(|(wi, pi)| wi * pi)
                        .sum::<f64>();
            }
            Ok(())
        })?;
        Ok(loss)
    }

    fn accuracy(&self, params: &ParamSet, batch: &Batch) -> Result<Option<f64>> {
        self.check_shape(params)?;
        let d = self.d_model;
        let wh = params.values(4);
        let bh = params.values(5);
        let mut pooled = vec![0.0; d];
        let (_, acc) = cross_entropy_from_logits(batch, self.num_classes, |i, logits| {
            let tokens = self.tokens_of(batch, i)?;
            self.pooled_output(params, &tokens, &mut pooled);
            for (c, l) in logits.iter_mut().enumerate() {
                *l = bh[c]
                    + wh[c * d..(c + 1) * d]
                        .iter()
                        .zip(&pooled)
                        .map(|(wi, pi)| wi * pi)
                        .sum::<f64>();
            }
            Ok(())
        })?;
        Ok(Some(acc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{token_sequences, Targets};

    #[test]
    fn template_has_expected_roles() {
        let task = make_attention_model(8, 3, 1).unwrap();
        let params = task.param_template();
        let mut counts = std::collections::BTreeMap::new();
        for spec in params.specs() {
            *counts.entry(spec.role()).or_insert(0usize) += 1;
        }
        assert_eq!(counts[&LayerRole::AttnQ], 1);
        assert_eq!(counts[&LayerRole::AttnK], 1);
        assert_eq!(counts[&LayerRole::AttnV], 1);
        assert_eq!(counts[&LayerRole::AttnO], 1);
        assert!(counts[&LayerRole::Dense] >= 1);
    }

    #[test]
    fn identical_seeds_give_identical_params() {
        let a = make_attention_model(8, 3, 42).unwrap().param_template();
        let b = make_attention_model(8, 3, 42).unwrap().param_template();
        for i in 0..a.num_layers() {
            assert_eq!(a.values(i), b.values(i));
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let task = make_attention_model(8, 3, 9).unwrap();
        let params = task.param_template();
        let batches = token_sequences(1, 4, 6, task.vocab(), 3, 99);
        for i in 0..4 {
            let rows = task.attention_probs(&params, &batches[0], i).unwrap();
            for row in rows {
                let sum: f64 = row.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-9, "row sum {sum}");
                assert!(row.iter().all(|p| *p >= 0.0));
            }
        }
    }

    #[test]
    fn rejects_out_of_vocab_tokens() {
        let task = make_attention_model(4, 2, 1).unwrap();
        let params = task.param_template();
        let bad = Batch::new(vec![99.0, 1.0], 1, 2, Targets::Classes(vec![0])).unwrap();
        assert!(task.evaluate(&params, &bad).is_err());
        let frac = Batch::new(vec![0.5, 1.0], 1, 2, Targets::Classes(vec![0])).unwrap();
        assert!(task.evaluate(&params, &frac).is_err());
    }

    #[test]
    fn evaluate_deterministic_on_tokens() {
        let task = make_attention_model(8, 3, 3).unwrap();
        let params = task.param_template();
        let batches = token_sequences(1, 8, 6, task.vocab(), 3, 5);
        let a = task.evaluate(&params, &batches[0]).unwrap();
        let b = task.evaluate(&params, &batches[0]).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert!(a.is_finite() && a > 0.0);
    }
}
