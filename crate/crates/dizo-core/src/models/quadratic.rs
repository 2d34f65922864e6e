//! Separable per-layer quadratic objective.
//!
//! Loss = Σ_ℓ ½ a^(ℓ) ‖θ^(ℓ) − c^(ℓ)‖². The minimum is 0 at θ = c, and the
//! gradient a^(ℓ)(θ^(ℓ) − c^(ℓ)) is exact, which makes this the reference
//! task for estimator and rate checks. With optimum radii ‖c^(ℓ)‖ spanning
//! an order of magnitude across layers, it is also the desk-scale stand-in
//! for models whose layers want very different deviations from their
//! initialization.

use crate::error::{Error, Result};
use crate::models::{Batch, LossOracle};
use crate::param::{LayerRole, LayerSpec, ParamSet};
use crate::rng::{mix_seed, NormalStream};

struct QuadLayer {
    spec: LayerSpec,
    curvature: f64,
    center: Vec<f64>,
}

pub struct QuadraticTask {
    layers: Vec<QuadLayer>,
    /// Std of the per-batch center offset; 0 keeps the loss batchless.
    jitter: f64,
}

impl QuadraticTask {
    /// Explicit per-layer curvatures and centers.
    pub fn new(layers: Vec<(LayerSpec, f64, Vec<f64>)>) -> Result<Self> {
        let mut built = Vec::with_capacity(layers.len());
        for (spec, curvature, center) in layers {
            if curvature <= 0.0 || !curvature.is_finite() {
                return Err(Error::config(format!(
                    "layer `{}`: curvature must be positive",
                    spec.name()
                )));
            }
            if center.len() != spec.dim() {
                return Err(Error::structure(format!(
                    "layer `{}`: center has {} values for dim {}",
                    spec.name(),
                    center.len(),
                    spec.dim()
                )));
            }
            built.push(QuadLayer {
                spec,
                curvature,
                center,
            });
        }
        if built.is_empty() {
            return Err(Error::config("quadratic task needs at least one layer"));
        }
        Ok(Self {
            layers: built,
            jitter: 0.0,
        })
    }

    /// Makes the loss a minibatch objective: each batch shifts every layer
    /// center by `jitter ·` a Gaussian offset derived from the batch
    /// contents. The expected loss over batches keeps its minimum near the
    /// base centers, but individual batches disagree, which gives ZO
    /// training the gradient-noise floor the stochastic setting assumes.
    pub fn with_jitter(mut self, jitter: f64) -> Self {
        self.jitter = jitter;
        self
    }

    /// All layers share one curvature and one optimum radius; center
    /// directions are random unit vectors drawn from `seed`.
    pub fn uniform(
        layers: &[(&str, LayerRole, usize)],
        curvature: f64,
        radius: f64,
        seed: u64,
    ) -> Result<Self> {
        let spec: Vec<(String, LayerRole, usize, f64, f64)> = layers
            .iter()
            .map(|(n, r, d)| (n.to_string(), *r, *d, curvature, radius))
            .collect();
        Self::with_geometry(&spec, seed)
    }

    /// Fully heterogeneous construction: per layer
    /// `(name, role, dim, curvature, optimum radius)`. The center of each
    /// layer is `radius ·` a seeded random unit vector, so starting from
    /// zeros the layer's ideal deviation from its start is exactly
    /// `radius`.
    pub fn with_geometry(
        layers: &[(String, LayerRole, usize, f64, f64)],
        seed: u64,
    ) -> Result<Self> {
        let mut built = Vec::with_capacity(layers.len());
        for (i, (name, role, dim, curvature, radius)) in layers.iter().enumerate() {
            let mut stream = NormalStream::new(mix_seed(seed, i as u64));
            let mut dir: Vec<f64> = (0..*dim).map(|_| stream.next_normal()).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::numeric("degenerate center direction"));
            }
            for v in &mut dir {
                *v *= radius / norm;
            }
            built.push((LayerSpec::new(name.clone(), *role, *dim)?, *curvature, dir));
        }
        Self::new(built)
    }

    /// The benchmark geometry used across the diagnostics: four layers of
    /// equal dim whose optimum radii span 10×.
    pub fn heterogeneous_benchmark(dim_per_layer: usize, seed: u64) -> Result<Self> {
        Self::equal_dim_radii(&[0.5, 1.0, 2.0, 5.0], dim_per_layer, seed)
    }

    /// Radii still span 10× but three layers sit close together and one far
    /// out, so the cross-layer gap spread keeps developing deep into a run.
    /// Used by the divergence-timing diagnostics.
    pub fn divergence_benchmark(dim_per_layer: usize, seed: u64) -> Result<Self> {
        Self::equal_dim_radii(&[2.0, 2.5, 3.0, 20.0], dim_per_layer, seed)
    }

    fn equal_dim_radii(radii: &[f64], dim_per_layer: usize, seed: u64) -> Result<Self> {
        let layers: Vec<(String, LayerRole, usize, f64, f64)> = radii
            .iter()
            .enumerate()
            .map(|(i, r)| {
                (
                    format!("block{}", i + 1),
                    LayerRole::Other,
                    dim_per_layer,
                    1.0,
                    *r,
                )
            })
            .collect();
        Self::with_geometry(&layers, seed)
    }

    pub fn center(&self, name: &str) -> Option<&[f64]> {
        self.layers
            .iter()
            .find(|l| l.spec.name() == name)
            .map(|l| l.center.as_slice())
    }

    fn check_shape(&self, params: &ParamSet) -> Result<()> {
        if params.num_layers() != self.layers.len() {
            return Err(Error::structure("layer count mismatch with quadratic task"));
        }
        for (layer, spec) in self.layers.iter().zip(params.specs()) {
            if *spec != layer.spec {
                return Err(Error::structure(format!(
                    "params layer `{}` does not match task layer `{}`",
                    spec.name(),
                    layer.spec.name()
                )));
            }
        }
        Ok(())
    }

    /// Deterministic per-batch offset stream for layer `i`, or None when
    /// the task is batchless.
    fn jitter_stream(&self, batch: &Batch, layer: usize) -> Option<NormalStream> {
        if self.jitter == 0.0 || batch.feature_dim() == 0 {
            return None;
        }
        let mut bytes = Vec::with_capacity(batch.batch_size() * batch.feature_dim() * 8);
        for i in 0..batch.batch_size() {
            for v in batch.example(i) {
                bytes.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let batch_seed = crate::rng::fnv1a64(&bytes);
        Some(NormalStream::new(mix_seed(batch_seed, layer as u64)))
    }
}

impl LossOracle for QuadraticTask {
    fn param_template(&self) -> ParamSet {
        ParamSet::zeros(self.layers.iter().map(|l| l.spec.clone()).collect())
            .expect("validated at construction")
    }

    fn evaluate(&self, params: &ParamSet, batch: &Batch) -> Result<f64> {
        self.check_shape(params)?;
        let mut loss = 0.0;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut stream = self.jitter_stream(batch, i);
            let sq: f64 = params.values(i)
                .iter()
                .zip(&layer.center)
                .map(|(x, c)| {
                    let c = match &mut stream {
                        Some(s) => c + self.jitter * s.next_normal(),
                        None => *c,
                    };
                    (x - c) * (x - c)
                })
                .sum();
            loss += 0.5 * layer.curvature * sq;
        }
        if !loss.is_finite() {
            return Err(Error::numeric("quadratic loss overflowed"));
        }
        Ok(loss)
    }

    fn analytic_gradient(&self, params: &ParamSet, batch: &Batch) -> Result<Option<ParamSet>> {
        self.check_shape(params)?;
        let mut grad = self.param_template();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut stream = self.jitter_stream(batch, i);
            let out = grad.values_mut(i);
            for (g, (x, c)) in out.iter_mut().zip(params.values(i).iter().zip(&layer.center)) {
                let c = match &mut stream {
                    Some(s) => c + self.jitter * s.next_normal(),
                    None => *c,
                };
                *g = layer.curvature * (x - c);
            }
        }
        Ok(Some(grad))
    }
}
