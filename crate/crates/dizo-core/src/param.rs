//! Layer-partitioned parameter storage.
//!
//! A [`ParamSet`] is a flat `f64` vector split into named, role-tagged
//! layers. Every training-side operation (perturbation, axpy, norms) works
//! on this structure in place. Perturbations are regenerated from seeds
//! rather than stored: each layer draws from its own stream, derived as
//! `seed ^ fnv1a64(layer name)`, so perturbing a filtered subset of layers
//! never shifts the noise any other layer would have received.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{fnv1a64, NormalStream};

/// Functional role of a layer. Projection role filters select on this.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LayerRole {
    AttnQ,
    AttnK,
    AttnV,
    AttnO,
    Dense,
    Bias,
    Other,
}

impl LayerRole {
    pub const ALL: [LayerRole; 7] = [
        LayerRole::AttnQ,
        LayerRole::AttnK,
        LayerRole::AttnV,
        LayerRole::AttnO,
        LayerRole::Dense,
        LayerRole::Bias,
        LayerRole::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LayerRole::AttnQ => "attn_q",
            LayerRole::AttnK => "attn_k",
            LayerRole::AttnV => "attn_v",
            LayerRole::AttnO => "attn_o",
            LayerRole::Dense => "dense",
            LayerRole::Bias => "bias",
            LayerRole::Other => "other",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        LayerRole::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| Error::config(format!("unknown layer role `{s}`")))
    }
}

impl fmt::Display for LayerRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Immutable description of one layer: unique name, role, element count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerSpec {
    name: String,
    role: LayerRole,
    dim: usize,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, role: LayerRole, dim: usize) -> Result<Self> {
        let name = name.into();
        if dim == 0 {
            return Err(Error::config(format!("layer `{name}` has dim 0")));
        }
        Ok(Self { name, role, dim })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> LayerRole {
        self.role
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
}

/// Seed plus scale: enough to regenerate (or undo) one perturbation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseHandle {
    pub seed: u64,
    pub scale: f64,
}

impl NoiseHandle {
    pub fn new(seed: u64, scale: f64) -> Self {
        Self { seed, scale }
    }

    /// Same seed, negated scale: undoes `self` up to rounding.
    pub fn reversed(self) -> Self {
        Self {
            seed: self.seed,
            scale: -self.scale,
        }
    }
}

struct Layer {
    spec: LayerSpec,
    values: Vec<f64>,
}

/// Layer-partitioned parameter vector. Layer order is fixed at
/// construction and every iteration is in that order.
pub struct ParamSet {
    layers: Vec<Layer>,
    total_dim: usize,
}

impl ParamSet {
    /// Builds a set from `(spec, values)` pairs. Names must be unique and
    /// each value block must match its spec's dim.
    pub fn new(layers: Vec<(LayerSpec, Vec<f64>)>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        let mut total = 0usize;
        for (spec, values) in &layers {
            if !seen.insert(spec.name.clone()) {
                return Err(Error::config(format!("duplicate layer name `{}`", spec.name)));
            }
            if values.len() != spec.dim {
                return Err(Error::structure(format!(
                    "layer `{}`: {} values for dim {}",
                    spec.name,
                    values.len(),
                    spec.dim
                )));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "layer `{}` contains non-finite values",
                    spec.name
                )));
            }
            total += spec.dim;
        }
        Ok(Self {
            layers: layers
                .into_iter()
                .map(|(spec, values)| Layer { spec, values })
                .collect(),
            total_dim: total,
        })
    }

    /// Zero-valued set with the given specs.
    pub fn zeros(specs: Vec<LayerSpec>) -> Result<Self> {
        Self::new(specs.into_iter().map(|s| {
            let dim = s.dim;
            (s, vec![0.0; dim])
        }).collect())
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn specs(&self) -> impl Iterator<Item = &LayerSpec> {
        self.layers.iter().map(|l| &l.spec)
    }

    pub fn spec(&self, idx: usize) -> &LayerSpec {
        &self.layers[idx].spec
    }

    pub fn values(&self, idx: usize) -> &[f64] {
        &self.layers[idx].values
    }

    pub fn values_mut(&mut self, idx: usize) -> &mut [f64] {
        &mut self.layers[idx].values
    }

    pub fn layer_index(&self, name: &str) -> Option<usize> {
        self.layers.iter().position(|l| l.spec.name == name)
    }

    pub fn values_by_name(&self, name: &str) -> Option<&[f64]> {
        self.layer_index(name).map(|i| self.values(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&LayerSpec, &[f64])> {
        self.layers.iter().map(|l| (&l.spec, l.values.as_slice()))
    }

    /// Deep copy (specs and values).
    pub fn clone_values(&self) -> ParamSet {
        ParamSet {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    spec: l.spec.clone(),
                    values: l.values.clone(),
                })
                .collect(),
            total_dim: self.total_dim,
        }
    }

    /// Errors unless `other` has the same layer names, roles, and dims in
    /// the same order.
    pub fn check_same_shape(&self, other: &ParamSet) -> Result<()> {
        if self.layers.len() != other.layers.len() {
            return Err(Error::structure(format!(
                "layer count mismatch: {} vs {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        for (a, b) in self.layers.iter().zip(&other.layers) {
            if a.spec != b.spec {
                return Err(Error::structure(format!(
                    "layer mismatch: `{}` ({:?}, dim {}) vs `{}` ({:?}, dim {})",
                    a.spec.name, a.spec.role, a.spec.dim, b.spec.name, b.spec.role, b.spec.dim
                )));
            }
        }
        Ok(())
    }

    /// Adds `handle.scale * z` to every selected element, where `z` comes
    /// from the layer's seeded stream. Passing the same handle with a
    /// negated scale undoes the perturbation up to rounding.
    pub fn perturb_in_place(
        &mut self,
        handle: NoiseHandle,
        layer_filter: Option<&BTreeSet<String>>,
    ) -> Result<()> {
        if !handle.scale.is_finite() {
            return Err(Error::config("perturbation scale must be finite"));
        }
        if let Some(filter) = layer_filter {
            for name in filter {
                if self.layer_index(name).is_none() {
                    return Err(Error::config(format!(
                        "layer filter names unknown layer `{name}`"
                    )));
                }
            }
        }
        for layer in &mut self.layers {
            if let Some(filter) = layer_filter {
                if !filter.contains(&layer.spec.name) {
                    continue;
                }
            }
            let mut stream = NormalStream::new(handle.seed ^ fnv1a64(layer.spec.name.as_bytes()));
            for v in &mut layer.values {
                *v += handle.scale * stream.next_normal();
            }
        }
        self.check_finite("perturb_in_place")
    }

    /// `self += coefficient * direction`, in place.
    pub fn axpy_toward(&mut self, direction: &ParamSet, coefficient: f64) -> Result<()> {
        self.check_same_shape(direction)?;
        for (layer, dir) in self.layers.iter_mut().zip(&direction.layers) {
            for (v, d) in layer.values.iter_mut().zip(&dir.values) {
                *v += coefficient * d;
            }
        }
        self.check_finite("axpy_toward")
    }

    /// Per-layer L2 norm of `self - reference`, keyed by layer name.
    pub fn diff_norms(&self, reference: &ParamSet) -> Result<BTreeMap<String, f64>> {
        self.check_same_shape(reference)?;
        Ok(self
            .layers
            .iter()
            .zip(&reference.layers)
            .map(|(a, b)| {
                let sq: f64 = a
                    .values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                (a.spec.name.clone(), sq.sqrt())
            })
            .collect())
    }

    /// L2 norm of one layer's values.
    pub fn layer_norm(&self, idx: usize) -> f64 {
        self.layers[idx]
            .values
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn check_finite(&self, op: &str) -> Result<()> {
        for layer in &self.layers {
            if layer.values.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric(format!(
                    "{op} produced non-finite values in layer `{}`",
                    layer.spec.name
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Debug for ParamSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ParamSet[{} layers, dim {}]", self.layers.len(), self.total_dim)
    }
}
