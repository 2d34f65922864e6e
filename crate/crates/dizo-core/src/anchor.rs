//! Frozen anchor parameters and distance gaps.
//!
//! The anchor is a read-only snapshot of selected layers of the initial
//! (or warm-started) parameters. Distance gaps ‖θ^(ℓ) − θ₀^(ℓ)‖₂ against
//! the anchor drive the projection method. Anchored layers can be kept at
//! full precision or as 8-bit affine codes to cut the snapshot's memory.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::{LayerRole, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AnchorPrecision {
    F64,
    Q8,
}

impl AnchorPrecision {
    pub fn as_str(self) -> &'static str {
        match self {
            AnchorPrecision::F64 => "f64",
            AnchorPrecision::Q8 => "q8",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "f64" => Ok(AnchorPrecision::F64),
            "q8" => Ok(AnchorPrecision::Q8),
            _ => Err(Error::config(format!("unknown anchor precision `{s}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum AnchorBlock {
    F64(Vec<f64>),
    Q8 {
        scale: f64,
        zero: f64,
        codes: Vec<u8>,
    },
}

impl AnchorBlock {
    fn quantize_q8(values: &[f64]) -> Self {
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = (max - min) / 255.0;
        if scale == 0.0 {
            return AnchorBlock::Q8 {
                scale: 0.0,
                zero: min,
                codes: vec![0; values.len()],
            };
        }
        let codes = values
            .iter()
            .map(|&x| {
                let c = ((x - min) / scale).round().clamp(0.0, 255.0) as i32;
                // Pick the truly nearest code; f64 rounding in the division
                // can land one off at cell boundaries.
                let mut best = c;
                let mut best_err = (min + c as f64 * scale - x).abs();
                for cand in [c - 1, c + 1] {
                    if (0..=255).contains(&cand) {
                        let err = (min + cand as f64 * scale - x).abs();
                        if err < best_err {
                            best = cand;
                            best_err = err;
                        }
                    }
                }
                best as u8
            })
            .collect();
        AnchorBlock::Q8 {
            scale,
            zero: min,
            codes,
        }
    }

    fn dim(&self) -> usize {
        match self {
            AnchorBlock::F64(v) => v.len(),
            AnchorBlock::Q8 { codes, .. } => codes.len(),
        }
    }

    /// Decoded values (exact for f64 blocks, dequantized for q8).
    pub(crate) fn decode(&self) -> Vec<f64> {
        match self {
            AnchorBlock::F64(v) => v.clone(),
            AnchorBlock::Q8 { scale, zero, codes } => {
                codes.iter().map(|&c| zero + c as f64 * scale).collect()
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AnchorLayer {
    pub(crate) name: String,
    pub(crate) role: LayerRole,
    pub(crate) block: AnchorBlock,
}

/// Read-only snapshot of the layers matching a role filter.
#[derive(Debug, Clone)]
pub struct AnchorStore {
    layers: Vec<AnchorLayer>,
    precision: AnchorPrecision,
    /// Total dim of the source ParamSet, kept for the memory-ratio report.
    source_total_dim: usize,
}

impl AnchorStore {
    /// Snapshots every layer of `params` whose role is in `roles`.
    pub fn build(
        params: &ParamSet,
        roles: &BTreeSet<LayerRole>,
        precision: AnchorPrecision,
    ) -> Result<Self> {
        let mut layers = Vec::new();
        for (spec, values) in params.iter() {
            if !roles.contains(&spec.role()) {
                continue;
            }
            let block = match precision {
                AnchorPrecision::F64 => AnchorBlock::F64(values.to_vec()),
                AnchorPrecision::Q8 => AnchorBlock::quantize_q8(values),
            };
            layers.push(AnchorLayer {
                name: spec.name().to_string(),
                role: spec.role(),
                block,
            });
        }
        if layers.is_empty() {
            let have: Vec<&str> = roles.iter().map(|r| r.as_str()).collect();
            return Err(Error::config(format!(
                "no layer matches anchor roles {{{}}}",
                have.join(", ")
            )));
        }
        Ok(Self {
            layers,
            precision,
            source_total_dim: params.total_dim(),
        })
    }

    pub fn precision(&self) -> AnchorPrecision {
        self.precision
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Anchored layer names in source layer order.
    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.name.as_str())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.layers.iter().any(|l| l.name == name)
    }

    /// Decoded anchor values for one layer.
    pub fn values(&self, name: &str) -> Option<Vec<f64>> {
        self.layers.iter().find(|l| l.name == name).map(|l| l.block.decode())
    }

    /// Anchored element count divided by the source model's total dim.
    pub fn memory_ratio(&self) -> f64 {
        let anchored: usize = self.layers.iter().map(|l| l.block.dim()).sum();
        anchored as f64 / self.source_total_dim as f64
    }

    /// Per anchored layer: ‖params^(ℓ) − anchor^(ℓ)‖₂.
    pub fn gap_norms(&self, params: &ParamSet) -> Result<BTreeMap<String, f64>> {
        let mut out = BTreeMap::new();
        for layer in &self.layers {
            let idx = params.layer_index(&layer.name).ok_or_else(|| {
                Error::structure(format!("params lack anchored layer `{}`", layer.name))
            })?;
            let current = params.values(idx);
            if current.len() != layer.block.dim() {
                return Err(Error::structure(format!(
                    "layer `{}`: anchor dim {} vs params dim {}",
                    layer.name,
                    layer.block.dim(),
                    current.len()
                )));
            }
            let sq = match &layer.block {
                AnchorBlock::F64(v) => current
                    .iter()
                    .zip(v)
                    .map(|(x, a)| (x - a) * (x - a))
                    .sum::<f64>(),
                AnchorBlock::Q8 { scale, zero, codes } => current
                    .iter()
                    .zip(codes)
                    .map(|(x, &c)| {
                        let a = zero + c as f64 * scale;
                        (x - a) * (x - a)
                    })
                    .sum::<f64>(),
            };
            out.insert(layer.name.clone(), sq.sqrt());
        }
        Ok(out)
    }

    pub(crate) fn layers(&self) -> &[AnchorLayer] {
        &self.layers
    }

    pub(crate) fn from_layers(
        layers: Vec<AnchorLayer>,
        precision: AnchorPrecision,
        source_total_dim: usize,
    ) -> Self {
        Self {
            layers,
            precision,
            source_total_dim,
        }
    }

    pub(crate) fn source_total_dim(&self) -> usize {
        self.source_total_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::param::LayerSpec;
    use crate::rng::NormalStream;

    fn roles(rs: &[LayerRole]) -> BTreeSet<LayerRole> {
        rs.iter().cloned().collect()
    }

    fn sample_params() -> ParamSet {
        ParamSet::new(vec![
            (
                LayerSpec::new("attn.q", LayerRole::AttnQ, 4).unwrap(),
                vec![0.1, -0.2, 0.3, 0.4],
            ),
            (
                LayerSpec::new("attn.v", LayerRole::AttnV, 4).unwrap(),
                vec![1.0, 2.0, -1.0, 0.0],
            ),
            (
                LayerSpec::new("head.w", LayerRole::Dense, 2).unwrap(),
                vec![0.5, 0.5],
            ),
        ])
        .unwrap()
    }

    #[test]
    fn builds_only_matching_roles_and_reports_ratio() {
        let p = sample_params();
        let a = AnchorStore::build(
            &p,
            &roles(&[LayerRole::AttnQ, LayerRole::AttnV]),
            AnchorPrecision::F64,
        )
        .unwrap();
        assert_eq!(a.num_layers(), 2);
        assert!(a.contains("attn.q") && a.contains("attn.v") && !a.contains("head.w"));
        assert_eq!(a.memory_ratio(), 8.0 / 10.0);
    }

    #[test]
    fn attention_qv_anchor_reports_exact_ratio() {
        use crate::models::{make_attention_model, LossOracle};
        let task = make_attention_model(8, 3, 1).unwrap();
        let params = task.param_template();
        let a = AnchorStore::build(
            &params,
            &roles(&[LayerRole::AttnQ, LayerRole::AttnV]),
            AnchorPrecision::F64,
        )
        .unwrap();
        // Two of the four d×d attention matrices, over the whole model.
        let anchored = 2 * 8 * 8;
        assert_eq!(a.memory_ratio(), anchored as f64 / params.total_dim() as f64);
    }

    #[test]
    fn empty_role_match_is_config_error() {
        let p = sample_params();
        let err = AnchorStore::build(&p, &roles(&[LayerRole::AttnK]), AnchorPrecision::F64);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn f64_anchor_reconstructs_bitwise() {
        let p = sample_params();
        let a = AnchorStore::build(&p, &roles(&[LayerRole::AttnQ]), AnchorPrecision::F64).unwrap();
        assert_eq!(a.values("attn.q").unwrap(), p.values(0));
    }

    #[test]
    fn q8_reconstruction_error_is_within_half_scale() {
        let mut s = NormalStream::new(2024);
        let values: Vec<f64> = (0..257).map(|_| 3.0 * s.next_normal()).collect();
        let p = ParamSet::new(vec![(
            LayerSpec::new("w", LayerRole::Dense, values.len()).unwrap(),
            values.clone(),
        )])
        .unwrap();
        let a = AnchorStore::build(&p, &roles(&[LayerRole::Dense]), AnchorPrecision::Q8).unwrap();
        let decoded = a.values("w").unwrap();
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let scale = (max - min) / 255.0;
        for (x, d) in values.iter().zip(&decoded) {
            // Half-cell bound; the 1e-12 factor absorbs f64 rounding of the
            // cell endpoints themselves.
            assert!(
                (x - d).abs() <= scale / 2.0 * (1.0 + 1e-12),
                "x={x} decoded={d} scale={scale}"
            );
        }
    }

    #[test]
    fn q8_constant_layer_is_exact() {
        let p = ParamSet::new(vec![(
            LayerSpec::new("w", LayerRole::Dense, 5).unwrap(),
            vec![0.25; 5],
        )])
        .unwrap();
        let a = AnchorStore::build(&p, &roles(&[LayerRole::Dense]), AnchorPrecision::Q8).unwrap();
        assert_eq!(a.values("w").unwrap(), vec![0.25; 5]);
    }

    #[test]
    fn gap_norms_hand_case() {
        let specs = || {
            vec![
                (
                    LayerSpec::new("l1", LayerRole::Dense, 2).unwrap(),
                    vec![0.0, 0.0],
                ),
                (
                    LayerSpec::new("l2", LayerRole::Dense, 2).unwrap(),
                    vec![1.0, 1.0],
                ),
            ]
        };
        let init = ParamSet::new(specs()).unwrap();
        let anchor =
            AnchorStore::build(&init, &roles(&[LayerRole::Dense]), AnchorPrecision::F64).unwrap();
        let mut moved = ParamSet::new(specs()).unwrap();
        moved.values_mut(0)[0] = 3.0;
        moved.values_mut(0)[1] = 4.0;
        let gaps = anchor.gap_norms(&moved).unwrap();
        assert_eq!(gaps["l1"], 5.0);
        assert_eq!(gaps["l2"], 0.0);
    }

    #[test]
    fn gap_norms_dim_mismatch_is_structural() {
        let p = sample_params();
        let a = AnchorStore::build(&p, &roles(&[LayerRole::AttnQ]), AnchorPrecision::F64).unwrap();
        let q = ParamSet::new(vec![(
            LayerSpec::new("attn.q", LayerRole::AttnQ, 2).unwrap(),
            vec![0.0, 0.0],
        )])
        .unwrap();
        assert!(matches!(a.gap_norms(&q), Err(Error::Structure(_))));
    }
}
