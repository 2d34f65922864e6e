//! Forward-pass-only optimization toolkit.
//!
//! Two training methods live here: plain two-point zeroth-order SGD and
//! DiZO, which augments it with anchor-based, layer-wise learnable
//! projections (re-initialized and clipped each cycle). Around them sit a
//! desk-scale model zoo, a brute-force gradient oracle for verification,
//! divergence/stability/rate diagnostics, and a CLI experiment harness.
//!
//! Everything is deterministic given its seeds: perturbations are
//! regenerated from per-layer seeded streams rather than stored, and two
//! runs with the same config produce bitwise-identical outputs.

pub mod analyzer;
pub mod anchor;
pub mod checkpoint;
pub mod dizo;
pub mod error;
pub mod estimator;
pub mod gradcheck;
pub mod harness;
pub mod models;
pub mod optimizer;
pub mod param;
pub mod rng;

pub use anchor::{AnchorPrecision, AnchorStore};
pub use dizo::{
    apply_projection, build_anchor, dizo_run, learn_projection, ProjectionState, DELTA_GAP,
};
pub use error::{Error, Result};
pub use estimator::{grad_est, GradSketch, ScaleConvention, StepStats};
pub use optimizer::{zo_sgd_run, LrSchedule, RunOutput, RunRecord, TrainConfig};
pub use param::{LayerRole, LayerSpec, NoiseHandle, ParamSet};
