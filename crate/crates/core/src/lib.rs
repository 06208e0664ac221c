//! Self-augmented supervised fine-tuning on a desk-scale language model.
//!
//! The crate builds a synthetic corpus with independent content and style
//! factors, trains a tiny decoder-only transformer on it, fine-tunes with
//! and without a self-generated rehearsal set, and measures forgetting
//! through gradient-subspace and first-order Taylor diagnostics.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what every experiment uses.

pub mod corpus;
pub mod diagnostics;
pub mod error;
pub mod mixer;
pub mod model;
pub mod sampler;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Flat 64-bit parameter vector of the desk model.
pub type ParameterVector = model::ParamVector<f64>;
/// Gradient with the same layout as [`ParameterVector`].
pub type GradientVector = model::ParamVector<f64>;
/// Trajectory of 64-bit snapshots.
pub type Trajectory = trainer::Trajectory<f64>;
