//! Numerical core of `samlab`.
//!
//! * [`tensor`]: a small reverse-mode differentiation engine over dense `f64` arrays.
//! * [`models`]: bias-free linear classifier and a small multilayer perceptron.
//! * [`optim`]: SGD with momentum, Adam, and the two-pass sharpness-aware wrapper.
//! * [`attacks`]: FGSM and PGD (ℓ∞ / ℓ2) input attacks and robust accuracy.
//! * [`theory`]: closed-form and numeric robust-feature weights for the
//!   robust/non-robust Gaussian feature model.
//! * [`data`]: seeded samplers and a delimited-text loader.

pub mod attacks;
pub mod data;
pub mod error;
pub mod models;
pub mod optim;
pub mod rng;
pub mod tensor;
pub mod theory;

pub use error::{Error, Result};
