//! Preconditioned single-pass SGD and preconditioned ridge regression for
//! overparameterized Gaussian least squares, together with closed-form
//! excess-risk bounds, hyperparameter tuning and an experiment harness.

// `!(x > 0.0)` style guards are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod error;
pub mod harness;
pub mod precondition;
pub mod problem;
pub mod ridge;
pub mod risk;
pub mod sgd;
pub mod spectral;
pub mod streams;
pub mod tuning;

pub use error::{Error, Result};
pub use precondition::{Preconditioner, PreconditionerKind};
pub use problem::{ProblemInstance, SampleBatch, SpectrumMode, TargetMode};
pub use spectral::{SpectralOperator, Vector};
