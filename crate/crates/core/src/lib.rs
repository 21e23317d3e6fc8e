//! RNN approximations of Bayesian optimal filters on linear-Gaussian models.
//!
//! The crate provides the exact Kalman filter as an oracle, a bootstrap
//! particle filter baseline, recurrent ReLU state estimators trained by
//! backpropagation through time, and the evaluation tooling used to compare
//! them over long test horizons.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod kalman;
pub mod model;
pub mod particle;
pub mod rnn;
pub mod seed;
pub mod train;

pub use error::{Error, Result};
