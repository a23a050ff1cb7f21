//! Empirical likelihood inference for parameters defined by estimating
//! equations when part of the sample is missing at random.
//!
//! Missing `Y` values are imputed repeatedly from a kernel estimate of the
//! conditional distribution of `Y` given the always-observed `X`; the imputed
//! estimating functions feed an empirical likelihood whose ratio is calibrated
//! by a normal approximation, a chi-square mixture, or a reimputing bootstrap.

pub mod baselines;
pub mod cli;
pub mod dataset;
pub mod el;
pub mod error;
pub mod estfun;
pub mod inference;
pub mod imputation;
pub mod kernel;
pub mod linalg;
pub mod optim;
pub mod par;
pub mod rng;
pub mod simulation;
pub mod stats;

pub use error::{Error, Result};
