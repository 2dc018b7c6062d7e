//! Regularization-by-denoising reconstruction of multispectral datacubes.
//!
//! The crate is organized bottom-up:
//!
//! - [`datacube`]: the spatiospectral tensor type, norms, SNR and the MSD file format.
//! - [`operators`]: blur-then-decimate measurement operators, their adjoints,
//!   spectral-norm estimation and noise injection.
//! - [`fidelity`]: the quadratic data term `g(x) = ½‖y − Ax‖²`.
//! - [`denoisers`]: pluggable denoisers `D`, the RED penalty and Lipschitz audits.
//! - [`solver`]: gradient / accelerated-gradient RED iterations.
//! - [`diagnostics`]: executable checks for the convergence hypotheses and bounds.
//! - [`phantom`]: deterministic synthetic ground truth.
//! - [`experiment`] and [`cli`]: the experiment harness and command-line front end.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod datacube;
pub mod denoisers;
pub mod diagnostics;
pub mod error;
pub mod experiment;
pub mod fidelity;
pub mod operators;
pub mod phantom;
pub mod rng;
pub mod solver;

pub use datacube::{DataCube, Dims, MeasurementVector};
pub use denoisers::DenoiserSpec;
pub use error::{Error, FormatError, Result};
pub use fidelity::FidelityProblem;
pub use operators::{Kernel2D, MeasurementModel};
pub use solver::{IterationRecord, Mode, SolverConfig};
