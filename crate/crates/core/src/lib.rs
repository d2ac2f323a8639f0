//! Laplace-approximation diagnostics via Bayesian quadrature.
//!
//! Given a positive integrand with known mode and Hessian, [`diagnose`]
//! interrogates it on a transformed fully symmetric grid and reports whether
//! its Laplace approximation falls outside the central 95% interval of a
//! Gaussian-process posterior on the integral. Hyperparameters come from
//! [`calibration`], which places a multivariate t test function exactly on
//! the rejection boundary.

pub mod bq;
pub mod calibration;
pub mod error;
pub mod grids;
pub mod integrand;
mod linalg;
pub mod optim;
pub mod oracles;
pub mod special;

pub use bq::{diagnose, diagnose_with, DiagnosticConfig, DiagnosticReport, IntegralPosterior, SolveOptions, SolverPath};
pub use calibration::{calibrate, CalibrationFile, CalibrationOptions, CalibrationResult, LambdaChoice};
pub use error::{Error, Result};
pub use grids::{GridFamily, PreliminaryGrid};
pub use integrand::{gaussian_approx, laplace_approx, FnDensity, GaussianApprox, IntegrandSpec, LogDensity};
