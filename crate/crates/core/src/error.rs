//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the numerical routines in this crate.
#[derive(Debug, Error)]
pub enum CoreError {
    /// Malformed parameters, bad grids, inconsistent inputs.
    #[error("configuration error: {0}")]
    Config(String),

    /// A diffusion coefficient failed its positivity requirement.
    #[error("ellipticity error: {0}")]
    Ellipticity(String),

    /// Non-finite values encountered while building a density or integrand.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid input to an estimator or simulator (empty cloud, bad bandwidth, ...).
    #[error("input error: {0}")]
    Input(String),

    /// A statistical estimator could not produce a usable result.
    #[error("estimation error: {0}")]
    Estimation(String),

    /// A grid density degenerated (too many zero-mass columns).
    #[error("degenerate density: {0}")]
    DegenerateDensity(String),

    /// The linear solver or eigen-iteration failed to converge.
    #[error("solver error: {0}")]
    Solver(String),

    /// A discrete solution violated a structural property of the scheme.
    #[error("discretization error: {0}")]
    Discretization(String),

    /// A simulated particle left the representable range.
    #[error("numerical blowup at step {step}: {message}")]
    Blowup { step: usize, message: String },

    /// An arbitrage violation in an option price surface.
    #[error("arbitrage violation: {0}")]
    Arbitrage(String),

    /// File I/O while loading tabulated data.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
