//! Numerical laboratory for two-dimensional conditional McKean-Vlasov SDEs.
//!
//! The system under study couples a diffusion `Y` into the coefficients of
//! `X` through conditional expectations given `X`:
//!
//! ```text
//! dX = b1(X) h(Y)/E[h(Y)|X] dt + sigma1(X) f(Y)/sqrt(E[f^2(Y)|X]) dW
//! dY = b2(Y) dt + sigma2(Y) dB
//! ```
//!
//! The crate provides, as independent cross-checking routes:
//!
//! - closed-form 1D stationary marginals ([`stationary1d`]), the oracle for
//!   every marginal comparison;
//! - conditional-expectation field estimation from particles or grids
//!   ([`condexp`]);
//! - the density transformation moving the conditional term between
//!   coordinates, with its inverse ([`transform`]);
//! - an interacting-particle Euler-Maruyama simulator with reproducible
//!   counter-based noise ([`particlesim`]);
//! - a conservative finite-difference solver for the linearized stationary
//!   Fokker-Planck equation plus the Picard fixed-point iteration
//!   ([`fpsolver`]);
//! - the local stochastic volatility calibration application ([`lsv`]).

pub mod coefficients;
pub mod condexp;
pub mod error;
pub mod fpsolver;
pub mod grid2d;
pub mod lsv;
pub mod particlesim;
pub mod stationary1d;
pub mod test_functions;
pub mod transform;

pub use coefficients::{AssumptionConstants, CoefficientSet, FnKind, ScalarFunction};
pub use condexp::{CondExpectationField, MollifierConfig, ParticleCloud};
pub use error::{CoreError, Result};
pub use grid2d::GridDensity2D;
pub use stationary1d::StationaryDensity1D;
