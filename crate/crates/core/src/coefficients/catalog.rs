//! Curated coefficient sets with assumption constants known in closed form.
//!
//! Each entry validates on construction: OU-type drifts give `x b(x) =
//! -kappa x^2 + kappa mu x`, so `c = kappa/2` and `C1 = kappa mu^2 / 2` work;
//! logistic sigma/f/h are bounded by their asymptotes with derivative bound
//! `(hi - lo) * slope / 4`.

use super::{AssumptionConstants, CoefficientSet, ScalarFunction};
use crate::error::{CoreError, Result};

/// Default range and resolution for the numeric assumption check.
pub const CHECK_RANGE: (f64, f64) = (-12.0, 12.0);
pub const CHECK_SAMPLES: usize = 2001;

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 4] = [
    "gaussian-decoupled",
    "ou-logistic-hf2",
    "ou-tanh-general",
    "saturated-cubic",
];

/// Looks up a catalog entry, already validated.
pub fn by_name(name: &str) -> Result<CoefficientSet> {
    match name {
        "gaussian-decoupled" => gaussian_decoupled(),
        "ou-logistic-hf2" => ou_logistic_hf2(),
        "ou-tanh-general" => ou_tanh_general(),
        "saturated-cubic" => saturated_cubic(),
        other => Err(CoreError::Config(format!(
            "unknown catalog entry '{other}'; known: {NAMES:?}"
        ))),
    }
}

/// Independent standard OU pair: `b = -x`, `sigma = sqrt(2)`, `f = h = 1`.
/// Both stationary marginals are standard normal.
pub fn gaussian_decoupled() -> Result<CoefficientSet> {
    let sqrt2 = std::f64::consts::SQRT_2;
    CoefficientSet::new(
        ScalarFunction::affine(-1.0, 0.0),
        ScalarFunction::affine(-1.0, 0.0),
        ScalarFunction::constant(sqrt2),
        ScalarFunction::constant(sqrt2),
        ScalarFunction::constant(1.0),
        ScalarFunction::constant(1.0),
        AssumptionConstants {
            c: 1.0,
            c1: 0.1,
            c2: 1.1,
            sigma_low: 1.4,
            sigma_high: 1.5,
            sigma_lip: 0.1,
            f_low: 1.0,
            f_high: 1.0,
            h_low: 1.0,
            h_high: 1.0,
            f_lip: 0.1,
        },
    )?
    .validate(CHECK_RANGE, CHECK_SAMPLES)
}

/// Standard OU marginals coupled through a nonconstant logistic `f` with
/// `h = f^2` exactly. The stationary joint law is the product of the two
/// standard normal marginals regardless of `f`.
pub fn ou_logistic_hf2() -> Result<CoefficientSet> {
    let sqrt2 = std::f64::consts::SQRT_2;
    let f = ScalarFunction::logistic(1.0, 2.0, 1.0, 0.0);
    let h = ScalarFunction::logistic_squared(1.0, 2.0, 1.0, 0.0);
    CoefficientSet::new(
        ScalarFunction::affine(-1.0, 0.0),
        ScalarFunction::affine(-1.0, 0.0),
        ScalarFunction::constant(sqrt2),
        ScalarFunction::constant(sqrt2),
        h,
        f,
        AssumptionConstants {
            c: 1.0,
            c1: 0.1,
            c2: 1.1,
            sigma_low: 1.4,
            sigma_high: 1.5,
            sigma_lip: 0.1,
            f_low: 1.0,
            f_high: 2.0,
            h_low: 1.0,
            h_high: 4.0,
            f_lip: 0.3,
        },
    )?
    .validate(CHECK_RANGE, CHECK_SAMPLES)
}

/// General coupling with `h != f^2`: tanh-shaped `sigma1`, increasing `f`,
/// decreasing `h`. No closed-form stationary joint density exists.
pub fn ou_tanh_general() -> Result<CoefficientSet> {
    let sqrt2 = std::f64::consts::SQRT_2;
    // 1.2 + 0.4 tanh(x/2) written in logistic form
    let sigma1 = ScalarFunction::logistic(0.8, 1.6, 1.0, 0.0);
    let f = ScalarFunction::logistic(1.0, 1.6, 1.2, 0.3);
    let h = ScalarFunction::logistic(0.8, 2.0, -0.8, -0.5);
    CoefficientSet::new(
        ScalarFunction::affine(-1.0, 0.0),
        ScalarFunction::affine(-1.0, 0.0),
        sigma1,
        ScalarFunction::constant(sqrt2),
        h,
        f,
        AssumptionConstants {
            c: 1.0,
            c1: 0.1,
            c2: 1.1,
            sigma_low: 0.8,
            sigma_high: 1.6,
            sigma_lip: 0.25,
            f_low: 1.0,
            f_high: 1.6,
            h_low: 0.8,
            h_high: 2.0,
            f_lip: 0.2,
        },
    )?
    .validate(CHECK_RANGE, CHECK_SAMPLES)
}

/// Cubic drift saturated to linear tails at |x| = 2 for the X coordinate;
/// the stationary X-marginal is proportional to exp(-x^4/2) in the core.
pub fn saturated_cubic() -> Result<CoefficientSet> {
    let sqrt2 = std::f64::consts::SQRT_2;
    CoefficientSet::new(
        ScalarFunction::saturated_cubic(1.0, 0.0, 2.0),
        ScalarFunction::affine(-1.0, 0.0),
        ScalarFunction::constant(1.0),
        ScalarFunction::constant(sqrt2),
        ScalarFunction::constant(1.0),
        ScalarFunction::constant(1.0),
        AssumptionConstants {
            // core: max_x (x^2 - x^4) = 1/4; linear tails are strictly better
            c: 1.0,
            c1: 0.3,
            c2: 12.0,
            sigma_low: 0.9,
            sigma_high: 1.5,
            sigma_lip: 0.1,
            f_low: 1.0,
            f_high: 1.0,
            h_low: 1.0,
            h_high: 1.0,
            f_lip: 0.1,
        },
    )?
    .validate(CHECK_RANGE, CHECK_SAMPLES)
}
