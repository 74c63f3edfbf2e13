//! Coefficient sets for the two-dimensional conditional SDE system and the
//! numeric verification of the standing dissipativity / boundedness
//! assumption.
//!
//! The system couples
//!
//! ```text
//! dX = b1(X) h(Y)/E[h(Y)|X] dt + sigma1(X) f(Y)/sqrt(E[f^2(Y)|X]) dW
//! dY = b2(Y) dt + sigma2(Y) dB
//! ```
//!
//! and everything downstream (stationary densities, the density
//! transformation, the Fokker-Planck solver, the particle simulator) assumes
//! the six functions satisfy, for declared positive constants,
//!
//! ```text
//! x b_i(x) <= -c x^2 + C1,     |b_i(x)| <= C2 (1 + |x|),
//! sigma_low <= sigma_i <= sigma_high,   |sigma_i'| <= sigma_lip,
//! f_low <= f <= f_high,  h_low <= h <= h_high,  |f'| <= f_lip.
//! ```
//!
//! The check is numeric on a dense grid (tabulated coefficients admit no
//! symbolic proof); violations are reported as data with witnesses.

pub mod catalog;
mod scalar;

pub use scalar::{FnKind, ScalarFunction};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Constants certifying the standing assumption for a coefficient set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AssumptionConstants {
    /// Dissipativity rate in `x b(x) <= -c x^2 + C1`.
    pub c: f64,
    /// Dissipativity offset.
    pub c1: f64,
    /// Linear-growth constant in `|b| <= C2 (1 + |x|)`.
    pub c2: f64,
    pub sigma_low: f64,
    pub sigma_high: f64,
    /// Bound on `|sigma_i'|`.
    pub sigma_lip: f64,
    pub f_low: f64,
    pub f_high: f64,
    pub h_low: f64,
    pub h_high: f64,
    /// Bound on `|f'|`.
    pub f_lip: f64,
}

impl AssumptionConstants {
    pub fn validate(&self) -> Result<()> {
        let pos = [
            ("c", self.c),
            ("C1", self.c1),
            ("C2", self.c2),
            ("sigma_low", self.sigma_low),
            ("sigma_lip", self.sigma_lip),
            ("f_low", self.f_low),
            ("h_low", self.h_low),
            ("f_lip", self.f_lip),
        ];
        for (name, v) in pos {
            if !(v > 0.0) {
                return Err(CoreError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.sigma_high < self.sigma_low || self.f_high < self.f_low || self.h_high < self.h_low
        {
            return Err(CoreError::Config(
                "upper bounds must dominate lower bounds".into(),
            ));
        }
        Ok(())
    }
}

/// Which inequality of the standing assumption a witness violates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    /// Name of the offending coefficient (`b1`, `sigma2`, ...).
    pub function: String,
    /// Inequality in human-readable form.
    pub inequality: String,
    /// Witness abscissa.
    pub x: f64,
    /// Left-hand side at the witness.
    pub lhs: f64,
    /// Right-hand side at the witness.
    pub rhs: f64,
}

/// Result of the numeric assumption check. Empty iff the set validates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

/// The six coefficient functions plus their assumption certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub b1: ScalarFunction,
    pub b2: ScalarFunction,
    pub sigma1: ScalarFunction,
    pub sigma2: ScalarFunction,
    pub h: ScalarFunction,
    pub f: ScalarFunction,
    pub constants: AssumptionConstants,
    /// True once `validate_assumption_a` has passed on the declared grid.
    pub validated: bool,
}

impl CoefficientSet {
    pub fn new(
        b1: ScalarFunction,
        b2: ScalarFunction,
        sigma1: ScalarFunction,
        sigma2: ScalarFunction,
        h: ScalarFunction,
        f: ScalarFunction,
        constants: AssumptionConstants,
    ) -> Result<Self> {
        constants.validate()?;
        for (name, fun) in [
            ("b1", &b1),
            ("b2", &b2),
            ("sigma1", &sigma1),
            ("sigma2", &sigma2),
            ("h", &h),
            ("f", &f),
        ] {
            fun.validate()
                .map_err(|e| CoreError::Config(format!("{name}: {e}")))?;
        }
        Ok(Self {
            b1,
            b2,
            sigma1,
            sigma2,
            h,
            f,
            constants,
            validated: false,
        })
    }

    /// Runs the assumption check and sets `validated` on success.
    pub fn validate(mut self, check_range: (f64, f64), n_samples: usize) -> Result<Self> {
        let report = validate_assumption_a(&self, check_range, n_samples)?;
        if report.is_empty() {
            self.validated = true;
            Ok(self)
        } else {
            let first = &report.violations[0];
            Err(CoreError::Config(format!(
                "assumption check failed with {} violation(s); first: {} for {} at x = {} ({} vs {})",
                report.violations.len(),
                first.inequality,
                first.function,
                first.x,
                first.lhs,
                first.rhs
            )))
        }
    }

    /// True when `h` and `f^2` coincide exactly by construction, or agree to
    /// within `tol` on a dense grid over `range`.
    pub fn h_is_f_squared(&self, range: (f64, f64), tol: f64) -> bool {
        if self.h.kind == FnKind::SmoothBoundedSquared
            && self.f.kind == FnKind::SmoothBounded
            && self.h.params == self.f.params
        {
            return true;
        }
        if self.h.is_constant() && self.f.is_constant() {
            let fv = self.f.eval(0.0);
            return (self.h.eval(0.0) - fv * fv).abs() <= tol;
        }
        let n = 10_000;
        let step = (range.1 - range.0) / n as f64;
        (0..=n).all(|i| {
            let y = range.0 + i as f64 * step;
            let fv = self.f.eval(y);
            (self.h.eval(y) - fv * fv).abs() <= tol
        })
    }
}

/// Samples the coefficients on a uniform grid over `check_range` and reports
/// every violated inequality with a witness. Violations are data, not
/// errors; the only error is a malformed input.
pub fn validate_assumption_a(
    cs: &CoefficientSet,
    check_range: (f64, f64),
    n_samples: usize,
) -> Result<ValidationReport> {
    if n_samples < 2 {
        return Err(CoreError::Config("n_samples must be at least 2".into()));
    }
    if !(check_range.1 > check_range.0) {
        return Err(CoreError::Config("check range must be nonempty".into()));
    }
    let k = &cs.constants;
    let mut report = ValidationReport::default();
    let step = (check_range.1 - check_range.0) / (n_samples - 1) as f64;

    let mut violate = |function: &str, inequality: &str, x: f64, lhs: f64, rhs: f64| {
        report.violations.push(Violation {
            function: function.to_string(),
            inequality: inequality.to_string(),
            x,
            lhs,
            rhs,
        });
    };

    for i in 0..n_samples {
        let x = check_range.0 + i as f64 * step;
        for (name, b) in [("b1", &cs.b1), ("b2", &cs.b2)] {
            let bx = b.eval(x);
            if x * bx > -k.c * x * x + k.c1 + ABS_SLACK {
                violate(name, "x*b(x) <= -c*x^2 + C1", x, x * bx, -k.c * x * x + k.c1);
            }
            if bx.abs() > k.c2 * (1.0 + x.abs()) + ABS_SLACK {
                violate(name, "|b(x)| <= C2*(1+|x|)", x, bx.abs(), k.c2 * (1.0 + x.abs()));
            }
        }
        for (name, s) in [("sigma1", &cs.sigma1), ("sigma2", &cs.sigma2)] {
            let sx = s.eval(x);
            if sx < k.sigma_low - ABS_SLACK {
                violate(name, "sigma_low <= sigma(x)", x, sx, k.sigma_low);
            }
            if sx > k.sigma_high + ABS_SLACK {
                violate(name, "sigma(x) <= sigma_high", x, sx, k.sigma_high);
            }
            let ds = s.derivative_or_fd(x);
            if ds.abs() > k.sigma_lip + DERIV_SLACK {
                violate(name, "|sigma'(x)| <= sigma_lip", x, ds.abs(), k.sigma_lip);
            }
        }
        let fx = cs.f.eval(x);
        if fx < k.f_low - ABS_SLACK {
            violate("f", "f_low <= f(x)", x, fx, k.f_low);
        }
        if fx > k.f_high + ABS_SLACK {
            violate("f", "f(x) <= f_high", x, fx, k.f_high);
        }
        let df = cs.f.derivative_or_fd(x);
        if df.abs() > k.f_lip + DERIV_SLACK {
            violate("f", "|f'(x)| <= f_lip", x, df.abs(), k.f_lip);
        }
        let hx = cs.h.eval(x);
        if hx < k.h_low - ABS_SLACK {
            violate("h", "h_low <= h(x)", x, hx, k.h_low);
        }
        if hx > k.h_high + ABS_SLACK {
            violate("h", "h(x) <= h_high", x, hx, k.h_high);
        }
    }
    Ok(report)
}

// Rounding slack so grid checks do not flag exact-boundary cases, and a
// looser one for finite-difference derivatives of tabulated data.
const ABS_SLACK: f64 = 1e-9;
const DERIV_SLACK: f64 = 1e-4;

#[cfg(test)]
mod tests {
    use super::*;

    fn constants() -> AssumptionConstants {
        AssumptionConstants {
            c: 1.0,
            c1: 0.1,
            c2: 1.1,
            sigma_low: 0.5,
            sigma_high: 1.5,
            sigma_lip: 0.5,
            f_low: 0.9,
            f_high: 1.1,
            h_low: 0.9,
            h_high: 1.1,
            f_lip: 0.1,
        }
    }

    fn set_with_b1(b1: ScalarFunction) -> CoefficientSet {
        CoefficientSet::new(
            b1,
            ScalarFunction::affine(-1.0, 0.0),
            ScalarFunction::constant(1.0),
            ScalarFunction::constant(1.0),
            ScalarFunction::constant(1.0),
            ScalarFunction::constant(1.0),
            constants(),
        )
        .unwrap()
    }

    #[test]
    fn dissipative_drift_passes() {
        // x*(-x) = -x^2 <= -x^2 + 0.1 everywhere
        let cs = set_with_b1(ScalarFunction::affine(-1.0, 0.0));
        let report = validate_assumption_a(&cs, (-10.0, 10.0), 4001).unwrap();
        assert!(report.is_empty(), "unexpected: {:?}", report.violations);
    }

    #[test]
    fn expansive_drift_reports_witness() {
        // x*x = x^2 violates -x^2 + 0.1 as soon as x^2 > 0.05
        let cs = set_with_b1(ScalarFunction::affine(1.0, 0.0));
        let report = validate_assumption_a(&cs, (-10.0, 10.0), 4001).unwrap();
        assert!(!report.is_empty());
        let v = report
            .violations
            .iter()
            .find(|v| v.inequality.contains("-c*x^2"))
            .expect("dissipativity violation present");
        assert!(v.x.abs() * v.x.abs() > 0.05);
    }

    /// Sine-modulated diffusion with tight declared bounds; the oracle here
    /// is dense sampling of sigma and its centered finite difference.
    #[test]
    fn sine_sigma_within_bounds() {
        let knots: Vec<(f64, f64)> = (0..=200_000)
            .map(|i| {
                let x = -10.0 + 20.0 * i as f64 / 200_000.0;
                (x, 1.0 + 0.5 * x.sin())
            })
            .collect();
        let sigma = ScalarFunction::tabulated(&knots).unwrap();
        let mut k = constants();
        k.sigma_low = 0.5;
        k.sigma_high = 1.5;
        k.sigma_lip = 0.5;
        let cs = CoefficientSet::new(
            ScalarFunction::affine(-1.0, 0.0),
            ScalarFunction::affine(-1.0, 0.0),
            sigma.clone(),
            sigma,
            ScalarFunction::constant(1.0),
            ScalarFunction::constant(1.0),
            k,
        )
        .unwrap();
        let report = validate_assumption_a(&cs, (-9.9, 9.9), 2001).unwrap();
        assert!(report.is_empty(), "violations: {:?}", report.violations);
    }

    /// Enlarging upper constants / shrinking lower ones never adds violations.
    #[test]
    fn validation_monotone_in_constants() {
        let cs = set_with_b1(ScalarFunction::affine(-1.0, 0.05));
        let base = validate_assumption_a(&cs, (-10.0, 10.0), 801).unwrap();
        let mut loose = cs.clone();
        loose.constants.c1 *= 2.0;
        loose.constants.c2 *= 2.0;
        loose.constants.sigma_high *= 2.0;
        loose.constants.f_high *= 2.0;
        loose.constants.h_high *= 2.0;
        loose.constants.c *= 0.5;
        loose.constants.sigma_low *= 0.5;
        loose.constants.f_low *= 0.5;
        loose.constants.h_low *= 0.5;
        let relaxed = validate_assumption_a(&loose, (-10.0, 10.0), 801).unwrap();
        assert!(relaxed.violations.len() <= base.violations.len());
    }

    #[test]
    fn h_equals_f_squared_detection() {
        let f = ScalarFunction::logistic(1.0, 2.0, 1.0, 0.0);
        let h = ScalarFunction::logistic_squared(1.0, 2.0, 1.0, 0.0);
        let mut k = constants();
        k.f_low = 1.0;
        k.f_high = 2.0;
        k.h_low = 1.0;
        k.h_high = 4.0;
        k.f_lip = 0.3;
        let cs = CoefficientSet::new(
            ScalarFunction::affine(-1.0, 0.0),
            ScalarFunction::affine(-1.0, 0.0),
            ScalarFunction::constant(1.0),
            ScalarFunction::constant(1.0),
            h,
            f,
            k,
        )
        .unwrap();
        assert!(cs.h_is_f_squared((-8.0, 8.0), 1e-9));
        let mut other = cs.clone();
        other.h = ScalarFunction::logistic(1.0, 4.0, 1.0, 0.0);
        assert!(!other.h_is_f_squared((-8.0, 8.0), 1e-9));
    }
}
