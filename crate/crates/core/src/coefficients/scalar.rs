//! Parametric scalar function families used as SDE coefficients.
//!
//! Every coefficient of the two-dimensional system (drifts, diffusions and
//! the two coupling functions) is a `ScalarFunction`: a small closed family
//! of shapes that is cheap to evaluate, serializable, and — apart from the
//! tabulated kind — analytically differentiable.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Shape of a [`ScalarFunction`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FnKind {
    /// `slope * x + intercept`; params `[slope, intercept]`.
    AffineDrift,
    /// Cubic drift `-kappa (x - mu)^3` inside `|x - mu| <= radius`, extended
    /// with matching value and slope to exactly linear tails; params
    /// `[kappa, mu, radius]`.
    SaturatedLinearDrift,
    /// Constant; params `[c]`.
    Constant,
    /// Logistic-type bounded function
    /// `lo + (hi - lo) / (1 + exp(-slope (x - center)))`;
    /// params `[lo, hi, slope, center]`. Covers `a + b tanh(k x)` shapes.
    SmoothBounded,
    /// Square of the smooth-bounded function with the same params. Exists so
    /// a coupling pair `(f, h)` with `h = f^2` holds exactly, not up to
    /// interpolation error.
    SmoothBoundedSquared,
    /// Continuous piecewise-linear through knots, extended linearly beyond
    /// the first/last segment slope; params interleaved `[x0, y0, x1, y1, ..]`.
    PiecewiseSmooth,
    /// Linear interpolation through knots, clamped to boundary values outside
    /// the abscissa range; params interleaved. No analytic derivative.
    Tabulated,
}

/// A scalar function of one real variable, evaluable everywhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarFunction {
    pub kind: FnKind,
    pub params: Vec<f64>,
    /// True when an analytic derivative is available.
    pub has_derivative: bool,
}

impl ScalarFunction {
    pub fn affine(slope: f64, intercept: f64) -> Self {
        Self {
            kind: FnKind::AffineDrift,
            params: vec![slope, intercept],
            has_derivative: true,
        }
    }

    pub fn saturated_cubic(kappa: f64, mu: f64, radius: f64) -> Self {
        Self {
            kind: FnKind::SaturatedLinearDrift,
            params: vec![kappa, mu, radius],
            has_derivative: true,
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            kind: FnKind::Constant,
            params: vec![c],
            has_derivative: true,
        }
    }

    pub fn logistic(lo: f64, hi: f64, slope: f64, center: f64) -> Self {
        Self {
            kind: FnKind::SmoothBounded,
            params: vec![lo, hi, slope, center],
            has_derivative: true,
        }
    }

    pub fn logistic_squared(lo: f64, hi: f64, slope: f64, center: f64) -> Self {
        Self {
            kind: FnKind::SmoothBoundedSquared,
            params: vec![lo, hi, slope, center],
            has_derivative: true,
        }
    }

    pub fn piecewise_linear(knots: &[(f64, f64)]) -> Result<Self> {
        let f = Self {
            kind: FnKind::PiecewiseSmooth,
            params: interleave(knots),
            has_derivative: true,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn tabulated(knots: &[(f64, f64)]) -> Result<Self> {
        let f = Self {
            kind: FnKind::Tabulated,
            params: interleave(knots),
            has_derivative: false,
        };
        f.validate()?;
        Ok(f)
    }

    /// Loads a tabulated function from a two-column CSV `(x, value)` with a
    /// header row.
    pub fn tabulated_from_csv(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut knots = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if lineno == 0 || line.trim().is_empty() {
                continue; // header
            }
            let mut cols = line.split(',');
            let x = parse_field(cols.next(), path, lineno)?;
            let y = parse_field(cols.next(), path, lineno)?;
            knots.push((x, y));
        }
        Self::tabulated(&knots)
    }

    /// Checks the parameter vector is well-formed for the declared kind.
    pub fn validate(&self) -> Result<()> {
        let need = |n: usize| -> Result<()> {
            if self.params.len() != n {
                return Err(CoreError::Config(format!(
                    "{:?} expects {n} parameters, got {}",
                    self.kind,
                    self.params.len()
                )));
            }
            Ok(())
        };
        if self.params.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::Config(format!(
                "{:?} has non-finite parameters",
                self.kind
            )));
        }
        match self.kind {
            FnKind::AffineDrift => need(2),
            FnKind::SaturatedLinearDrift => {
                need(3)?;
                if self.params[2] <= 0.0 {
                    return Err(CoreError::Config(
                        "saturation radius must be positive".into(),
                    ));
                }
                Ok(())
            }
            FnKind::Constant => need(1),
            FnKind::SmoothBounded | FnKind::SmoothBoundedSquared => {
                need(4)?;
                if self.params[1] < self.params[0] {
                    return Err(CoreError::Config("logistic bounds require lo <= hi".into()));
                }
                Ok(())
            }
            FnKind::PiecewiseSmooth | FnKind::Tabulated => {
                if self.params.len() < 4 || self.params.len() % 2 != 0 {
                    return Err(CoreError::Config(
                        "knot list needs at least two (x, y) pairs".into(),
                    ));
                }
                for w in self.params.chunks_exact(2).collect::<Vec<_>>().windows(2) {
                    if w[1][0] <= w[0][0] {
                        return Err(CoreError::Config(
                            "knot abscissae must be strictly increasing".into(),
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    /// Evaluates the function at `x`.
    pub fn eval(&self, x: f64) -> f64 {
        match self.kind {
            FnKind::AffineDrift => self.params[0] * x + self.params[1],
            FnKind::SaturatedLinearDrift => {
                let (kappa, mu, r) = (self.params[0], self.params[1], self.params[2]);
                let u = x - mu;
                if u > r {
                    -kappa * r * r * r - 3.0 * kappa * r * r * (u - r)
                } else if u < -r {
                    kappa * r * r * r - 3.0 * kappa * r * r * (u + r)
                } else {
                    -kappa * u * u * u
                }
            }
            FnKind::Constant => self.params[0],
            FnKind::SmoothBounded => self.logistic_value(x),
            FnKind::SmoothBoundedSquared => {
                let v = self.logistic_value(x);
                v * v
            }
            FnKind::PiecewiseSmooth => self.interp(x, false),
            FnKind::Tabulated => self.interp(x, true),
        }
    }

    /// Analytic derivative at `x`; `None` when the kind has no analytic form.
    pub fn derivative(&self, x: f64) -> Option<f64> {
        match self.kind {
            FnKind::AffineDrift => Some(self.params[0]),
            FnKind::SaturatedLinearDrift => {
                let (kappa, mu, r) = (self.params[0], self.params[1], self.params[2]);
                let u = x - mu;
                if u.abs() > r {
                    Some(-3.0 * kappa * r * r)
                } else {
                    Some(-3.0 * kappa * u * u)
                }
            }
            FnKind::Constant => Some(0.0),
            FnKind::SmoothBounded => {
                let (lo, hi, slope, center) =
                    (self.params[0], self.params[1], self.params[2], self.params[3]);
                let s = sigmoid(slope * (x - center));
                Some((hi - lo) * slope * s * (1.0 - s))
            }
            FnKind::SmoothBoundedSquared => {
                let v = self.logistic_value(x);
                let (lo, hi, slope, center) =
                    (self.params[0], self.params[1], self.params[2], self.params[3]);
                let s = sigmoid(slope * (x - center));
                Some(2.0 * v * (hi - lo) * slope * s * (1.0 - s))
            }
            FnKind::PiecewiseSmooth => {
                let seg = self.segment(x);
                let (x0, y0) = (self.params[2 * seg], self.params[2 * seg + 1]);
                let (x1, y1) = (self.params[2 * (seg + 1)], self.params[2 * (seg + 1) + 1]);
                Some((y1 - y0) / (x1 - x0))
            }
            FnKind::Tabulated => None,
        }
    }

    /// Derivative by analytic formula when available, else a centered finite
    /// difference with step 1e-5.
    pub fn derivative_or_fd(&self, x: f64) -> f64 {
        match self.derivative(x) {
            Some(d) => d,
            None => {
                let h = 1e-5;
                (self.eval(x + h) - self.eval(x - h)) / (2.0 * h)
            }
        }
    }

    /// True for the `Constant` kind.
    pub fn is_constant(&self) -> bool {
        self.kind == FnKind::Constant
    }

    fn logistic_value(&self, x: f64) -> f64 {
        let (lo, hi, slope, center) =
            (self.params[0], self.params[1], self.params[2], self.params[3]);
        lo + (hi - lo) * sigmoid(slope * (x - center))
    }

    /// Index of the segment containing (or nearest to) `x`.
    fn segment(&self, x: f64) -> usize {
        let n = self.params.len() / 2;
        let xs = |i: usize| self.params[2 * i];
        if x <= xs(0) {
            return 0;
        }
        if x >= xs(n - 1) {
            return n - 2;
        }
        let mut lo = 0;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if xs(mid) <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    fn interp(&self, x: f64, clamp: bool) -> f64 {
        let n = self.params.len() / 2;
        if clamp {
            if x <= self.params[0] {
                return self.params[1];
            }
            if x >= self.params[2 * (n - 1)] {
                return self.params[2 * (n - 1) + 1];
            }
        }
        let seg = self.segment(x);
        let (x0, y0) = (self.params[2 * seg], self.params[2 * seg + 1]);
        let (x1, y1) = (self.params[2 * (seg + 1)], self.params[2 * (seg + 1) + 1]);
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn interleave(knots: &[(f64, f64)]) -> Vec<f64> {
    knots.iter().flat_map(|&(x, y)| [x, y]).collect()
}

fn parse_field(field: Option<&str>, path: &std::path::Path, lineno: usize) -> Result<f64> {
    field
        .map(str::trim)
        .and_then(|s| s.parse::<f64>().ok())
        .ok_or_else(|| {
            CoreError::Config(format!(
                "bad CSV row {} in {}",
                lineno + 1,
                path.display()
            ))
        })
}
