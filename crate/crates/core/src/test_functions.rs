//! Fixed dictionary of compactly supported test functions for weak-form
//! residuals.
//!
//! Each entry is a product of quartic bumps `B(u) = (1 - u^2)^2` on `|u| < 1`
//! in scaled coordinates. Weak stationarity quantifies over all smooth
//! compactly supported functions; a fixed 20-element dictionary makes the
//! residual reproducible. Centers and widths are relative to the grid
//! domain, chosen to cover center, axes, diagonals, shoulders, and two
//! anisotropic shapes.

/// A product-of-bumps test function with analytic derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpTestFunction {
    pub center_x: f64,
    pub center_y: f64,
    pub width_x: f64,
    pub width_y: f64,
}

fn bump(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        let t = 1.0 - u * u;
        t * t
    }
}

fn bump_d1(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        -4.0 * u * (1.0 - u * u)
    }
}

fn bump_d2(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        -4.0 + 12.0 * u * u
    }
}

impl BumpTestFunction {
    fn u(&self, x: f64) -> f64 {
        (x - self.center_x) / self.width_x
    }

    fn v(&self, y: f64) -> f64 {
        (y - self.center_y) / self.width_y
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        bump(self.u(x)) * bump(self.v(y))
    }

    pub fn dx(&self, x: f64, y: f64) -> f64 {
        bump_d1(self.u(x)) / self.width_x * bump(self.v(y))
    }

    pub fn dy(&self, x: f64, y: f64) -> f64 {
        bump(self.u(x)) * bump_d1(self.v(y)) / self.width_y
    }

    pub fn dxx(&self, x: f64, y: f64) -> f64 {
        bump_d2(self.u(x)) / (self.width_x * self.width_x) * bump(self.v(y))
    }

    pub fn dyy(&self, x: f64, y: f64) -> f64 {
        bump(self.u(x)) * bump_d2(self.v(y)) / (self.width_y * self.width_y)
    }
}

/// Relative (center_x, center_y, width_x, width_y) in units of the domain
/// half-width.
const RELATIVE_DICTIONARY: [(f64, f64, f64, f64); 20] = [
    (0.0, 0.0, 0.9, 0.9),
    (0.0, 0.0, 0.5, 0.5),
    (0.3, 0.0, 0.45, 0.6),
    (-0.3, 0.0, 0.45, 0.6),
    (0.0, 0.3, 0.6, 0.45),
    (0.0, -0.3, 0.6, 0.45),
    (0.3, 0.3, 0.4, 0.4),
    (0.3, -0.3, 0.4, 0.4),
    (-0.3, 0.3, 0.4, 0.4),
    (-0.3, -0.3, 0.4, 0.4),
    (0.55, 0.0, 0.35, 0.5),
    (-0.55, 0.0, 0.35, 0.5),
    (0.0, 0.55, 0.5, 0.35),
    (0.0, -0.55, 0.5, 0.35),
    (0.15, 0.15, 0.25, 0.25),
    (-0.15, -0.15, 0.25, 0.25),
    (0.15, -0.15, 0.25, 0.25),
    (-0.15, 0.15, 0.25, 0.25),
    (0.0, 0.0, 0.7, 0.35),
    (0.0, 0.0, 0.35, 0.7),
];

/// The 20-element dictionary scaled to the given domain.
pub fn dictionary(x_domain: (f64, f64), y_domain: (f64, f64)) -> Vec<BumpTestFunction> {
    let (mx, hx) = (
        0.5 * (x_domain.0 + x_domain.1),
        0.5 * (x_domain.1 - x_domain.0),
    );
    let (my, hy) = (
        0.5 * (y_domain.0 + y_domain.1),
        0.5 * (y_domain.1 - y_domain.0),
    );
    RELATIVE_DICTIONARY
        .iter()
        .map(|&(cx, cy, wx, wy)| BumpTestFunction {
            center_x: mx + cx * hx,
            center_y: my + cy * hy,
            width_x: wx * hx,
            width_y: wy * hy,
        })
        .collect()
}
