//! Cloud diagnostics: moments, correlation, histogram distances, and the
//! frozen-coefficient moment bound.
//!
//! Pearson correlation alone cannot certify independence, so the joint
//! histogram L1 distance to the product of the empirical marginals is used
//! alongside it.

use crate::coefficients::CoefficientSet;
use crate::condexp::ParticleCloud;
use crate::error::{CoreError, Result};
use crate::stationary1d::StationaryDensity1D;

/// Default number of bins per axis in joint-histogram comparisons. At
/// N = 1e5 the expected sampling contribution to the L1 distance is about
/// `0.8 * bins / sqrt(N)` which keeps 12 bins well inside the tolerances
/// used by the verification suite.
pub const HIST_BINS: usize = 12;

/// Weighted second moment `E[X^2 + Y^2]` and its Monte Carlo standard error.
pub fn second_moment(cloud: &ParticleCloud) -> (f64, f64) {
    let mut mean = 0.0;
    for i in 0..cloud.len() {
        mean += cloud.weights[i] * (cloud.xs[i] * cloud.xs[i] + cloud.ys[i] * cloud.ys[i]);
    }
    let mut var_w = 0.0;
    for i in 0..cloud.len() {
        let s = cloud.xs[i] * cloud.xs[i] + cloud.ys[i] * cloud.ys[i] - mean;
        var_w += cloud.weights[i] * cloud.weights[i] * s * s;
    }
    (mean, var_w.sqrt())
}

/// Weighted Pearson correlation of (X, Y).
pub fn pearson(cloud: &ParticleCloud) -> f64 {
    let (mut mx, mut my) = (0.0, 0.0);
    for i in 0..cloud.len() {
        mx += cloud.weights[i] * cloud.xs[i];
        my += cloud.weights[i] * cloud.ys[i];
    }
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for i in 0..cloud.len() {
        let dx = cloud.xs[i] - mx;
        let dy = cloud.ys[i] - my;
        vx += cloud.weights[i] * dx * dx;
        vy += cloud.weights[i] * dy * dy;
        cov += cloud.weights[i] * dx * dy;
    }
    if vx <= 0.0 || vy <= 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}

/// Joint-histogram masses of a cloud on `bins x bins` cells covering `range`.
fn histogram(cloud: &ParticleCloud, bins: usize, range: ((f64, f64), (f64, f64))) -> Vec<f64> {
    let ((x0, x1), (y0, y1)) = range;
    let mut h = vec![0.0f64; bins * bins];
    for k in 0..cloud.len() {
        let tx = ((cloud.xs[k] - x0) / (x1 - x0) * bins as f64).floor();
        let ty = ((cloud.ys[k] - y0) / (y1 - y0) * bins as f64).floor();
        let i = (tx.max(0.0) as usize).min(bins - 1);
        let j = (ty.max(0.0) as usize).min(bins - 1);
        h[i * bins + j] += cloud.weights[k];
    }
    h
}

/// Bounding box of a cloud, padded slightly.
pub fn cloud_range(cloud: &ParticleCloud) -> ((f64, f64), (f64, f64)) {
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..cloud.len() {
        x0 = x0.min(cloud.xs[i]);
        x1 = x1.max(cloud.xs[i]);
        y0 = y0.min(cloud.ys[i]);
        y1 = y1.max(cloud.ys[i]);
    }
    let pad = |a: f64, b: f64| {
        let w = (b - a).max(1e-9);
        (a - 1e-9 * w, b + 1e-9 * w)
    };
    (pad(x0, x1), pad(y0, y1))
}

/// L1 distance between the joint histogram and the product of its own
/// marginals: the independence defect.
pub fn independence_defect(cloud: &ParticleCloud, bins: usize) -> f64 {
    let range = cloud_range(cloud);
    let h = histogram(cloud, bins, range);
    let mut hx = vec![0.0f64; bins];
    let mut hy = vec![0.0f64; bins];
    for i in 0..bins {
        for j in 0..bins {
            hx[i] += h[i * bins + j];
            hy[j] += h[i * bins + j];
        }
    }
    let mut l1 = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            l1 += (h[i * bins + j] - hx[i] * hy[j]).abs();
        }
    }
    l1
}

/// L1 distance between the joint histograms of two clouds on a common range.
pub fn histogram_l1_between(a: &ParticleCloud, b: &ParticleCloud, bins: usize) -> f64 {
    let ((ax0, ax1), (ay0, ay1)) = cloud_range(a);
    let ((bx0, bx1), (by0, by1)) = cloud_range(b);
    let range = ((ax0.min(bx0), ax1.max(bx1)), (ay0.min(by0), ay1.max(by1)));
    let ha = histogram(a, bins, range);
    let hb = histogram(b, bins, range);
    ha.iter().zip(&hb).map(|(p, q)| (p - q).abs()).sum()
}

/// L1 distance between a cloud's joint histogram and the exact product
/// masses of two stationary densities (CDF differences per bin).
pub fn histogram_l1_vs_product(
    cloud: &ParticleCloud,
    m1: &StationaryDensity1D,
    m2: &StationaryDensity1D,
    bins: usize,
) -> f64 {
    let range = cloud_range(cloud);
    let ((x0, x1), (y0, y1)) = range;
    let h = histogram(cloud, bins, range);
    let mass_x: Vec<f64> = (0..bins)
        .map(|i| {
            let a = x0 + (x1 - x0) * i as f64 / bins as f64;
            let b = x0 + (x1 - x0) * (i + 1) as f64 / bins as f64;
            m1.cdf(b) - m1.cdf(a)
        })
        .collect();
    let mass_y: Vec<f64> = (0..bins)
        .map(|j| {
            let a = y0 + (y1 - y0) * j as f64 / bins as f64;
            let b = y0 + (y1 - y0) * (j + 1) as f64 / bins as f64;
            m2.cdf(b) - m2.cdf(a)
        })
        .collect();
    let mut l1 = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            l1 += (h[i * bins + j] - mass_x[i] * mass_y[j]).abs();
        }
    }
    l1
}

/// Histogram L1 distance between a cloud and a grid density, binned on the
/// density's grid window.
pub fn histogram_l1_vs_density(
    cloud: &ParticleCloud,
    density: &crate::grid2d::GridDensity2D,
    bins: usize,
) -> f64 {
    let x0 = density.x_grid()[0];
    let x1 = *density.x_grid().last().unwrap();
    let y0 = density.y_grid()[0];
    let y1 = *density.y_grid().last().unwrap();
    let h = histogram(cloud, bins, ((x0, x1), (y0, y1)));
    // exact bin masses of the grid density by cell-sum within each bin
    let mut masses = vec![0.0f64; bins * bins];
    let cell = density.dx() * density.dy();
    for (gi, &x) in density.x_grid().iter().enumerate() {
        let i = (((x - x0) / (x1 - x0) * bins as f64).floor().max(0.0) as usize).min(bins - 1);
        for (gj, &y) in density.y_grid().iter().enumerate() {
            let j =
                (((y - y0) / (y1 - y0) * bins as f64).floor().max(0.0) as usize).min(bins - 1);
            masses[i * bins + j] += density.values()[(gi, gj)] * cell;
        }
    }
    // mass the cloud holds outside the density window is unmatched by
    // construction; both vectors are sub-probability on the window
    h.iter().zip(&masses).map(|(p, q)| (p - q).abs()).sum()
}

/// Constants `(c_bar, C1_bar, C2_bar, alpha, Sigma)` bounding the frozen
/// coefficients of the coupled system, from the declared assumption
/// constants and the clamp bands of the conditional ratios.
#[derive(Debug, Clone, Copy)]
pub struct FrozenCoefficientBounds {
    pub c_bar: f64,
    pub c1_bar: f64,
    pub c2_bar: f64,
    /// `2 alpha <= sigma_bar^2`.
    pub alpha: f64,
    /// `sigma_bar^2 <= 2 Sigma`.
    pub sigma: f64,
}

impl FrozenCoefficientBounds {
    /// The stationary second-moment bound `(2 Sigma + C1_bar) / c_bar`.
    pub fn second_moment_bound(&self) -> f64 {
        (2.0 * self.sigma + self.c1_bar) / self.c_bar
    }
}

/// Coupling shape for bound assembly.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundMode {
    /// Conditional ratio `h / E[h|X]` in the X-drift, `f / sqrt(E[f^2|X])`
    /// in the X-diffusion.
    McKeanVlasov,
    /// Ratios `h f^{-2}` (X-drift) and `f^{-2}` (Y-drift and Y-diffusion).
    Transformed,
    /// No conditional terms.
    Decoupled,
}

pub fn frozen_bounds(cs: &CoefficientSet, mode: BoundMode) -> Result<FrozenCoefficientBounds> {
    let k = &cs.constants;
    if !cs.validated {
        return Err(CoreError::Config(
            "coefficient set must be validated before bound assembly".into(),
        ));
    }
    let f_ratio2 = (k.f_high / k.f_low) * (k.f_high / k.f_low);
    let (drift_ratio, diff_factor) = match mode {
        BoundMode::McKeanVlasov => (k.h_high / k.h_low, f_ratio2),
        BoundMode::Transformed => {
            let r1 = (k.h_high / k.h_low) * f_ratio2;
            let r2 = f_ratio2;
            (r1.max(r2), f_ratio2)
        }
        BoundMode::Decoupled => (1.0, 1.0),
    };
    Ok(FrozenCoefficientBounds {
        c_bar: k.c / drift_ratio,
        c1_bar: k.c1 * drift_ratio,
        c2_bar: k.c2 * drift_ratio,
        alpha: 0.5 * k.sigma_low * k.sigma_low / diff_factor,
        sigma: 0.5 * k.sigma_high * k.sigma_high * diff_factor,
    })
}
