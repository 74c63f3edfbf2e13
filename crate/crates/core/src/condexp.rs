//! Estimation of the conditional-expectation field
//!
//! ```text
//! G^{psi;p}(x) = int p(x,y) dy / int psi(y) p(x,y) dy  =  1 / E[psi(V) | U = x]
//! ```
//!
//! from a particle cloud (binning or Nadaraya-Watson kernel regression) or
//! exactly from a grid density by per-column quadrature, plus the mollifier
//! used to regularize the field before it enters a diffusion coefficient.
//!
//! When `c_psi <= psi <= C_psi`, every estimate is clamped into the analytic
//! band `[1/C_psi, 1/c_psi]`; the raw values are kept alongside for
//! diagnostics.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid2d::GridDensity2D;

/// Relative column-mass floor below which a conditional expectation is
/// numerically meaningless and the nearest valid column is used instead.
pub const MASS_FLOOR: f64 = 1e-12;

/// N weighted particles representing the empirical law of `(X_t, Y_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Nonnegative, summing to 1 within 1e-12.
    pub weights: Vec<f64>,
    pub time: f64,
}

/// Neumaier-compensated sum; the naive sum drifts by O(n eps) which defeats
/// the 1e-12 weight-normalization invariant at large N.
pub fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

impl ParticleCloud {
    pub fn new(xs: Vec<f64>, ys: Vec<f64>, weights: Vec<f64>, time: f64) -> Result<Self> {
        if xs.is_empty() || xs.len() != ys.len() || xs.len() != weights.len() {
            return Err(CoreError::Input(
                "xs, ys, weights must be nonempty and of equal length".into(),
            ));
        }
        let total = compensated_sum(&weights);
        if (total - 1.0).abs() > 1e-12 {
            return Err(CoreError::Input(format!(
                "weights must sum to 1, got {total}"
            )));
        }
        if weights.iter().any(|&w| w < 0.0) {
            return Err(CoreError::Input("negative weight".into()));
        }
        Ok(Self {
            xs,
            ys,
            weights,
            time,
        })
    }

    /// Uniformly weighted cloud.
    pub fn uniform(xs: Vec<f64>, ys: Vec<f64>, time: f64) -> Result<Self> {
        let n = xs.len();
        if n == 0 {
            return Err(CoreError::Input("empty cloud".into()));
        }
        let weights = vec![1.0 / n as f64; n];
        Self::new(xs, ys, weights, time)
    }

    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    pub fn x_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &x in &self.xs {
            lo = lo.min(x);
            hi = hi.max(x);
        }
        (lo, hi)
    }

    /// Writes the cloud as CSV `(particle_index, x, y, weight)`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "particle_index,x,y,weight")?;
        for i in 0..self.len() {
            writeln!(
                out,
                "{i},{:e},{:e},{:e}",
                self.xs[i], self.ys[i], self.weights[i]
            )?;
        }
        Ok(())
    }
}

/// How a [`CondExpectationField`] was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimationMethod {
    Binning,
    KernelRegression,
    ExactFromGrid,
}

/// An estimate of `x -> G^{psi;p}(x)` on a 1D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CondExpectationField {
    /// Strictly increasing evaluation nodes.
    pub grid: Vec<f64>,
    /// Clamped values, elementwise in `[1/C_psi, 1/c_psi]`.
    pub values: Vec<f64>,
    /// Pre-clamp values for diagnostics.
    pub raw_values: Vec<f64>,
    /// `(c_psi, C_psi)`.
    pub psi_bounds: (f64, f64),
    pub method: EstimationMethod,
}

impl CondExpectationField {
    fn from_raw(
        grid: Vec<f64>,
        raw_values: Vec<f64>,
        psi_bounds: (f64, f64),
        method: EstimationMethod,
    ) -> Self {
        let (lo, hi) = clamp_band(psi_bounds);
        let values = raw_values.iter().map(|v| v.clamp(lo, hi)).collect();
        Self {
            grid,
            values,
            raw_values,
            psi_bounds,
            method,
        }
    }

    /// Linear interpolation between nodes, constant beyond the ends.
    pub fn eval(&self, x: f64) -> f64 {
        let g = &self.grid;
        if x <= g[0] {
            return self.values[0];
        }
        let last = g.len() - 1;
        if x >= g[last] {
            return self.values[last];
        }
        let mut lo = 0;
        let mut hi = last;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if g[mid] <= x {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = (x - g[lo]) / (g[lo + 1] - g[lo]);
        self.values[lo] * (1.0 - w) + self.values[lo + 1] * w
    }

    /// Constant field on a grid (the exact answer for constant psi).
    pub fn constant(grid: Vec<f64>, value: f64, psi_bounds: (f64, f64)) -> Self {
        let n = grid.len();
        Self::from_raw(grid, vec![value; n], psi_bounds, EstimationMethod::ExactFromGrid)
    }

    /// Writes the field as two-column CSV `(x, G)`.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,G")?;
        for (x, g) in self.grid.iter().zip(&self.values) {
            writeln!(out, "{x:e},{g:e}")?;
        }
        Ok(())
    }
}

fn clamp_band(psi_bounds: (f64, f64)) -> (f64, f64) {
    (1.0 / psi_bounds.1, 1.0 / psi_bounds.0)
}

/// Histogram-style estimator: for each bin, `G = sum w / sum w psi(y)` over
/// the particles falling in it. `bins` are edges; bins with fewer than
/// `min_count` particles inherit the nearest populated bin's value.
pub fn estimate_g_binning(
    cloud: &ParticleCloud,
    psi: impl Fn(f64) -> f64,
    psi_bounds: (f64, f64),
    bins: &[f64],
    min_count: usize,
) -> Result<CondExpectationField> {
    if cloud.is_empty() {
        return Err(CoreError::Input("empty cloud".into()));
    }
    if bins.len() < 2 || bins.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CoreError::Input("bin edges must be strictly increasing".into()));
    }
    let (xmin, xmax) = cloud.x_range();
    if xmin < bins[0] || xmax > *bins.last().unwrap() {
        return Err(CoreError::Input(format!(
            "bins [{}, {}] do not cover the particle x-range [{xmin}, {xmax}]",
            bins[0],
            bins.last().unwrap()
        )));
    }
    let nb = bins.len() - 1;
    let mut sum_w = vec![0.0f64; nb];
    let mut sum_wpsi = vec![0.0f64; nb];
    let mut count = vec![0usize; nb];
    let lo = bins[0];
    let width = bins[nb] - lo;
    for i in 0..cloud.len() {
        let t = (cloud.xs[i] - lo) / width * nb as f64;
        let b = (t.floor() as usize).min(nb - 1);
        sum_w[b] += cloud.weights[i];
        sum_wpsi[b] += cloud.weights[i] * psi(cloud.ys[i]);
        count[b] += 1;
    }
    let populated: Vec<usize> = (0..nb).filter(|&b| count[b] >= min_count.max(1)).collect();
    if populated.is_empty() {
        return Err(CoreError::Estimation(format!(
            "all {nb} bins fall below min_count = {min_count}"
        )));
    }
    let mut raw = vec![0.0f64; nb];
    for b in 0..nb {
        let src = nearest_in(&populated, b);
        raw[b] = sum_w[src] / sum_wpsi[src];
    }
    let centers: Vec<f64> = (0..nb).map(|b| 0.5 * (bins[b] + bins[b + 1])).collect();
    Ok(CondExpectationField::from_raw(
        centers,
        raw,
        psi_bounds,
        EstimationMethod::Binning,
    ))
}

/// Nadaraya-Watson estimator with a Gaussian-shape kernel:
/// `G(x) = sum_i w_i K((x-x_i)/bw) / sum_i w_i psi(y_i) K((x-x_i)/bw)`.
pub fn estimate_g_kernel(
    cloud: &ParticleCloud,
    psi: impl Fn(f64) -> f64,
    psi_bounds: (f64, f64),
    grid: &[f64],
    bandwidth: f64,
) -> Result<CondExpectationField> {
    if cloud.is_empty() {
        return Err(CoreError::Input("empty cloud".into()));
    }
    if !(bandwidth > 0.0) {
        return Err(CoreError::Input(format!(
            "bandwidth must be positive, got {bandwidth}"
        )));
    }
    if grid.len() < 2 || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CoreError::Input("grid must be strictly increasing".into()));
    }
    let psis: Vec<f64> = cloud.ys.iter().map(|&y| psi(y)).collect();
    let mut raw = vec![f64::NAN; grid.len()];
    let mut valid: Vec<usize> = Vec::with_capacity(grid.len());
    for (g, &x) in grid.iter().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..cloud.len() {
            let u = (x - cloud.xs[i]) / bandwidth;
            if u.abs() > 8.0 {
                continue;
            }
            let k = (-0.5 * u * u).exp();
            let t = cloud.weights[i] * k;
            num += t;
            den += psis[i] * t;
        }
        if den > 0.0 {
            raw[g] = num / den;
            valid.push(g);
        }
    }
    if valid.is_empty() {
        return Err(CoreError::Estimation(
            "no grid node received kernel mass".into(),
        ));
    }
    for g in 0..grid.len() {
        if raw[g].is_nan() {
            raw[g] = raw[nearest_in(&valid, g)];
        }
    }
    Ok(CondExpectationField::from_raw(
        grid.to_vec(),
        raw,
        psi_bounds,
        EstimationMethod::KernelRegression,
    ))
}

/// Density-estimation rule-of-thumb bandwidth `1.06 std(xs) N^{-1/5}`.
pub fn rule_of_thumb_bandwidth(cloud: &ParticleCloud) -> f64 {
    let n = cloud.len() as f64;
    let mean: f64 = cloud
        .xs
        .iter()
        .zip(&cloud.weights)
        .map(|(x, w)| x * w)
        .sum();
    let var: f64 = cloud
        .xs
        .iter()
        .zip(&cloud.weights)
        .map(|(x, w)| w * (x - mean) * (x - mean))
        .sum();
    (1.06 * var.max(0.0).sqrt() * n.powf(-0.2)).max(1e-12)
}

/// Exact field from a grid density by per-column trapezoid quadrature.
/// Columns holding less than [`MASS_FLOOR`] of the total take the nearest
/// valid column's value.
pub fn exact_g_from_grid(
    p: &GridDensity2D,
    psi: impl Fn(f64) -> f64,
    psi_bounds: (f64, f64),
) -> CondExpectationField {
    let psis: Vec<f64> = p.y_grid().iter().map(|&y| psi(y)).collect();
    let dy = p.dy();
    let nx = p.x_grid().len();
    let mut num = vec![0.0f64; nx];
    let mut den = vec![0.0f64; nx];
    for i in 0..nx {
        let row = p.values().row(i);
        let row = row.as_slice().unwrap();
        let mut n_acc = 0.0;
        let mut d_acc = 0.0;
        for j in 0..row.len() - 1 {
            n_acc += 0.5 * dy * (row[j] + row[j + 1]);
            d_acc += 0.5 * dy * (psis[j] * row[j] + psis[j + 1] * row[j + 1]);
        }
        num[i] = n_acc;
        den[i] = d_acc;
    }
    let total: f64 = num.iter().sum();
    let floor = MASS_FLOOR * total;
    let valid: Vec<usize> = (0..nx).filter(|&i| num[i] > floor).collect();
    let mut raw = vec![0.0f64; nx];
    for i in 0..nx {
        let src = nearest_in(&valid, i);
        raw[i] = num[src] / den[src];
    }
    CondExpectationField::from_raw(
        p.x_grid().to_vec(),
        raw,
        psi_bounds,
        EstimationMethod::ExactFromGrid,
    )
}

/// Mollifier configuration: a nonnegative kernel supported in
/// `[-bandwidth, bandwidth]`, discretely normalized to unit mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierConfig {
    pub bandwidth: f64,
    pub kernel_shape: KernelShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    /// `exp(-1/(1-u^2))` bump, compactly supported and smooth.
    Bump,
    /// Triangular hat, the default (cheap, compact support).
    Triangular,
}

impl MollifierConfig {
    pub fn triangular(bandwidth: f64) -> Self {
        Self {
            bandwidth,
            kernel_shape: KernelShape::Triangular,
        }
    }

    /// Discrete kernel weights at spacing `h`, normalized so
    /// `sum(w) * h = 1`.
    pub fn discrete_weights(&self, h: f64) -> Result<Vec<f64>> {
        if self.bandwidth < h {
            return Err(CoreError::Input(format!(
                "mollifier bandwidth {} is below the grid spacing {h}",
                self.bandwidth
            )));
        }
        let half = (self.bandwidth / h).floor() as usize;
        let mut w: Vec<f64> = (-(half as isize)..=half as isize)
            .map(|k| {
                let u = k as f64 * h / self.bandwidth;
                match self.kernel_shape {
                    KernelShape::Triangular => (1.0 - u.abs()).max(0.0),
                    KernelShape::Bump => {
                        if u.abs() >= 1.0 {
                            0.0
                        } else {
                            (-1.0 / (1.0 - u * u)).exp()
                        }
                    }
                }
            })
            .collect();
        let total: f64 = w.iter().sum::<f64>() * h;
        if !(total > 0.0) {
            return Err(CoreError::Input("degenerate mollifier kernel".into()));
        }
        for v in w.iter_mut() {
            *v /= total;
        }
        Ok(w)
    }
}

/// Convolves the field with the mollifier kernel (edge replication). The
/// output stays inside the same clamp band.
pub fn mollify_g(field: &CondExpectationField, cfg: &MollifierConfig) -> Result<CondExpectationField> {
    let g = &field.grid;
    let h = g[1] - g[0];
    for w in g.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h {
            return Err(CoreError::Input("mollification needs a uniform grid".into()));
        }
    }
    let weights = cfg.discrete_weights(h)?;
    let half = weights.len() / 2;
    let n = g.len();
    let raw: Vec<f64> = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, &wk) in weights.iter().enumerate() {
                let off = k as isize - half as isize;
                let j = (i as isize + off).clamp(0, n as isize - 1) as usize;
                acc += wk * h * field.values[j];
            }
            acc
        })
        .collect();
    Ok(CondExpectationField::from_raw(
        g.clone(),
        raw,
        field.psi_bounds,
        field.method,
    ))
}

fn nearest_in(sorted: &[usize], target: usize) -> usize {
    debug_assert!(!sorted.is_empty());
    let pos = sorted.partition_point(|&v| v < target);
    if pos == 0 {
        return sorted[0];
    }
    if pos == sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let (below, above) = (sorted[pos - 1], sorted[pos]);
    if target - below <= above - target {
        below
    } else {
        above
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ScalarFunction;
    use crate::grid2d::{uniform_grid, GridDensity2D};
    use crate::stationary1d::build_stationary_density;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn standard_normal() -> crate::stationary1d::StationaryDensity1D {
        build_stationary_density(
            &ScalarFunction::affine(-1.0, 0.0),
            &ScalarFunction::constant(std::f64::consts::SQRT_2),
            (-6.0, 6.0),
            1025,
        )
        .unwrap()
    }

    #[test]
    fn binning_constant_psi_gives_half() {
        let cloud = ParticleCloud::uniform(vec![0.0, 0.3, 0.9], vec![1.0, -2.0, 5.0], 0.0).unwrap();
        let field =
            estimate_g_binning(&cloud, |_| 2.0, (2.0, 2.0), &[-0.5, 0.5, 1.5], 1).unwrap();
        for v in &field.values {
            assert_eq!(*v, 0.5);
        }
    }

    /// Hand-summed oracle for the defining ratio on a three-particle cloud.
    #[test]
    fn binning_hand_computed_ratio() {
        let cloud =
            ParticleCloud::uniform(vec![0.0, 0.0, 1.0], vec![1.0, 2.0, 1.0], 0.0).unwrap();
        let field = estimate_g_binning(&cloud, |y| y, (0.5, 3.0), &[-0.5, 0.5, 1.5], 1).unwrap();
        // bin at 0: (w1+w2)/(w1*1 + w2*2) = 2/3 ; bin at 1: w3/(w3*1) = 1
        assert_abs_diff_eq!(field.values[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(field.values[1], 1.0, epsilon = 1e-14);
    }

    /// On a product cloud the field is flat; its level is 1/int f^2 m2 dy
    /// (quadrature oracle).
    #[test]
    fn binning_product_cloud_is_constant() {
        let m = standard_normal();
        let f = ScalarFunction::logistic(1.0, 2.0, 1.0, 0.0);
        let n = 200_000;
        let xs = m.sample(n, 11);
        let ys = m.sample(n, 12);
        let cloud = ParticleCloud::uniform(xs, ys, 0.0).unwrap();
        let (lo, hi) = cloud.x_range();
        let edges = uniform_grid(lo - 1e-9, hi + 1e-9, 17);
        let field =
            estimate_g_binning(&cloud, |y| f.eval(y).powi(2), (1.0, 4.0), &edges, 50).unwrap();

        // oracle: quadrature of int f^2 m2
        let g = m.grid();
        let h = m.grid_step();
        let mut int_f2m = 0.0;
        for i in 0..g.len() - 1 {
            let a = f.eval(g[i]).powi(2) * m.values()[i];
            let b = f.eval(g[i + 1]).powi(2) * m.values()[i + 1];
            int_f2m += 0.5 * h * (a + b);
        }
        let limit = 1.0 / int_f2m;
        // interior bins only; tail bins hold few particles
        for b in 2..field.values.len() - 2 {
            assert!(
                (field.values[b] - limit).abs() < 0.05,
                "bin {b}: {} vs {limit}",
                field.values[b]
            );
        }
    }

    #[test]
    fn binning_all_bins_under_min_count_errors() {
        let cloud = ParticleCloud::uniform(vec![0.0], vec![0.0], 0.0).unwrap();
        let err = estimate_g_binning(&cloud, |_| 1.0, (1.0, 1.0), &[-1.0, 1.0], 5).unwrap_err();
        assert!(matches!(err, CoreError::Estimation(_)));
    }

    #[test]
    fn kernel_constant_psi_is_inverse_constant() {
        let cloud =
            ParticleCloud::uniform(vec![-1.0, 0.0, 2.0], vec![3.0, -1.0, 0.5], 0.0).unwrap();
        let grid = uniform_grid(-2.0, 3.0, 21);
        let field = estimate_g_kernel(&cloud, |_| 2.0, (2.0, 2.0), &grid, 0.7).unwrap();
        for v in &field.values {
            assert_eq!(*v, 0.5);
        }
        let field = estimate_g_kernel(&cloud, |_| 1.7, (1.7, 1.7), &grid, 0.7).unwrap();
        for v in &field.values {
            assert_abs_diff_eq!(*v, 1.0 / 1.7, epsilon = 1e-14);
        }
    }

    #[test]
    fn kernel_single_particle() {
        let cloud = ParticleCloud::uniform(vec![0.5], vec![2.0], 0.0).unwrap();
        let grid = uniform_grid(-3.0, 3.0, 13);
        let field =
            estimate_g_kernel(&cloud, |y| y * y, (0.25, 16.0), &grid, 0.5).unwrap();
        for v in &field.values {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn kernel_rejects_bad_bandwidth() {
        let cloud = ParticleCloud::uniform(vec![0.0], vec![0.0], 0.0).unwrap();
        assert!(estimate_g_kernel(&cloud, |_| 1.0, (1.0, 1.0), &[0.0, 1.0], 0.0).is_err());
    }

    /// Kernel estimate against the exact grid field on 1e5 product samples.
    #[test]
    fn kernel_close_to_exact_grid_field() {
        let m = standard_normal();
        let f = ScalarFunction::logistic(1.0, 2.0, 1.0, 0.0);
        let psi = |y: f64| {
            let v = f.eval(y);
            v * v
        };
        let p = GridDensity2D::product(
            &m,
            &m,
            uniform_grid(-6.0, 6.0, 161),
            uniform_grid(-6.0, 6.0, 161),
        )
        .unwrap();
        let exact = exact_g_from_grid(&p, psi, (1.0, 4.0));

        let n = 100_000;
        let cloud =
            ParticleCloud::uniform(m.sample(n, 21), m.sample(n, 22), 0.0).unwrap();
        let bw = rule_of_thumb_bandwidth(&cloud);
        let grid = uniform_grid(-3.0, 3.0, 41);
        let est = estimate_g_kernel(&cloud, psi, (1.0, 4.0), &grid, bw).unwrap();
        let mut worst = 0.0f64;
        for (i, &x) in grid.iter().enumerate() {
            worst = worst.max((est.values[i] - exact.eval(x)).abs());
        }
        assert!(worst < 0.05, "max deviation {worst}");
    }

    #[test]
    fn exact_grid_product_is_constant_in_x() {
        let m = standard_normal();
        let p = GridDensity2D::product(
            &m,
            &m,
            uniform_grid(-6.0, 6.0, 129),
            uniform_grid(-6.0, 6.0, 513),
        )
        .unwrap();
        let psi = |y: f64| (0.3 * y).exp();
        let field = exact_g_from_grid(&p, psi, (1e-2, 1e2));
        // quadrature of int psi m2 on the same y grid
        let yg = p.y_grid();
        let dy = p.dy();
        let mut acc = 0.0;
        for j in 0..yg.len() - 1 {
            acc += 0.5
                * dy
                * (psi(yg[j]) * m.density(yg[j]) + psi(yg[j + 1]) * m.density(yg[j + 1]));
        }
        let expected = 1.0 / acc;
        for v in &field.values {
            assert_abs_diff_eq!(*v, expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn exact_grid_psi_one_is_identically_one() {
        let m = standard_normal();
        let p = GridDensity2D::product(
            &m,
            &m,
            uniform_grid(-6.0, 6.0, 65),
            uniform_grid(-6.0, 6.0, 65),
        )
        .unwrap();
        let field = exact_g_from_grid(&p, |_| 1.0, (1.0, 1.0));
        for v in &field.values {
            assert_eq!(*v, 1.0);
        }
    }

    /// Refined-grid quadrature oracle for a non-product density
    /// p ~ exp(-x^2 - (y - 0.5 sign(x))^2), psi = e^y.
    #[test]
    fn exact_grid_matches_refined_quadrature() {
        let dens = |x: f64, y: f64| {
            let s = if x >= 0.0 { 0.5 } else { -0.5 };
            (-x * x - (y - s) * (y - s)).exp()
        };
        let xg = uniform_grid(-4.0, 4.0, 129);
        let yg = uniform_grid(-6.0, 6.0, 129);
        let vals = Array2::from_shape_fn((xg.len(), yg.len()), |(i, j)| dens(xg[i], yg[j]));
        let p = GridDensity2D::from_unnormalized(xg.clone(), yg.clone(), vals).unwrap();
        let psi = |y: f64| y.exp();
        let field = exact_g_from_grid(&p, psi, (1e-6, 1e6));

        // oracle: 10x finer y-resolution trapezoid of the analytic density
        let fine = uniform_grid(-6.0, 6.0, 1281);
        let dyf = fine[1] - fine[0];
        for (i, &x) in xg.iter().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for w in fine.windows(2) {
                num += 0.5 * dyf * (dens(x, w[0]) + dens(x, w[1]));
                den += 0.5 * dyf * (psi(w[0]) * dens(x, w[0]) + psi(w[1]) * dens(x, w[1]));
            }
            let oracle = num / den;
            assert!(
                (field.values[i] - oracle).abs() < 1e-6,
                "x = {x}: {} vs {oracle}",
                field.values[i]
            );
        }
    }

    #[test]
    fn mollify_preserves_constants() {
        let grid = uniform_grid(-1.0, 1.0, 41);
        let field = CondExpectationField::constant(grid, 0.7, (1.0, 2.0));
        let out = mollify_g(&field, &MollifierConfig::triangular(0.25)).unwrap();
        for v in &out.values {
            assert_abs_diff_eq!(*v, 0.7, epsilon = 1e-13);
        }
    }

    /// Slope of a mollified step obeys the kernel derivative bound
    /// (1/bw) * sup|field| * int|kappa'| with int|kappa'| = 2 for the
    /// triangular unit kernel.
    #[test]
    fn mollified_step_slope_bound() {
        let grid = uniform_grid(-2.0, 2.0, 401);
        let h = grid[1] - grid[0];
        let raw: Vec<f64> = grid.iter().map(|&x| if x < 0.0 { 1.0 } else { 2.0 }).collect();
        let field = CondExpectationField::from_raw(
            grid.clone(),
            raw,
            (0.5, 1.0),
            EstimationMethod::ExactFromGrid,
        );
        let bw = 0.3;
        let out = mollify_g(&field, &MollifierConfig::triangular(bw)).unwrap();
        let bound = (1.0 / bw) * 2.0 * 2.0; // n * sup|field| * int|kappa'|
        let mut max_slope = 0.0f64;
        for i in 0..out.values.len() - 1 {
            max_slope = max_slope.max((out.values[i + 1] - out.values[i]).abs() / h);
        }
        assert!(
            max_slope <= bound + 1e-6,
            "slope {max_slope} exceeds bound {bound}"
        );
        assert!(max_slope > 0.0);
    }

    /// As the bandwidth shrinks toward the spacing, mollification becomes
    /// the identity on smooth fields.
    #[test]
    fn mollify_small_bandwidth_limit() {
        let grid = uniform_grid(-2.0, 2.0, 401);
        let h = grid[1] - grid[0];
        let raw: Vec<f64> = grid.iter().map(|&x| 1.0 + 0.3 * (x).tanh()).collect();
        let field = CondExpectationField::from_raw(
            grid,
            raw,
            (0.1, 10.0),
            EstimationMethod::ExactFromGrid,
        );
        let out = mollify_g(&field, &MollifierConfig::triangular(h * 1.5)).unwrap();
        for (a, b) in out.values.iter().zip(&field.values) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn mollify_rejects_sub_spacing_bandwidth() {
        let grid = uniform_grid(-1.0, 1.0, 11);
        let field = CondExpectationField::constant(grid, 1.0, (1.0, 1.0));
        assert!(mollify_g(&field, &MollifierConfig::triangular(0.01)).is_err());
    }

    #[test]
    fn estimates_respect_clamp_band() {
        // psi declared within [1, 4] although the data would say otherwise:
        // the clamp band [1/4, 1] must hold elementwise
        let cloud =
            ParticleCloud::uniform(vec![0.0, 1.0], vec![10.0, -10.0], 0.0).unwrap();
        let field =
            estimate_g_binning(&cloud, |y| y.abs().max(0.01), (1.0, 4.0), &[-0.5, 1.5], 1)
                .unwrap();
        for v in &field.values {
            assert!(*v >= 0.25 - 1e-15 && *v <= 1.0 + 1e-15);
        }
    }
}
