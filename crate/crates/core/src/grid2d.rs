//! Nonnegative normalized densities on uniform rectangular grids.
//!
//! The carrier type for joint densities `p(x, y)` and their transforms.
//! Normalization is in the cell-mass sense: `sum(values) * dx * dy = 1`.

use ndarray::Array2;

use crate::error::{CoreError, Result};
use crate::stationary1d::StationaryDensity1D;

/// A density tabulated on a uniform rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity2D {
    x_grid: Vec<f64>,
    y_grid: Vec<f64>,
    /// Shape `[x_grid.len(), y_grid.len()]`, nonnegative.
    values: Array2<f64>,
}

/// Uniform grid of `n` nodes covering `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + i as f64 * h).collect()
}

fn check_uniform(grid: &[f64], name: &str) -> Result<f64> {
    if grid.len() < 4 {
        return Err(CoreError::Config(format!("{name} needs at least 4 nodes")));
    }
    let h = grid[1] - grid[0];
    if !(h > 0.0) {
        return Err(CoreError::Config(format!("{name} must be increasing")));
    }
    for w in grid.windows(2) {
        if ((w[1] - w[0]) - h).abs() > 1e-9 * h.abs().max(1.0) {
            return Err(CoreError::Config(format!("{name} must be uniform")));
        }
    }
    Ok(h)
}

impl GridDensity2D {
    /// Wraps already-normalized values; rejects negatives and mass defects
    /// beyond 1e-12.
    pub fn new(x_grid: Vec<f64>, y_grid: Vec<f64>, values: Array2<f64>) -> Result<Self> {
        let d = Self::from_unnormalized(x_grid, y_grid, values)?;
        Ok(d)
    }

    /// Wraps raw nonnegative values, rescaling to unit cell mass.
    pub fn from_unnormalized(
        x_grid: Vec<f64>,
        y_grid: Vec<f64>,
        values: Array2<f64>,
    ) -> Result<Self> {
        check_uniform(&x_grid, "x_grid")?;
        check_uniform(&y_grid, "y_grid")?;
        if values.shape() != [x_grid.len(), y_grid.len()] {
            return Err(CoreError::Config(format!(
                "values shape {:?} does not match grids ({}, {})",
                values.shape(),
                x_grid.len(),
                y_grid.len()
            )));
        }
        let mut min = f64::INFINITY;
        for &v in values.iter() {
            if !v.is_finite() {
                return Err(CoreError::Domain("non-finite density value".into()));
            }
            min = min.min(v);
        }
        if min < 0.0 {
            return Err(CoreError::Config(format!(
                "density values must be nonnegative; min = {min}"
            )));
        }
        let mut d = Self {
            x_grid,
            y_grid,
            values,
        };
        let mass = d.mass();
        if !(mass > 0.0) {
            return Err(CoreError::DegenerateDensity("zero total mass".into()));
        }
        d.values.mapv_inplace(|v| v / mass);
        Ok(d)
    }

    /// Product density `m1(x) m2(y)` from two stationary marginals tabulated
    /// on the given grids.
    pub fn product(
        m1: &StationaryDensity1D,
        m2: &StationaryDensity1D,
        x_grid: Vec<f64>,
        y_grid: Vec<f64>,
    ) -> Result<Self> {
        let vals = Array2::from_shape_fn((x_grid.len(), y_grid.len()), |(i, j)| {
            m1.density(x_grid[i]) * m2.density(y_grid[j])
        });
        Self::from_unnormalized(x_grid, y_grid, vals)
    }

    pub fn x_grid(&self) -> &[f64] {
        &self.x_grid
    }

    pub fn y_grid(&self) -> &[f64] {
        &self.y_grid
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn dx(&self) -> f64 {
        self.x_grid[1] - self.x_grid[0]
    }

    pub fn dy(&self) -> f64 {
        self.y_grid[1] - self.y_grid[0]
    }

    /// Cell-mass total: `sum(values) * dx * dy`.
    pub fn mass(&self) -> f64 {
        self.values.sum() * self.dx() * self.dy()
    }

    /// Rebuilds with transformed values (nonnegative), renormalizing; returns
    /// the pre-normalization mass for diagnostics.
    pub fn map_values(&self, f: impl Fn(usize, usize, f64) -> f64) -> Result<(Self, f64)> {
        let vals = Array2::from_shape_fn(self.values.raw_dim(), |(i, j)| {
            f(i, j, self.values[(i, j)])
        });
        let raw_mass = vals.sum() * self.dx() * self.dy();
        let d = Self::from_unnormalized(self.x_grid.clone(), self.y_grid.clone(), vals)?;
        Ok((d, raw_mass))
    }

    /// Trapezoid x-marginal (one value per x node).
    pub fn x_marginal(&self) -> Vec<f64> {
        let dy = self.dy();
        (0..self.x_grid.len())
            .map(|i| trapezoid_row(self.values.row(i).as_slice().unwrap(), dy))
            .collect()
    }

    /// Trapezoid y-marginal (one value per y node).
    pub fn y_marginal(&self) -> Vec<f64> {
        let dx = self.dx();
        (0..self.y_grid.len())
            .map(|j| {
                let col: Vec<f64> = (0..self.x_grid.len()).map(|i| self.values[(i, j)]).collect();
                trapezoid_row(&col, dx)
            })
            .collect()
    }

    /// `int |p - q| dx dy` for densities on identical grids.
    pub fn l1_distance(&self, other: &Self) -> Result<f64> {
        if self.x_grid != other.x_grid || self.y_grid != other.y_grid {
            return Err(CoreError::Config("grids differ".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.dx()
            * self.dy())
    }

    /// Bilinear interpolation at an arbitrary point, zero outside the grid.
    pub fn interp(&self, x: f64, y: f64) -> f64 {
        let (x0, xn) = (self.x_grid[0], *self.x_grid.last().unwrap());
        let (y0, yn) = (self.y_grid[0], *self.y_grid.last().unwrap());
        if x < x0 || x > xn || y < y0 || y > yn {
            return 0.0;
        }
        let tx = (x - x0) / self.dx();
        let ty = (y - y0) / self.dy();
        let i = (tx.floor() as usize).min(self.x_grid.len() - 2);
        let j = (ty.floor() as usize).min(self.y_grid.len() - 2);
        let (wx, wy) = (tx - i as f64, ty - j as f64);
        let v = &self.values;
        v[(i, j)] * (1.0 - wx) * (1.0 - wy)
            + v[(i + 1, j)] * wx * (1.0 - wy)
            + v[(i, j + 1)] * (1.0 - wx) * wy
            + v[(i + 1, j + 1)] * wx * wy
    }

    /// Resamples onto different grids by bilinear interpolation and
    /// renormalizes. Used by grid-refinement comparisons.
    pub fn resample(&self, x_grid: Vec<f64>, y_grid: Vec<f64>) -> Result<Self> {
        let vals = Array2::from_shape_fn((x_grid.len(), y_grid.len()), |(i, j)| {
            self.interp(x_grid[i], y_grid[j])
        });
        Self::from_unnormalized(x_grid, y_grid, vals)
    }

    /// CSV serialization: a dimension-declaring header then `(x, y, value)`
    /// triplets in row-major order.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# nx={} ny={} x0={:e} x1={:e} y0={:e} y1={:e}",
            self.x_grid.len(),
            self.y_grid.len(),
            self.x_grid[0],
            self.x_grid.last().unwrap(),
            self.y_grid[0],
            self.y_grid.last().unwrap()
        )?;
        writeln!(out, "x,y,value")?;
        for (i, &x) in self.x_grid.iter().enumerate() {
            for (j, &y) in self.y_grid.iter().enumerate() {
                writeln!(out, "{x:e},{y:e},{:e}", self.values[(i, j)])?;
            }
        }
        Ok(())
    }
}

fn trapezoid_row(row: &[f64], h: f64) -> f64 {
    let mut acc = 0.0;
    for w in row.windows(2) {
        acc += 0.5 * h * (w[0] + w[1]);
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ScalarFunction;
    use crate::stationary1d::build_stationary_density;
    use approx::assert_abs_diff_eq;

    fn gaussian_product(n: usize) -> GridDensity2D {
        let m = build_stationary_density(
            &ScalarFunction::affine(-1.0, 0.0),
            &ScalarFunction::constant(std::f64::consts::SQRT_2),
            (-6.0, 6.0),
            1025,
        )
        .unwrap();
        GridDensity2D::product(
            &m,
            &m,
            uniform_grid(-6.0, 6.0, n),
            uniform_grid(-6.0, 6.0, n),
        )
        .unwrap()
    }

    #[test]
    fn normalization_holds() {
        let p = gaussian_product(128);
        assert_abs_diff_eq!(p.mass(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn marginals_of_product_match_factors() {
        let p = gaussian_product(256);
        let mx = p.x_marginal();
        for (i, &x) in p.x_grid().iter().enumerate() {
            let exact = (-x * x / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
            assert_abs_diff_eq!(mx[i], exact, epsilon = 2e-4);
        }
    }

    #[test]
    fn l1_distance_of_identical_is_zero() {
        let p = gaussian_product(64);
        assert_eq!(p.l1_distance(&p).unwrap(), 0.0);
    }

    #[test]
    fn rejects_negative_values() {
        let mut v = Array2::zeros((8, 8));
        v[(0, 0)] = -1.0;
        v[(1, 1)] = 2.0;
        assert!(GridDensity2D::new(
            uniform_grid(0.0, 1.0, 8),
            uniform_grid(0.0, 1.0, 8),
            v
        )
        .is_err());
    }

    #[test]
    fn resample_preserves_shape() {
        let p = gaussian_product(128);
        let q = p
            .resample(uniform_grid(-6.0, 6.0, 64), uniform_grid(-6.0, 6.0, 64))
            .unwrap();
        assert_abs_diff_eq!(q.mass(), 1.0, epsilon = 1e-12);
        assert!(p.l1_distance(&p.resample(p.x_grid().to_vec(), p.y_grid().to_vec()).unwrap())
            .unwrap() < 1e-12);
        assert!(q.interp(0.0, 0.0) > 0.1);
    }
}
