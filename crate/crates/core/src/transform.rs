//! The density transformation that moves the conditional term from the
//! X-diffusion to the Y-diffusion, and its inverse:
//!
//! ```text
//! (T p)(x,y)    = p(x,y) f^2(y)    G^{f^2;p}(x)
//! (T^-1 q)(x,y) = q(x,y) f^{-2}(y) G^{f^{-2};q}(x)
//! ```
//!
//! `T` preserves the first marginal and is a bijection on densities. The
//! direct product-form transform `p -> f^2 p / int f^2 p` is also here.
//!
//! Quadrature makes `T` only approximately mass-preserving on a grid, so
//! outputs are renormalized and the pre-normalization mass defect is
//! reported; defects above [`MASS_DEFECT_WARN`] indicate an under-resolved
//! grid.

use crate::coefficients::ScalarFunction;
use crate::condexp::{exact_g_from_grid, CondExpectationField, MASS_FLOOR};
use crate::error::{CoreError, Result};
use crate::grid2d::GridDensity2D;

/// Mass defects beyond this level should be surfaced to the user.
pub const MASS_DEFECT_WARN: f64 = 1e-6;

/// A transformed density plus the quadrature mass defect absorbed by
/// renormalization.
#[derive(Debug, Clone)]
pub struct Transformed {
    pub density: GridDensity2D,
    /// `|pre-normalization mass - 1|`.
    pub mass_defect: f64,
    /// The conditional-expectation field used by the transformation.
    pub field: CondExpectationField,
}

/// Applies `T`: multiply by `f^2(y) G^{f^2;p}(x)` and renormalize.
pub fn apply_t(
    p: &GridDensity2D,
    f: &ScalarFunction,
    f_bounds: (f64, f64),
) -> Result<Transformed> {
    check_not_degenerate(p)?;
    let psi_bounds = (f_bounds.0 * f_bounds.0, f_bounds.1 * f_bounds.1);
    let field = exact_g_from_grid(
        p,
        |y| {
            let v = f.eval(y);
            v * v
        },
        psi_bounds,
    );
    multiply_by_field(p, f, field, false)
}

/// Applies `T^{-1}`: multiply by `f^{-2}(y) G^{f^{-2};q}(x)` and renormalize.
pub fn apply_t_inverse(
    pt: &GridDensity2D,
    f: &ScalarFunction,
    f_bounds: (f64, f64),
) -> Result<Transformed> {
    check_not_degenerate(pt)?;
    let psi_bounds = (
        1.0 / (f_bounds.1 * f_bounds.1),
        1.0 / (f_bounds.0 * f_bounds.0),
    );
    let field = exact_g_from_grid(
        pt,
        |y| {
            let v = f.eval(y);
            1.0 / (v * v)
        },
        psi_bounds,
    );
    multiply_by_field(pt, f, field, true)
}

/// The product-form transform `p -> f^2 p / int f^2 p` (a single global
/// renormalization, no conditional field).
pub fn apply_independence_transform(
    p: &GridDensity2D,
    f: &ScalarFunction,
) -> Result<GridDensity2D> {
    let yg = p.y_grid().to_vec();
    let (density, _) = p.map_values(|_, j, v| {
        let fv = f.eval(yg[j]);
        v * fv * fv
    })?;
    Ok(density)
}

fn multiply_by_field(
    p: &GridDensity2D,
    f: &ScalarFunction,
    field: CondExpectationField,
    inverse: bool,
) -> Result<Transformed> {
    let yg = p.y_grid().to_vec();
    let fac_y: Vec<f64> = yg
        .iter()
        .map(|&y| {
            let v = f.eval(y);
            if inverse {
                1.0 / (v * v)
            } else {
                v * v
            }
        })
        .collect();
    let g = field.values.clone();
    let (density, raw_mass) = p.map_values(|i, j, v| v * fac_y[j] * g[i])?;
    Ok(Transformed {
        density,
        mass_defect: (raw_mass - 1.0).abs(),
        field,
    })
}

fn check_not_degenerate(p: &GridDensity2D) -> Result<()> {
    let marginal = p.x_marginal();
    let total: f64 = marginal.iter().sum();
    let zero_columns = marginal
        .iter()
        .filter(|&&m| m <= MASS_FLOOR * total)
        .count();
    let frac = zero_columns as f64 / marginal.len() as f64;
    if frac > 0.01 {
        return Err(CoreError::DegenerateDensity(format!(
            "{zero_columns} of {} x-columns carry no mass",
            marginal.len()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::ScalarFunction;
    use crate::condexp::exact_g_from_grid;
    use crate::grid2d::uniform_grid;
    use crate::stationary1d::build_stationary_density;
    use approx::assert_abs_diff_eq;
    use ndarray::Array2;

    fn normal_1d() -> crate::stationary1d::StationaryDensity1D {
        build_stationary_density(
            &ScalarFunction::affine(-1.0, 0.0),
            &ScalarFunction::constant(std::f64::consts::SQRT_2),
            (-6.0, 6.0),
            1025,
        )
        .unwrap()
    }

    fn product_density(n: usize) -> GridDensity2D {
        let m = normal_1d();
        GridDensity2D::product(
            &m,
            &m,
            uniform_grid(-6.0, 6.0, n),
            uniform_grid(-6.0, 6.0, n),
        )
        .unwrap()
    }

    fn skewed_density(n: usize) -> GridDensity2D {
        let xg = uniform_grid(-6.0, 6.0, n);
        let yg = uniform_grid(-6.0, 6.0, n);
        let vals = Array2::from_shape_fn((n, n), |(i, j)| {
            let (x, y) = (xg[i], yg[j]);
            let c = 0.5 * x.tanh();
            (-0.25 * x * x - (y - c) * (y - c)).exp()
        });
        GridDensity2D::from_unnormalized(xg, yg, vals).unwrap()
    }

    fn catalog_f() -> ScalarFunction {
        ScalarFunction::logistic(1.0, 2.0, 1.0, 0.0)
    }

    #[test]
    fn unit_f_is_identity() {
        let p = product_density(65);
        let out = apply_t(&p, &ScalarFunction::constant(1.0), (1.0, 1.0)).unwrap();
        assert!(out.density.l1_distance(&p).unwrap() < 1e-14);
        assert!(out.mass_defect < 1e-14);
        let out = apply_t_inverse(&p, &ScalarFunction::constant(1.0), (1.0, 1.0)).unwrap();
        assert!(out.density.l1_distance(&p).unwrap() < 1e-14);
    }

    /// On a product density, T p = m1(x) * f^2 m2 / int f^2 m2 (quadrature
    /// oracle for the right-hand side).
    #[test]
    fn product_density_transforms_in_closed_form() {
        let m = normal_1d();
        let p = product_density(257);
        let f = catalog_f();
        let out = apply_t(&p, &f, (1.0, 2.0)).unwrap();

        let yg = p.y_grid();
        let dy = p.dy();
        let f2m: Vec<f64> = yg
            .iter()
            .map(|&y| {
                let v = f.eval(y);
                v * v * m.density(y)
            })
            .collect();
        let mut z = 0.0;
        for j in 0..yg.len() - 1 {
            z += 0.5 * dy * (f2m[j] + f2m[j + 1]);
        }
        let mut worst = 0.0f64;
        for (i, &x) in p.x_grid().iter().enumerate() {
            for (j, _) in yg.iter().enumerate() {
                let oracle = m.density(x) * f2m[j] / z;
                worst = worst.max((out.density.values()[(i, j)] - oracle).abs());
            }
        }
        assert!(worst < 1e-8, "max deviation {worst}");
    }

    /// The x-marginal is preserved column by column.
    #[test]
    fn marginal_preservation() {
        let p = skewed_density(201);
        let f = catalog_f();
        let out = apply_t(&p, &f, (1.0, 2.0)).unwrap();
        let before = p.x_marginal();
        let after = out.density.x_marginal();
        for i in 0..before.len() {
            assert_abs_diff_eq!(before[i], after[i], epsilon = 1e-8);
        }
        assert!(out.mass_defect < MASS_DEFECT_WARN);
    }

    #[test]
    fn round_trip_both_ways() {
        let p = skewed_density(161);
        let f = catalog_f();
        let fwd = apply_t(&p, &f, (1.0, 2.0)).unwrap();
        let back = apply_t_inverse(&fwd.density, &f, (1.0, 2.0)).unwrap();
        assert!(back.density.l1_distance(&p).unwrap() < 1e-8);

        let inv = apply_t_inverse(&p, &f, (1.0, 2.0)).unwrap();
        let fwd2 = apply_t(&inv.density, &f, (1.0, 2.0)).unwrap();
        assert!(fwd2.density.l1_distance(&p).unwrap() < 1e-8);
    }

    /// G-composition identity: G^{psi;p} = G^{psi f^{-2};Tp} / G^{f^{-2};Tp}.
    #[test]
    fn g_composition_identity() {
        let p = skewed_density(161);
        let f = catalog_f();
        let psi = |y: f64| 1.0 + 0.5 * (0.7 * y).sin().powi(2);
        let lhs = exact_g_from_grid(&p, psi, (1.0, 1.5));

        let tp = apply_t(&p, &f, (1.0, 2.0)).unwrap().density;
        let num = exact_g_from_grid(
            &tp,
            |y| {
                let v = f.eval(y);
                psi(y) / (v * v)
            },
            (1.0 / 4.0, 1.5),
        );
        let den = exact_g_from_grid(
            &tp,
            |y| {
                let v = f.eval(y);
                1.0 / (v * v)
            },
            (1.0 / 4.0, 1.0),
        );
        for i in 0..lhs.values.len() {
            let ratio = num.values[i] / den.values[i];
            assert_abs_diff_eq!(lhs.values[i], ratio, epsilon = 1e-8);
        }
    }

    #[test]
    fn independence_transform_cases() {
        let p = product_density(129);
        // identity for f = 1
        let same = apply_independence_transform(&p, &ScalarFunction::constant(1.0)).unwrap();
        assert!(same.l1_distance(&p).unwrap() < 1e-14);

        // product stays product with the y-factor reweighted (quadrature oracle)
        let m = normal_1d();
        let f = catalog_f();
        let out = apply_independence_transform(&p, &f).unwrap();
        assert_abs_diff_eq!(out.mass(), 1.0, epsilon = 1e-12);
        let yg = p.y_grid();
        let dy = p.dy();
        let f2m: Vec<f64> = yg
            .iter()
            .map(|&y| f.eval(y).powi(2) * m.density(y))
            .collect();
        let mut z = 0.0;
        for j in 0..yg.len() - 1 {
            z += 0.5 * dy * (f2m[j] + f2m[j + 1]);
        }
        let mut worst = 0.0f64;
        for (i, &x) in p.x_grid().iter().enumerate() {
            for j in 0..yg.len() {
                let oracle = m.density(x) * f2m[j] / z;
                worst = worst.max((out.values()[(i, j)] - oracle).abs());
            }
        }
        assert!(worst < 1e-6, "max deviation {worst}");
    }

    #[test]
    fn degenerate_density_is_rejected() {
        // a density supported on a thin x-band: most columns carry no mass
        let n = 101;
        let xg = uniform_grid(-6.0, 6.0, n);
        let yg = uniform_grid(-6.0, 6.0, n);
        let vals = Array2::from_shape_fn((n, n), |(i, j)| {
            let (x, y) = (xg[i], yg[j]);
            if x.abs() < 0.2 {
                (-y * y).exp()
            } else {
                0.0
            }
        });
        let p = GridDensity2D::from_unnormalized(xg, yg, vals).unwrap();
        let err = apply_t(&p, &catalog_f(), (1.0, 2.0)).unwrap_err();
        assert!(matches!(err, CoreError::DegenerateDensity(_)));
    }
}
