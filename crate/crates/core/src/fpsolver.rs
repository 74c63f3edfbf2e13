//! Finite-difference solver for the linear stationary Fokker-Planck equation
//! with frozen conditional-expectation fields, and the Picard iteration on
//! densities built from it.
//!
//! The transformed stationary equation solved here reads, in weak form,
//!
//! ```text
//! 0 = int [ 1/2 s1^2(x) phi_xx + 1/2 s2^2(y) f^{-2}(y) G2(x) phi_yy
//!           + b1(x) (h f^{-2})(y) G1(x) phi_x + b2(y) f^{-2}(y) G2(x) phi_y ] q dx dy
//! ```
//!
//! with `G1 = G^{h f^{-2};q}` and `G2 = G^{f^{-2};q}`. With the fields
//! frozen, the strong form is discretized in conservative flux form with
//! zero-flux boundaries; faces where the cell Peclet number exceeds 2 fall
//! back to upwind weighting so the discrete operator stays a generator
//! matrix (nonnegative off-diagonal, columns summing to zero). The
//! stationary density is its null vector, computed by shifted inverse power
//! iteration with a sparse LU of the (adjoint) operator.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};
use ndarray::Array2;
use serde::Serialize;

use crate::coefficients::CoefficientSet;
use crate::condexp::{exact_g_from_grid, mollify_g, CondExpectationField, MollifierConfig};
use crate::error::{CoreError, Result};
use crate::grid2d::GridDensity2D;
use crate::test_functions::{dictionary, BumpTestFunction};

/// Negative null-vector entries beyond this magnitude indicate a broken
/// discretization; entries inside `[-NEGATIVE_CLIP, 0)` are clipped.
pub const NEGATIVE_CLIP: f64 = 1e-10;

static FAER_SEQ: std::sync::Once = std::sync::Once::new();

/// Inverse-iteration parameters for the null-vector solve.
const NULL_MAX_ITERS: usize = 32;
const NULL_RESIDUAL_TOL: f64 = 1e-10;

/// Which stationary equation a weak residual refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeakEquation {
    /// The untransformed equation (conditional term in the X-diffusion).
    Original,
    /// The transformed equation (conditional term in the Y-diffusion).
    Transformed,
}

/// Fisher information, second moment and marginal floor of a grid density —
/// the functionals bounding the fixed-point set.
#[derive(Debug, Clone, Serialize)]
pub struct KDiagnostics {
    /// `int |grad q|^2 / q`, centered differences, `grad q / q = 0` below
    /// the support floor.
    pub fisher_information: f64,
    /// `int (x^2 + y^2) q`.
    pub second_moment: f64,
    /// Minimum of the x-marginal over `[-R, R]` for each listed radius.
    pub marginal_floor: Vec<(f64, f64)>,
}

/// Outcome of a Picard run.
#[derive(Debug, Clone, Serialize)]
pub struct PicardReport {
    /// Number of linear solves performed.
    pub iterations: usize,
    /// `||q_{k+1} - q_k||_{L1}` per iteration (may oscillate).
    pub l1_deltas: Vec<f64>,
    /// Max-abs weak residual of the transformed equation at the final
    /// density.
    pub final_residual: f64,
    /// True iff the last delta fell below the tolerance.
    pub converged: bool,
    /// Relaxation factor in effect at the end.
    pub damping: f64,
}

/// Solves the linearized stationary equation for frozen fields `g_drift =
/// G^{h f^{-2};q}` and `g_diff = G^{f^{-2};q}` on the given uniform grids.
pub fn solve_linear_fp(
    cs: &CoefficientSet,
    g_drift: &CondExpectationField,
    g_diff: &CondExpectationField,
    x_grid: &[f64],
    y_grid: &[f64],
) -> Result<GridDensity2D> {
    FAER_SEQ.call_once(|| faer::set_global_parallelism(faer::Par::Seq));
    let nx = x_grid.len();
    let ny = y_grid.len();
    if nx < 4 || ny < 4 {
        return Err(CoreError::Config("solver grid too small".into()));
    }
    for field in [g_drift, g_diff] {
        if field.values.iter().any(|&v| !(v > 0.0)) {
            return Err(CoreError::Config(
                "conditional fields must be positive on the grid".into(),
            ));
        }
    }
    let hx = x_grid[1] - x_grid[0];
    let hy = y_grid[1] - y_grid[0];
    let n = nx * ny;
    let idx = |i: usize, j: usize| i * ny + j;

    // per-axis coefficient tables
    let a_x: Vec<f64> = x_grid
        .iter()
        .map(|&x| {
            let s = cs.sigma1.eval(x);
            0.5 * s * s
        })
        .collect();
    let f_inv2: Vec<f64> = y_grid
        .iter()
        .map(|&y| {
            let v = cs.f.eval(y);
            1.0 / (v * v)
        })
        .collect();
    let a_y_base: Vec<f64> = y_grid
        .iter()
        .zip(&f_inv2)
        .map(|(&y, &fi)| {
            let s = cs.sigma2.eval(y);
            0.5 * s * s * fi
        })
        .collect();
    let hf2_y: Vec<f64> = y_grid
        .iter()
        .zip(&f_inv2)
        .map(|(&y, &fi)| cs.h.eval(y) * fi)
        .collect();
    let g2_node: Vec<f64> = x_grid.iter().map(|&x| g_diff.eval(x)).collect();
    let g1_face: Vec<f64> = (0..nx - 1)
        .map(|i| g_drift.eval(0.5 * (x_grid[i] + x_grid[i + 1])))
        .collect();

    let mut triplets: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(4 * n);
    let mut diag = vec![0.0f64; n];

    // x-direction faces between (i, j) and (i+1, j)
    for i in 0..nx - 1 {
        let xf = 0.5 * (x_grid[i] + x_grid[i + 1]);
        let b1f = cs.b1.eval(xf);
        for j in 0..ny {
            let b = b1f * hf2_y[j] * g1_face[i];
            let (rho_l, rho_r) = face_rates(a_x[i], a_x[i + 1], b, hx);
            let (col_l, col_r) = (idx(i, j), idx(i + 1, j));
            triplets.push(Triplet::new(col_l, col_r, rho_r / hx));
            triplets.push(Triplet::new(col_r, col_l, rho_l / hx));
            diag[col_l] -= rho_l / hx;
            diag[col_r] -= rho_r / hx;
        }
    }
    // y-direction faces between (i, j) and (i, j+1)
    for j in 0..ny - 1 {
        let yf = 0.5 * (y_grid[j] + y_grid[j + 1]);
        let fv = cs.f.eval(yf);
        let bf = cs.b2.eval(yf) / (fv * fv);
        for i in 0..nx {
            let b = bf * g2_node[i];
            let a_l = a_y_base[j] * g2_node[i];
            let a_r = a_y_base[j + 1] * g2_node[i];
            let (rho_l, rho_r) = face_rates(a_l, a_r, b, hy);
            let (col_l, col_r) = (idx(i, j), idx(i, j + 1));
            triplets.push(Triplet::new(col_l, col_r, rho_r / hy));
            triplets.push(Triplet::new(col_r, col_l, rho_l / hy));
            diag[col_l] -= rho_l / hy;
            diag[col_r] -= rho_r / hy;
        }
    }
    let diag_scale = diag.iter().fold(0.0f64, |a, &d| a.max(d.abs()));
    let shift = 1e-10 * diag_scale;
    for (c, &d) in diag.iter().enumerate() {
        triplets.push(Triplet::new(c, c, d - shift));
    }

    let matrix = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| CoreError::Solver(format!("sparse assembly failed: {e:?}")))?;
    let lu = matrix
        .sp_lu()
        .map_err(|e| CoreError::Solver(format!("sparse LU failed: {e:?}")))?;

    // inverse power iteration with shift 0 (the tiny diagonal shift above
    // makes the factorization well-defined)
    let mut q = Mat::<f64>::from_fn(n, 1, |_, _| 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    let mut converged = false;
    for _ in 0..NULL_MAX_ITERS {
        let z = lu.solve(&q);
        let total: f64 = z.col_as_slice(0).iter().sum();
        if total == 0.0 || !total.is_finite() {
            return Err(CoreError::Solver("inverse iteration degenerated".into()));
        }
        for k in 0..n {
            q[(k, 0)] = z[(k, 0)] / total;
        }
        residual = operator_residual(&matrix, &q, shift) / diag_scale;
        if residual < NULL_RESIDUAL_TOL {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(CoreError::Solver(format!(
            "null-vector iteration did not converge in {NULL_MAX_ITERS} iterations; relative residual = {residual:e}"
        )));
    }

    let cell = hx * hy;
    let mut vals = Array2::zeros((nx, ny));
    let mut worst_negative = 0.0f64;
    for i in 0..nx {
        for j in 0..ny {
            let v = q[(idx(i, j), 0)] / cell;
            if v < 0.0 {
                worst_negative = worst_negative.min(v);
            }
            vals[(i, j)] = v.max(0.0);
        }
    }
    if worst_negative < -NEGATIVE_CLIP {
        return Err(CoreError::Discretization(format!(
            "null vector has negative entries down to {worst_negative:e}"
        )));
    }
    GridDensity2D::from_unnormalized(x_grid.to_vec(), y_grid.to_vec(), vals)
}

/// Central face rates, switched to upwind where the local Peclet number
/// would make a rate negative.
fn face_rates(a_l: f64, a_r: f64, b: f64, h: f64) -> (f64, f64) {
    let rho_l = a_l / h + 0.5 * b;
    let rho_r = a_r / h - 0.5 * b;
    if rho_r < 0.0 {
        // strong +direction advection
        (a_l / h + b, a_r / h)
    } else if rho_l < 0.0 {
        // strong -direction advection
        (a_l / h, a_r / h - b)
    } else {
        (rho_l, rho_r)
    }
}

fn operator_residual(m: &SparseColMat<usize, f64>, q: &Mat<f64>, shift: f64) -> f64 {
    let n = q.nrows();
    let mut r = vec![0.0f64; n];
    let sym = m.symbolic();
    for c in 0..n {
        let qc = q[(c, 0)];
        if qc == 0.0 {
            continue;
        }
        let rows = sym.row_idx_of_col_raw(c);
        let vals = m.val_of_col(c);
        for (k, &row) in rows.iter().enumerate() {
            r[row] += vals[k] * qc;
        }
    }
    // remove the artificial shift before measuring
    let mut worst = 0.0f64;
    for c in 0..n {
        worst = worst.max((r[c] + shift * q[(c, 0)]).abs());
    }
    worst / q.col_as_slice(0).iter().fold(0.0f64, |a, &v| a.max(v.abs()))
}

/// The two conditional fields entering the linearized equation, derived from
/// a density iterate.
pub fn picard_fields(
    cs: &CoefficientSet,
    q: &GridDensity2D,
    mollify: Option<&MollifierConfig>,
) -> Result<(CondExpectationField, CondExpectationField)> {
    let k = &cs.constants;
    let psi1_bounds = (
        k.h_low / (k.f_high * k.f_high),
        k.h_high / (k.f_low * k.f_low),
    );
    let psi2_bounds = (
        1.0 / (k.f_high * k.f_high),
        1.0 / (k.f_low * k.f_low),
    );
    let h = &cs.h;
    let f = &cs.f;
    let g1 = exact_g_from_grid(
        q,
        |y| {
            let fv = f.eval(y);
            h.eval(y) / (fv * fv)
        },
        psi1_bounds,
    );
    let g2 = exact_g_from_grid(
        q,
        |y| {
            let fv = f.eval(y);
            1.0 / (fv * fv)
        },
        psi2_bounds,
    );
    match mollify {
        Some(cfg) => Ok((mollify_g(&g1, cfg)?, mollify_g(&g2, cfg)?)),
        None => Ok((g1, g2)),
    }
}

/// Picard iteration `q <- (1 - w) q + w Phi(q)` where `Phi` solves the
/// linearized equation with fields frozen from the current iterate.
/// Oscillation (two successive growing deltas) halves the relaxation factor
/// toward 0.3. Non-convergence is reported, not raised.
pub fn picard_iterate(
    cs: &CoefficientSet,
    initial: &GridDensity2D,
    tol: f64,
    max_iters: usize,
    mollify: Option<&MollifierConfig>,
    damping: f64,
) -> Result<(GridDensity2D, PicardReport)> {
    if !(tol > 0.0) {
        return Err(CoreError::Config("tolerance must be positive".into()));
    }
    if !(0.0 < damping && damping <= 1.0) {
        return Err(CoreError::Config("damping must lie in (0, 1]".into()));
    }
    let mut q = initial.clone();
    let mut omega = damping;
    let mut deltas: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut fields = picard_fields(cs, &q, mollify)?;

    while iterations < max_iters {
        let q_new = solve_linear_fp(cs, &fields.0, &fields.1, q.x_grid(), q.y_grid())?;
        iterations += 1;
        let delta = q_new.l1_distance(&q)?;
        deltas.push(delta);
        q = if omega == 1.0 {
            q_new
        } else {
            blend(&q, &q_new, omega)?
        };
        if delta < tol {
            converged = true;
            break;
        }
        let next_fields = picard_fields(cs, &q, mollify)?;
        if omega == 1.0
            && next_fields.0.values == fields.0.values
            && next_fields.1.values == fields.1.values
        {
            // the conditional fields do not react to the iterate (constant
            // coupling); the next solve would reproduce q exactly
            deltas.push(0.0);
            converged = true;
            break;
        }
        if deltas.len() >= 3 {
            let k = deltas.len();
            if deltas[k - 1] > deltas[k - 2] && deltas[k - 2] > deltas[k - 3] && omega > 0.3 {
                omega = (0.5 * omega).max(0.3);
            }
        }
        fields = next_fields;
    }

    let final_residual = weak_residual(&q, cs, WeakEquation::Transformed)?
        .iter()
        .fold(0.0f64, |a, &r| a.max(r.abs()));
    let report = PicardReport {
        iterations,
        l1_deltas: deltas,
        final_residual,
        converged,
        damping: omega,
    };
    Ok((q, report))
}

fn blend(a: &GridDensity2D, b: &GridDensity2D, omega: f64) -> Result<GridDensity2D> {
    let vals = Array2::from_shape_fn(a.values().raw_dim(), |(i, j)| {
        (1.0 - omega) * a.values()[(i, j)] + omega * b.values()[(i, j)]
    });
    GridDensity2D::from_unnormalized(a.x_grid().to_vec(), a.y_grid().to_vec(), vals)
}

/// Fisher information, second moment, and marginal floor at radii 1, 2, 4.
pub fn k_diagnostics(q: &GridDensity2D) -> KDiagnostics {
    let v = q.values();
    let (nx, ny) = (q.x_grid().len(), q.y_grid().len());
    let (dx, dy) = (q.dx(), q.dy());
    let peak = v.iter().fold(0.0f64, |a, &b| a.max(b));
    let support_floor = 1e-13 * peak;

    let mut fisher = 0.0;
    for i in 1..nx - 1 {
        for j in 1..ny - 1 {
            let p = v[(i, j)];
            if p < support_floor {
                continue; // grad p / p taken as 0 outside the support
            }
            let gx = (v[(i + 1, j)] - v[(i - 1, j)]) / (2.0 * dx);
            let gy = (v[(i, j + 1)] - v[(i, j - 1)]) / (2.0 * dy);
            fisher += (gx * gx + gy * gy) / p;
        }
    }
    fisher *= dx * dy;

    let mut second = 0.0;
    for (i, &x) in q.x_grid().iter().enumerate() {
        for (j, &y) in q.y_grid().iter().enumerate() {
            second += (x * x + y * y) * v[(i, j)];
        }
    }
    second *= dx * dy;

    let marginal = q.x_marginal();
    let marginal_floor = [1.0, 2.0, 4.0]
        .iter()
        .map(|&r| {
            let m = q
                .x_grid()
                .iter()
                .enumerate()
                .filter(|(_, &x)| x.abs() <= r)
                .map(|(i, _)| marginal[i])
                .fold(f64::INFINITY, f64::min);
            (r, if m.is_finite() { m } else { 0.0 })
        })
        .collect();

    KDiagnostics {
        fisher_information: fisher,
        second_moment: second,
        marginal_floor,
    }
}

/// Weak residual of the chosen stationary equation over the test dictionary,
/// with the conditional fields taken from `q` itself.
pub fn weak_residual(
    q: &GridDensity2D,
    cs: &CoefficientSet,
    equation: WeakEquation,
) -> Result<Vec<f64>> {
    let k = &cs.constants;
    let xg = q.x_grid();
    let yg = q.y_grid();
    let dict = dictionary(
        (xg[0], *xg.last().unwrap()),
        (yg[0], *yg.last().unwrap()),
    );

    // coefficient tables; names follow the weak form
    // a11 phi_xx + a22 phi_yy + b1 phi_x + b2 phi_y
    let (a11_x, a11_y, a22_x, a22_y, b1_x, b1_y, b2_x, b2_y): (
        Vec<f64>,
        Vec<f64>,
        Vec<f64>,
        Vec<f64>,
        Vec<f64>,
        Vec<f64>,
        Vec<f64>,
        Vec<f64>,
    );
    match equation {
        WeakEquation::Original => {
            let g_h = exact_g_from_grid(q, |y| cs.h.eval(y), (k.h_low, k.h_high));
            let g_f2 = exact_g_from_grid(
                q,
                |y| {
                    let v = cs.f.eval(y);
                    v * v
                },
                (k.f_low * k.f_low, k.f_high * k.f_high),
            );
            a11_x = xg
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let s = cs.sigma1.eval(x);
                    0.5 * s * s * g_f2.values[i]
                })
                .collect();
            a11_y = yg
                .iter()
                .map(|&y| {
                    let v = cs.f.eval(y);
                    v * v
                })
                .collect();
            a22_x = vec![1.0; xg.len()];
            a22_y = yg
                .iter()
                .map(|&y| {
                    let s = cs.sigma2.eval(y);
                    0.5 * s * s
                })
                .collect();
            b1_x = xg
                .iter()
                .enumerate()
                .map(|(i, &x)| cs.b1.eval(x) * g_h.values[i])
                .collect();
            b1_y = yg.iter().map(|&y| cs.h.eval(y)).collect();
            b2_x = vec![1.0; xg.len()];
            b2_y = yg.iter().map(|&y| cs.b2.eval(y)).collect();
        }
        WeakEquation::Transformed => {
            let (g1, g2) = picard_fields(cs, q, None)?;
            a11_x = xg
                .iter()
                .map(|&x| {
                    let s = cs.sigma1.eval(x);
                    0.5 * s * s
                })
                .collect();
            a11_y = vec![1.0; yg.len()];
            a22_x = xg.iter().enumerate().map(|(i, _)| g2.values[i]).collect();
            a22_y = yg
                .iter()
                .map(|&y| {
                    let s = cs.sigma2.eval(y);
                    let v = cs.f.eval(y);
                    0.5 * s * s / (v * v)
                })
                .collect();
            b1_x = xg
                .iter()
                .enumerate()
                .map(|(i, &x)| cs.b1.eval(x) * g1.values[i])
                .collect();
            b1_y = yg
                .iter()
                .map(|&y| {
                    let v = cs.f.eval(y);
                    cs.h.eval(y) / (v * v)
                })
                .collect();
            b2_x = xg.iter().enumerate().map(|(i, _)| g2.values[i]).collect();
            b2_y = yg
                .iter()
                .map(|&y| {
                    let v = cs.f.eval(y);
                    cs.b2.eval(y) / (v * v)
                })
                .collect();
        }
    }

    let cell = q.dx() * q.dy();
    let v = q.values();
    let residual_of = |phi: &BumpTestFunction| -> f64 {
        // restrict the sweep to the bump's support
        let i_lo = xg.partition_point(|&x| x < phi.center_x - phi.width_x);
        let i_hi = xg.partition_point(|&x| x <= phi.center_x + phi.width_x);
        let j_lo = yg.partition_point(|&y| y < phi.center_y - phi.width_y);
        let j_hi = yg.partition_point(|&y| y <= phi.center_y + phi.width_y);
        let mut acc = 0.0;
        for i in i_lo..i_hi {
            let x = xg[i];
            for j in j_lo..j_hi {
                let y = yg[j];
                let p = v[(i, j)];
                if p == 0.0 {
                    continue;
                }
                let integrand = a11_x[i] * a11_y[j] * phi.dxx(x, y)
                    + a22_x[i] * a22_y[j] * phi.dyy(x, y)
                    + b1_x[i] * b1_y[j] * phi.dx(x, y)
                    + b2_x[i] * b2_y[j] * phi.dy(x, y);
                acc += integrand * p;
            }
        }
        acc * cell
    };
    Ok(dict.iter().map(residual_of).collect())
}
