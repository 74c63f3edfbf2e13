//! Local stochastic volatility calibration on synthetic surfaces.
//!
//! Pipeline: a call-price surface (synthetic Black-Scholes, or generated by
//! a 1D forward PDE under a known local vol) -> Dupire local volatility
//!
//! ```text
//! sigma_Dup^2(t, K) = 2 dC/dt / (K^2 d2C/dK2)
//! ```
//!
//! -> a time-independent slice, flattened for large |log-moneyness| and given
//! a linearly dissipative drift tail -> the calibrated log-price SDE
//!
//! ```text
//! dX = -1/2 Z^2 sigma_Dup^2(e^X) / E[Z^2|X] dt + Z sigma_Dup(e^X) / sqrt(E[Z^2|X]) dW
//! ```
//!
//! with `Z = f(Y)`, run through the particle engine (`h = f^2` coupling),
//! and repriced against the inputs. Zero rates and dividends throughout.

use ndarray::Array2;
use statrs::function::erf::erf;

use crate::coefficients::{AssumptionConstants, CoefficientSet, FnKind, ScalarFunction};
use crate::condexp::ParticleCloud;
use crate::error::{CoreError, Result};
use crate::particlesim::{run, InitCondition, SimConfig, SimOutput};
use crate::stationary1d::build_stationary_density;

/// Slope of the dissipative drift tail appended beyond the flattening
/// radius.
pub const TAIL_SLOPE: f64 = 0.01;

/// A call-price surface on a maturity-by-strike grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CallSurface {
    pub maturities: Vec<f64>,
    pub strikes: Vec<f64>,
    /// Shape `[maturities.len(), strikes.len()]`.
    pub prices: Array2<f64>,
    pub spot: f64,
}

/// Tolerance for the discrete no-arbitrage checks.
const ARBITRAGE_TOL: f64 = 1e-10;

impl CallSurface {
    pub fn new(
        maturities: Vec<f64>,
        strikes: Vec<f64>,
        prices: Array2<f64>,
        spot: f64,
    ) -> Result<Self> {
        let s = Self {
            maturities,
            strikes,
            prices,
            spot,
        };
        s.validate()?;
        Ok(s)
    }

    /// Checks axes and the discrete no-arbitrage conditions (prices
    /// nonincreasing and convex in strike).
    pub fn validate(&self) -> Result<()> {
        if self.maturities.len() < 2 || self.strikes.len() < 3 {
            return Err(CoreError::Config("surface needs >= 2 maturities and >= 3 strikes".into()));
        }
        if self.maturities.windows(2).any(|w| w[1] <= w[0])
            || self.strikes.windows(2).any(|w| w[1] <= w[0])
            || self.maturities[0] <= 0.0
        {
            return Err(CoreError::Config("surface axes must be strictly increasing and positive".into()));
        }
        if !(self.spot > 0.0) {
            return Err(CoreError::Config("spot must be positive".into()));
        }
        if self.prices.shape() != [self.maturities.len(), self.strikes.len()] {
            return Err(CoreError::Config("price matrix shape mismatch".into()));
        }
        for (m, _) in self.maturities.iter().enumerate() {
            for k in 0..self.strikes.len() {
                let p = self.prices[(m, k)];
                if !(p.is_finite() && p >= -ARBITRAGE_TOL) {
                    return Err(CoreError::Arbitrage(format!(
                        "negative price at maturity index {m}, strike index {k}"
                    )));
                }
                if k > 0 && p > self.prices[(m, k - 1)] + ARBITRAGE_TOL {
                    return Err(CoreError::Arbitrage(format!(
                        "prices increase in strike at maturity index {m}, strike index {k}"
                    )));
                }
            }
            for k in 1..self.strikes.len() - 1 {
                let d2 = self.second_strike_derivative(m, k);
                if d2 < -ARBITRAGE_TOL {
                    return Err(CoreError::Arbitrage(format!(
                        "butterfly violation at maturity index {m}, strike index {k}: d2 = {d2:e}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn second_strike_derivative(&self, m: usize, k: usize) -> f64 {
        let dk_m = self.strikes[k] - self.strikes[k - 1];
        let dk_p = self.strikes[k + 1] - self.strikes[k];
        let c = &self.prices;
        2.0 * (dk_m * c[(m, k + 1)] - (dk_m + dk_p) * c[(m, k)] + dk_p * c[(m, k - 1)])
            / (dk_m * dk_p * (dk_m + dk_p))
    }

    /// CSV matrix with a strike header row and one maturity per row.
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "maturity\\strike")?;
        for k in &self.strikes {
            write!(out, ",{k:e}")?;
        }
        writeln!(out)?;
        for (m, t) in self.maturities.iter().enumerate() {
            write!(out, "{t:e}")?;
            for k in 0..self.strikes.len() {
                write!(out, ",{:e}", self.prices[(m, k)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    /// Parses the CSV format written by [`CallSurface::write_csv`].
    pub fn read_csv(text: &str, spot: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| CoreError::Config("empty surface file".into()))?;
        let strikes: Vec<f64> = header
            .split(',')
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CoreError::Config(format!("bad strike header: {e}")))?;
        let mut maturities = Vec::new();
        let mut rows: Vec<f64> = Vec::new();
        for line in lines {
            let mut cols = line.split(',');
            let t: f64 = cols
                .next()
                .unwrap()
                .trim()
                .parse()
                .map_err(|e| CoreError::Config(format!("bad maturity: {e}")))?;
            maturities.push(t);
            for c in cols {
                rows.push(
                    c.trim()
                        .parse()
                        .map_err(|e| CoreError::Config(format!("bad price: {e}")))?,
                );
            }
        }
        let prices = Array2::from_shape_vec((maturities.len(), strikes.len()), rows)
            .map_err(|e| CoreError::Config(format!("ragged surface: {e}")))?;
        Self::new(maturities, strikes, prices, spot)
    }
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Black-Scholes call with zero rates.
pub fn black_scholes_call(spot: f64, strike: f64, vol: f64, maturity: f64) -> f64 {
    if maturity <= 0.0 || vol <= 0.0 {
        return (spot - strike).max(0.0);
    }
    let sq = vol * maturity.sqrt();
    let d1 = ((spot / strike).ln() + 0.5 * vol * vol * maturity) / sq;
    let d2 = d1 - sq;
    spot * normal_cdf(d1) - strike * normal_cdf(d2)
}

/// Synthetic flat-vol Black-Scholes surface.
pub fn black_scholes_surface(
    spot: f64,
    vol: f64,
    maturities: Vec<f64>,
    strikes: Vec<f64>,
) -> Result<CallSurface> {
    let prices = Array2::from_shape_fn((maturities.len(), strikes.len()), |(m, k)| {
        black_scholes_call(spot, strikes[k], vol, maturities[m])
    });
    CallSurface::new(maturities, strikes, prices, spot)
}

/// Synthetic surface priced under a known local volatility `sigma(K)` by the
/// forward equation `dC/dt = 1/2 sigma^2(K) K^2 d2C/dK2` (Crank-Nicolson
/// with implicit startup steps). Serves as the generation oracle for the
/// Dupire recovery check.
pub fn local_vol_surface(
    spot: f64,
    sigma_of_strike: impl Fn(f64) -> f64,
    maturities: Vec<f64>,
    strikes: Vec<f64>,
) -> Result<CallSurface> {
    let nk = strikes.len();
    if nk < 5 {
        return Err(CoreError::Config("need at least 5 strikes".into()));
    }
    let n_sub = 4usize; // substeps between stored maturities
    let coeff: Vec<f64> = strikes
        .iter()
        .map(|&k| {
            let s = sigma_of_strike(k);
            0.5 * s * s * k * k
        })
        .collect();
    let mut c: Vec<f64> = strikes.iter().map(|&k| (spot - k).max(0.0)).collect();
    let mut prices = Array2::zeros((maturities.len(), nk));
    let mut t = 0.0;
    let mut startup = 8usize; // fully implicit steps to damp the kink
    for (m, &tm) in maturities.iter().enumerate() {
        let dt = (tm - t) / n_sub as f64;
        for _ in 0..n_sub {
            let theta = if startup > 0 { 1.0 } else { 0.5 };
            startup = startup.saturating_sub(1);
            step_forward_pde(&mut c, &strikes, &coeff, dt, theta, spot);
        }
        t = tm;
        for k in 0..nk {
            prices[(m, k)] = c[k];
        }
    }
    CallSurface::new(maturities, strikes, prices, spot)
}

/// One theta-scheme step of the forward PDE on a nonuniform strike grid.
fn step_forward_pde(c: &mut [f64], strikes: &[f64], coeff: &[f64], dt: f64, theta: f64, spot: f64) {
    let n = c.len();
    // second-derivative stencil weights per interior node
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    let mut rhs = vec![0.0; n];
    for k in 1..n - 1 {
        let dm = strikes[k] - strikes[k - 1];
        let dp = strikes[k + 1] - strikes[k];
        let wl = 2.0 / (dm * (dm + dp));
        let wu = 2.0 / (dp * (dm + dp));
        let wc = -(wl + wu);
        let a = coeff[k];
        // explicit part
        let lx = a * (wl * c[k - 1] + wc * c[k] + wu * c[k + 1]);
        rhs[k] = c[k] + dt * (1.0 - theta) * lx;
        lower[k] = -dt * theta * a * wl;
        diag[k] = 1.0 - dt * theta * a * wc;
        upper[k] = -dt * theta * a * wu;
    }
    // boundaries: deep ITM intrinsic value, deep OTM zero
    diag[0] = 1.0;
    rhs[0] = spot - strikes[0];
    diag[n - 1] = 1.0;
    rhs[n - 1] = 0.0;
    thomas_solve(&lower, &mut diag.clone(), &upper, &mut rhs, c);
}

/// Tridiagonal solve (Thomas algorithm); writes the solution into `out`.
fn thomas_solve(lower: &[f64], diag: &mut [f64], upper: &[f64], rhs: &mut [f64], out: &mut [f64]) {
    let n = rhs.len();
    for k in 1..n {
        let w = lower[k] / diag[k - 1];
        diag[k] -= w * upper[k - 1];
        rhs[k] -= w * rhs[k - 1];
    }
    out[n - 1] = rhs[n - 1] / diag[n - 1];
    for k in (0..n - 1).rev() {
        out[k] = (rhs[k] - upper[k] * out[k + 1]) / diag[k];
    }
}

/// Dupire local volatility with recorded clamping and flattening state.
#[derive(Debug, Clone)]
pub struct LocalVolSurface {
    pub maturities: Vec<f64>,
    pub strikes: Vec<f64>,
    /// `sigma_Dup(t, K)` (volatility, not variance).
    pub values: Array2<f64>,
    /// Cells clamped into `[vol_min, vol_max]`.
    pub clamped_cells: Vec<(usize, usize)>,
    pub vol_bounds: (f64, f64),
}

/// Extracts the Dupire local volatility from a call surface: forward
/// differences in maturity against the maturity-pair average of the central
/// strike curvature (the collocation consistent with a theta = 1/2 forward
/// scheme). Values are clamped into `[vol_min, vol_max]` with clamped cells
/// recorded.
pub fn dupire_from_surface(
    s: &CallSurface,
    vol_min: f64,
    vol_max: f64,
) -> Result<LocalVolSurface> {
    s.validate()?;
    if !(0.0 < vol_min && vol_min < vol_max) {
        return Err(CoreError::Config("need 0 < vol_min < vol_max".into()));
    }
    let (nm, nk) = (s.maturities.len(), s.strikes.len());
    let mut values = Array2::zeros((nm, nk));
    let mut clamped = Vec::new();
    for m in 0..nm {
        let (m0, m1) = if m + 1 < nm { (m, m + 1) } else { (m - 1, m) };
        let dt = s.maturities[m1] - s.maturities[m0];
        for k in 0..nk {
            let kk = k.clamp(1, nk - 2);
            let d2_avg =
                0.5 * (s.second_strike_derivative(m0, kk) + s.second_strike_derivative(m1, kk));
            if d2_avg <= ARBITRAGE_TOL {
                // zero curvature means no density; treat as a clamped cell
                values[(m, k)] = vol_max;
                clamped.push((m, k));
                continue;
            }
            let dcdt = (s.prices[(m1, k)] - s.prices[(m0, k)]) / dt;
            let var = 2.0 * dcdt / (s.strikes[kk] * s.strikes[kk] * d2_avg);
            let vol = var.max(0.0).sqrt();
            let v = vol.clamp(vol_min, vol_max);
            if v != vol {
                clamped.push((m, k));
            }
            values[(m, k)] = v;
        }
    }
    Ok(LocalVolSurface {
        maturities: s.maturities.clone(),
        strikes: s.strikes.clone(),
        values,
        clamped_cells: clamped,
        vol_bounds: (vol_min, vol_max),
    })
}

impl LocalVolSurface {
    /// Index of the maturity nearest `t`.
    pub fn nearest_maturity(&self, t: f64) -> usize {
        let mut best = 0;
        for (m, &tm) in self.maturities.iter().enumerate() {
            if (tm - t).abs() < (self.maturities[best] - t).abs() {
                best = m;
            }
        }
        best
    }

    /// CSV matrix (same layout as the call surface).
    pub fn write_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        write!(out, "maturity\\strike")?;
        for k in &self.strikes {
            write!(out, ",{k:e}")?;
        }
        writeln!(out)?;
        for (m, t) in self.maturities.iter().enumerate() {
            write!(out, "{t:e}")?;
            for k in 0..self.strikes.len() {
                write!(out, ",{:e}", self.values[(m, k)])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

/// The auxiliary volatility process `Z = f(Y)`, `dY = b2 dt + sigma2 dB`.
#[derive(Debug, Clone)]
pub struct VolProcess {
    pub b2: ScalarFunction,
    pub sigma2: ScalarFunction,
    pub f: ScalarFunction,
    pub f_bounds: (f64, f64),
    pub f_lip: f64,
}

impl VolProcess {
    /// OU driver with a mildly varying logistic `f` around 1.
    pub fn default_ou_logistic() -> Self {
        Self {
            b2: ScalarFunction::affine(-1.0, 0.0),
            sigma2: ScalarFunction::constant(1.0),
            f: ScalarFunction::logistic(0.75, 1.3, 1.0, 0.0),
            f_bounds: (0.75, 1.3),
            f_lip: 0.2,
        }
    }

    /// Degenerate constant-Z process (pure local vol).
    pub fn constant_unit() -> Self {
        Self {
            b2: ScalarFunction::affine(-1.0, 0.0),
            sigma2: ScalarFunction::constant(1.0),
            f: ScalarFunction::constant(1.0),
            f_bounds: (1.0, 1.0),
            f_lip: 0.1,
        }
    }
}

/// The calibrated coefficient set plus bookkeeping from the flattening.
#[derive(Debug, Clone)]
pub struct CalibratedLsv {
    pub coefficients: CoefficientSet,
    /// Log-moneyness radius beyond which `sigma_Dup^2(e^x)` is constant.
    pub flattening_radius: f64,
    pub log_spot: f64,
}

/// Assembles the log-price coefficient set from a time-independent local
/// vol slice: `b1(x) = -1/2 sigma_flat^2(e^x)` with a `-TAIL_SLOPE (x -
/// x_spot -+ R)` dissipative continuation, `sigma1(x) = sigma_flat(e^x)`,
/// `h = f^2`.
pub fn build_lsv_coefficients(
    lv: &LocalVolSurface,
    maturity_index: usize,
    vol_process: &VolProcess,
    spot: f64,
    flattening_radius: Option<f64>,
) -> Result<CalibratedLsv> {
    let x0 = spot.ln();
    let t_max = *lv.maturities.last().unwrap();
    let atm = lv.values[(maturity_index, lv.nearest_strike(spot))];
    let radius = flattening_radius
        .unwrap_or_else(|| (3.0 * atm * t_max.sqrt()).max(0.5));

    // sample sigma_Dup(e^x) inside the radius, constant outside
    let n_knots = 257usize;
    let mut sig_knots = Vec::with_capacity(n_knots);
    for i in 0..n_knots {
        let x = x0 - radius + 2.0 * radius * i as f64 / (n_knots - 1) as f64;
        let strike = x.exp();
        sig_knots.push((x, lv.interp_strike(maturity_index, strike)));
    }
    let sigma1 = ScalarFunction::tabulated(&sig_knots)?; // clamped tails = flattening

    // drift knots: -sigma^2/2 inside, linear dissipative tails appended
    let mut b_knots: Vec<(f64, f64)> = sig_knots
        .iter()
        .map(|&(x, s)| (x, -0.5 * s * s))
        .collect();
    let tail = 40.0f64;
    let first = b_knots[0].1;
    let last = b_knots[n_knots - 1].1;
    b_knots.insert(0, (x0 - radius - tail, first + TAIL_SLOPE * tail));
    b_knots.push((x0 + radius + tail, last - TAIL_SLOPE * tail));
    let b1 = ScalarFunction::piecewise_linear(&b_knots)?;

    let h = match vol_process.f.kind {
        FnKind::Constant => {
            let c = vol_process.f.eval(0.0);
            ScalarFunction::constant(c * c)
        }
        FnKind::SmoothBounded => ScalarFunction::logistic_squared(
            vol_process.f.params[0],
            vol_process.f.params[1],
            vol_process.f.params[2],
            vol_process.f.params[3],
        ),
        _ => {
            return Err(CoreError::Config(
                "volatility multiplier must be constant or logistic".into(),
            ))
        }
    };

    // numeric constant inference with 10% headroom over a dense grid that
    // includes the linear tails
    let check = (x0 - radius - tail - 10.0, x0 + radius + tail + 10.0);
    let n_check = 4001;
    let c = 0.5 * TAIL_SLOPE;
    let (mut c1, mut c2) = (0.0f64, 0.0f64);
    let (mut s_lo, mut s_hi, mut s_lip) = (f64::INFINITY, 0.0f64, 0.0f64);
    for i in 0..n_check {
        let x = check.0 + (check.1 - check.0) * i as f64 / (n_check - 1) as f64;
        for b in [&b1, &vol_process.b2] {
            let bx = b.eval(x);
            c1 = c1.max(x * bx + c * x * x);
            c2 = c2.max(bx.abs() / (1.0 + x.abs()));
        }
        for s in [&sigma1, &vol_process.sigma2] {
            let sx = s.eval(x);
            s_lo = s_lo.min(sx);
            s_hi = s_hi.max(sx);
            s_lip = s_lip.max(s.derivative_or_fd(x).abs());
        }
    }
    let constants = AssumptionConstants {
        c,
        c1: (c1 * 1.1).max(1e-6),
        c2: c2 * 1.1,
        sigma_low: s_lo * 0.9,
        sigma_high: s_hi * 1.1,
        sigma_lip: (s_lip * 1.1).max(1e-6),
        f_low: vol_process.f_bounds.0,
        f_high: vol_process.f_bounds.1,
        h_low: vol_process.f_bounds.0 * vol_process.f_bounds.0,
        h_high: vol_process.f_bounds.1 * vol_process.f_bounds.1,
        f_lip: vol_process.f_lip,
    };
    let cs = CoefficientSet::new(
        b1,
        vol_process.b2.clone(),
        sigma1,
        vol_process.sigma2.clone(),
        h,
        vol_process.f.clone(),
        constants,
    )?
    .validate(check, 4001)?;
    Ok(CalibratedLsv {
        coefficients: cs,
        flattening_radius: radius,
        log_spot: x0,
    })
}

impl LocalVolSurface {
    fn nearest_strike(&self, k: f64) -> usize {
        let mut best = 0;
        for (i, &s) in self.strikes.iter().enumerate() {
            if (s - k).abs() < (self.strikes[best] - k).abs() {
                best = i;
            }
        }
        best
    }

    /// Linear interpolation in strike at a fixed maturity row, clamped at
    /// the edges (this clamping is the flattening in strike space).
    pub fn interp_strike(&self, m: usize, strike: f64) -> f64 {
        let ks = &self.strikes;
        if strike <= ks[0] {
            return self.values[(m, 0)];
        }
        let last = ks.len() - 1;
        if strike >= ks[last] {
            return self.values[(m, last)];
        }
        let mut lo = 0;
        let mut hi = last;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if ks[mid] <= strike {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let w = (strike - ks[lo]) / (ks[lo + 1] - ks[lo]);
        self.values[(m, lo)] * (1.0 - w) + self.values[(m, lo + 1)] * w
    }
}

/// Runs the calibrated LSV simulation: log-price starts at `ln(spot)`, the
/// volatility factor starts from its stationary law.
pub fn simulate_calibrated_lsv(
    lv: &LocalVolSurface,
    vol_process: &VolProcess,
    spot: f64,
    cfg: &SimConfig,
) -> Result<(SimOutput, CalibratedLsv)> {
    let horizon = cfg.horizon();
    let m_idx = lv.nearest_maturity(horizon);
    let calibrated = build_lsv_coefficients(lv, m_idx, vol_process, spot, None)?;
    let cs = &calibrated.coefficients;

    // X0 = log spot (point mass), Y0 ~ stationary law of the driver
    let m2 = build_stationary_density(&cs.b2, &cs.sigma2, (-10.0, 10.0), 2049)?;
    let ys = m2.sample(cfg.n_particles, cfg.seed ^ 0x4C53_5600);
    let xs = vec![spot.ln(); cfg.n_particles];
    let cloud = ParticleCloud::uniform(xs, ys, 0.0)?;

    let mut run_cfg = cfg.clone();
    run_cfg.init = InitCondition::Custom(cloud);
    let output = run(cs, &run_cfg)?;
    Ok((output, calibrated))
}

/// A repriced strike with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy)]
pub struct RepriceRow {
    pub strike: f64,
    pub price: f64,
    pub std_error: f64,
}

/// Prices calls from a log-price cloud: `price(K) = sum w_i (e^{x_i} - K)^+`.
pub fn reprice(cloud: &ParticleCloud, strikes: &[f64]) -> Result<Vec<RepriceRow>> {
    if cloud.is_empty() {
        return Err(CoreError::Input("empty cloud".into()));
    }
    let mut rows = Vec::with_capacity(strikes.len());
    for &k in strikes {
        let mut price = 0.0;
        for i in 0..cloud.len() {
            price += cloud.weights[i] * (cloud.xs[i].exp() - k).max(0.0);
        }
        let mut var = 0.0;
        for i in 0..cloud.len() {
            let d = (cloud.xs[i].exp() - k).max(0.0) - price;
            var += cloud.weights[i] * cloud.weights[i] * d * d;
        }
        rows.push(RepriceRow {
            strike: k,
            price,
            std_error: var.sqrt(),
        });
    }
    Ok(rows)
}
