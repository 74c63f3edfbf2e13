//! Euler-Maruyama particle simulator for the coupled conditional system.
//!
//! Each step re-estimates the conditional fields from the current empirical
//! cloud, then advances every particle:
//!
//! ```text
//! X <- X + b1(X) h(Y) G^h(X) dt + sigma1(X) f(Y) sqrt(G^{f^2}(X)) sqrt(dt) xi
//! Y <- Y + b2(Y) dt + sigma2(Y) sqrt(dt) eta
//! ```
//!
//! with independent `(xi, eta)` per particle. Supported couplings: the full
//! conditional system above, the transformed system (conditional term in the
//! Y-diffusion), a frozen-field linear system, and a decoupled reference.
//! Noise is counter-based per `(particle, step)` so results are bitwise
//! reproducible for any thread count and particle paths do not change when N
//! grows.

pub mod diagnostics;
pub mod noise;

use rayon::prelude::*;

use crate::coefficients::CoefficientSet;
use crate::condexp::{
    estimate_g_binning, estimate_g_kernel, rule_of_thumb_bandwidth, CondExpectationField,
    ParticleCloud,
};
use crate::error::{CoreError, Result};
use crate::grid2d::uniform_grid;
use crate::stationary1d::{build_stationary_density, StationaryDensity1D};

use diagnostics::{pearson, second_moment};
use noise::{normal_pair, STREAM_MAIN, STREAM_MIMIC, STREAM_TIME_CHANGE};

/// Fixed particle-chunk size for deterministic parallel reduction.
const CHUNK: usize = 8192;

/// Conditional-field estimator used inside the simulation loop.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorConfig {
    Binning { bins: usize, min_count: usize },
    Kernel { grid: usize, bandwidth: Option<f64> },
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig::Binning {
            bins: 64,
            min_count: 1,
        }
    }
}

/// Which system the particles follow.
#[derive(Debug, Clone)]
pub enum CouplingMode {
    /// The full conditional system.
    McKeanVlasov,
    /// The transformed system (conditional term moved to the Y-diffusion).
    Transformed,
    /// The linear system with supplied frozen fields `(G^h, G^{f^2})`.
    FrozenG {
        g_drift: CondExpectationField,
        g_diff: CondExpectationField,
    },
    /// Reference dynamics with the conditional ratios identically 1.
    Decoupled,
}

/// Initial condition.
#[derive(Debug, Clone)]
pub enum InitCondition {
    /// `X_0 ~ m1`, `Y_0 ~ m2`, independent.
    ProductStationary,
    Custom(ParticleCloud),
}

/// Simulation parameters.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub n_particles: usize,
    pub dt: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub estimator: EstimatorConfig,
    pub coupling: CouplingMode,
    pub init: InitCondition,
    /// Number of snapshots after the initial one (evenly spaced in steps).
    pub n_snapshots: usize,
    /// Permits `dt` above the stability cap `0.01 / sigma_high^2`.
    pub dt_cap_override: bool,
    /// Permits unvalidated coefficient sets.
    pub allow_unvalidated: bool,
    /// Fraction of the horizon treated as warm-up by stationarity checks
    /// when the initial law is not exactly stationary.
    pub burn_in_fraction: f64,
}

impl SimConfig {
    pub fn new(n_particles: usize, dt: f64, n_steps: usize, seed: u64) -> Self {
        Self {
            n_particles,
            dt,
            n_steps,
            seed,
            estimator: EstimatorConfig::default(),
            coupling: CouplingMode::McKeanVlasov,
            init: InitCondition::ProductStationary,
            n_snapshots: 10,
            dt_cap_override: false,
            allow_unvalidated: false,
            burn_in_fraction: 0.5,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.n_steps as f64
    }
}

/// Per-snapshot diagnostics.
#[derive(Debug, Clone)]
pub struct SnapshotDiagnostics {
    pub time: f64,
    pub second_moment: f64,
    pub second_moment_se: f64,
    pub xy_correlation: f64,
    pub marginal_w1_x: f64,
    pub marginal_w1_y: f64,
}

/// Simulation result: final cloud, snapshots, and per-snapshot diagnostics.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub final_cloud: ParticleCloud,
    pub snapshot_times: Vec<f64>,
    pub snapshots: Vec<ParticleCloud>,
    pub diagnostics: Vec<SnapshotDiagnostics>,
}

impl SimOutput {
    /// Diagnostics CSV, one row per snapshot.
    pub fn write_diagnostics_csv<W: std::io::Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "time,second_moment,xy_correlation,w1_x,w1_y")?;
        for d in &self.diagnostics {
            writeln!(
                out,
                "{:e},{:e},{:e},{:e},{:e}",
                d.time, d.second_moment, d.xy_correlation, d.marginal_w1_x, d.marginal_w1_y
            )?;
        }
        Ok(())
    }
}

/// Truncation domain for the stationary marginal oracles: ten standard
/// deviations of the dissipativity-implied bound `E Z^2 <= (sigma_high^2/2 +
/// C1)/c`, centered at zero.
pub fn marginal_domain(cs: &CoefficientSet) -> (f64, f64) {
    let k = &cs.constants;
    let bound = (0.5 * k.sigma_high * k.sigma_high + k.c1) / k.c;
    let r = 10.0 * bound.sqrt();
    (-r, r)
}

/// Stationary marginal oracles `(m1, m2)` for the two coordinates.
pub fn stationary_marginals(
    cs: &CoefficientSet,
) -> Result<(StationaryDensity1D, StationaryDensity1D)> {
    let domain = marginal_domain(cs);
    let r = domain.1;
    let grid_size = (2048.0 * (r / 10.0).max(1.0)).min(16384.0) as usize + 1;
    let m1 = build_stationary_density(&cs.b1, &cs.sigma1, domain, grid_size)?;
    let m2 = build_stationary_density(&cs.b2, &cs.sigma2, domain, grid_size)?;
    Ok((m1, m2))
}

fn check_preconditions(cs: &CoefficientSet, cfg: &SimConfig) -> Result<()> {
    if cfg.n_particles == 0 || cfg.n_steps == 0 {
        return Err(CoreError::Config("empty simulation".into()));
    }
    if !(cfg.dt > 0.0) {
        return Err(CoreError::Config("dt must be positive".into()));
    }
    if !cs.validated && !cfg.allow_unvalidated {
        return Err(CoreError::Config(
            "coefficient set is not validated; set allow_unvalidated to override".into(),
        ));
    }
    let cap = 0.01 / (cs.constants.sigma_high * cs.constants.sigma_high);
    if cfg.dt > cap && !cfg.dt_cap_override {
        return Err(CoreError::Config(format!(
            "dt = {} exceeds the stability cap {cap:.3e}; set dt_cap_override to proceed",
            cfg.dt
        )));
    }
    Ok(())
}

/// Fields prepared for one step, per coupling mode.
enum StepFields {
    Conditional {
        g_drift: CondExpectationField,
        g_diff: CondExpectationField,
    },
    Decoupled,
}

fn bin_edges(cloud: &ParticleCloud, bins: usize) -> Vec<f64> {
    let (lo, hi) = cloud.x_range();
    let pad = 1e-9 * (1.0 + lo.abs().max(hi.abs()) + (hi - lo));
    uniform_grid(lo - pad, hi + pad, bins + 1)
}

fn estimate_pair(
    cloud: &ParticleCloud,
    cfg: &EstimatorConfig,
    psi_a: impl Fn(f64) -> f64 + Sync,
    bounds_a: (f64, f64),
    psi_b: impl Fn(f64) -> f64 + Sync,
    bounds_b: (f64, f64),
) -> Result<(CondExpectationField, CondExpectationField)> {
    match *cfg {
        EstimatorConfig::Binning { bins, min_count } => {
            let edges = bin_edges(cloud, bins);
            Ok((
                estimate_g_binning(cloud, psi_a, bounds_a, &edges, min_count)?,
                estimate_g_binning(cloud, psi_b, bounds_b, &edges, min_count)?,
            ))
        }
        EstimatorConfig::Kernel { grid, bandwidth } => {
            let bw = bandwidth.unwrap_or_else(|| rule_of_thumb_bandwidth(cloud));
            let (lo, hi) = cloud.x_range();
            let nodes = uniform_grid(lo, hi, grid.max(2));
            Ok((
                estimate_g_kernel(cloud, psi_a, bounds_a, &nodes, bw)?,
                estimate_g_kernel(cloud, psi_b, bounds_b, &nodes, bw)?,
            ))
        }
    }
}

fn prepare_fields(cloud: &ParticleCloud, cs: &CoefficientSet, cfg: &SimConfig) -> Result<StepFields> {
    let k = &cs.constants;
    match &cfg.coupling {
        CouplingMode::Decoupled => Ok(StepFields::Decoupled),
        CouplingMode::FrozenG { g_drift, g_diff } => Ok(StepFields::Conditional {
            g_drift: g_drift.clone(),
            g_diff: g_diff.clone(),
        }),
        CouplingMode::McKeanVlasov => {
            let h = cs.h.clone();
            let f = cs.f.clone();
            let (g_drift, g_diff) = estimate_pair(
                cloud,
                &cfg.estimator,
                move |y| h.eval(y),
                (k.h_low, k.h_high),
                move |y| {
                    let v = f.eval(y);
                    v * v
                },
                (k.f_low * k.f_low, k.f_high * k.f_high),
            )?;
            Ok(StepFields::Conditional { g_drift, g_diff })
        }
        CouplingMode::Transformed => {
            let h = cs.h.clone();
            let f1 = cs.f.clone();
            let f2 = cs.f.clone();
            let (g_drift, g_diff) = estimate_pair(
                cloud,
                &cfg.estimator,
                move |y| {
                    let v = f1.eval(y);
                    h.eval(y) / (v * v)
                },
                (
                    k.h_low / (k.f_high * k.f_high),
                    k.h_high / (k.f_low * k.f_low),
                ),
                move |y| {
                    let v = f2.eval(y);
                    1.0 / (v * v)
                },
                (
                    1.0 / (k.f_high * k.f_high),
                    1.0 / (k.f_low * k.f_low),
                ),
            )?;
            Ok(StepFields::Conditional { g_drift, g_diff })
        }
    }
}

/// Advances `(xs, ys)` by one Euler-Maruyama step in place. Returns the
/// index of the first non-finite particle, if any.
fn advance(
    xs: &mut [f64],
    ys: &mut [f64],
    cs: &CoefficientSet,
    coupling: &CouplingMode,
    fields: &StepFields,
    dt: f64,
    noise_at: impl Fn(usize) -> (f64, f64) + Sync,
) -> Option<usize> {
    let sqdt = dt.sqrt();
    let k = &cs.constants;
    let bad = xs
        .par_chunks_mut(CHUNK)
        .zip(ys.par_chunks_mut(CHUNK))
        .enumerate()
        .map(|(chunk_idx, (cx, cy))| {
            let base = chunk_idx * CHUNK;
            for l in 0..cx.len() {
                let pid = base + l;
                let (xi, eta) = noise_at(pid);
                let (x, y) = (cx[l], cy[l]);
                let (xn, yn) = match (coupling, fields) {
                    (CouplingMode::Decoupled, _) => (
                        x + cs.b1.eval(x) * dt + cs.sigma1.eval(x) * sqdt * xi,
                        y + cs.b2.eval(y) * dt + cs.sigma2.eval(y) * sqdt * eta,
                    ),
                    (
                        CouplingMode::McKeanVlasov | CouplingMode::FrozenG { .. },
                        StepFields::Conditional { g_drift, g_diff },
                    ) => {
                        let ratio = (cs.h.eval(y) * g_drift.eval(x))
                            .clamp(k.h_low / k.h_high, k.h_high / k.h_low);
                        let dif = cs.f.eval(y) * g_diff.eval(x).sqrt();
                        (
                            x + cs.b1.eval(x) * ratio * dt + cs.sigma1.eval(x) * dif * sqdt * xi,
                            y + cs.b2.eval(y) * dt + cs.sigma2.eval(y) * sqdt * eta,
                        )
                    }
                    (
                        CouplingMode::Transformed,
                        StepFields::Conditional { g_drift, g_diff },
                    ) => {
                        let fv = cs.f.eval(y);
                        let fi2 = 1.0 / (fv * fv);
                        let psi1 = cs.h.eval(y) * fi2;
                        let (p1_lo, p1_hi) = (
                            k.h_low / (k.f_high * k.f_high),
                            k.h_high / (k.f_low * k.f_low),
                        );
                        let r1 = (psi1 * g_drift.eval(x)).clamp(p1_lo / p1_hi, p1_hi / p1_lo);
                        let (p2_lo, p2_hi) =
                            (1.0 / (k.f_high * k.f_high), 1.0 / (k.f_low * k.f_low));
                        let g2x = g_diff.eval(x);
                        let r2 = (fi2 * g2x).clamp(p2_lo / p2_hi, p2_hi / p2_lo);
                        (
                            x + cs.b1.eval(x) * r1 * dt + cs.sigma1.eval(x) * sqdt * xi,
                            y + cs.b2.eval(y) * r2 * dt
                                + cs.sigma2.eval(y) * (1.0 / fv) * g2x.sqrt() * sqdt * eta,
                        )
                    }
                    _ => unreachable!("fields prepared per mode"),
                };
                cx[l] = xn;
                cy[l] = yn;
                if !(xn.is_finite() && yn.is_finite()) {
                    return Some(pid);
                }
            }
            None
        })
        .collect::<Vec<_>>();
    bad.into_iter().flatten().next()
}

/// One explicit step with caller-supplied noise pairs (one `(xi, eta)` per
/// particle). Returns a freshly allocated cloud at `time + dt`.
pub fn step(
    cloud: &ParticleCloud,
    cs: &CoefficientSet,
    cfg: &SimConfig,
    noise: &[(f64, f64)],
) -> Result<ParticleCloud> {
    check_preconditions(cs, cfg)?;
    if noise.len() != cloud.len() {
        return Err(CoreError::Input(format!(
            "need one noise pair per particle: {} != {}",
            noise.len(),
            cloud.len()
        )));
    }
    let fields = prepare_fields(cloud, cs, cfg)?;
    let mut xs = cloud.xs.clone();
    let mut ys = cloud.ys.clone();
    if let Some(pid) = advance(
        &mut xs,
        &mut ys,
        cs,
        &cfg.coupling,
        &fields,
        cfg.dt,
        |i| noise[i],
    ) {
        let step_index = (cloud.time / cfg.dt).round() as usize;
        return Err(CoreError::Blowup {
            step: step_index,
            message: format!("particle {pid} left the finite range"),
        });
    }
    ParticleCloud::new(xs, ys, cloud.weights.clone(), cloud.time + cfg.dt)
}

fn snapshot_steps(n_steps: usize, n_snapshots: usize) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=n_snapshots.max(1))
        .map(|k| (k as f64 / n_snapshots.max(1) as f64 * n_steps as f64).round() as usize)
        .collect();
    steps.dedup();
    steps
}

fn initial_cloud(
    cs: &CoefficientSet,
    cfg: &SimConfig,
    m1: &StationaryDensity1D,
    m2: &StationaryDensity1D,
) -> Result<ParticleCloud> {
    let _ = cs;
    match &cfg.init {
        InitCondition::Custom(c) => {
            if c.len() != cfg.n_particles {
                return Err(CoreError::Config(format!(
                    "custom cloud has {} particles, config says {}",
                    c.len(),
                    cfg.n_particles
                )));
            }
            Ok(c.clone())
        }
        InitCondition::ProductStationary => {
            let xs = m1.sample(cfg.n_particles, cfg.seed ^ 0x5151_0000_0001);
            let ys = m2.sample(cfg.n_particles, cfg.seed ^ 0x5151_0000_0002);
            ParticleCloud::uniform(xs, ys, 0.0)
        }
    }
}

fn diagnostics_for(
    cloud: &ParticleCloud,
    m1: &StationaryDensity1D,
    m2: &StationaryDensity1D,
) -> Result<SnapshotDiagnostics> {
    let (m2nd, se) = second_moment(cloud);
    Ok(SnapshotDiagnostics {
        time: cloud.time,
        second_moment: m2nd,
        second_moment_se: se,
        xy_correlation: pearson(cloud),
        marginal_w1_x: m1.wasserstein1(&cloud.xs)?,
        marginal_w1_y: m2.wasserstein1(&cloud.ys)?,
    })
}

/// Runs the configured simulation, recording snapshots and diagnostics.
pub fn run(cs: &CoefficientSet, cfg: &SimConfig) -> Result<SimOutput> {
    check_preconditions(cs, cfg)?;
    let (m1, m2) = stationary_marginals(cs)?;
    let init = initial_cloud(cs, cfg, &m1, &m2)?;
    let weights = init.weights.clone();
    let mut xs = init.xs.clone();
    let mut ys = init.ys.clone();

    let snaps = snapshot_steps(cfg.n_steps, cfg.n_snapshots);
    let mut snapshots = Vec::with_capacity(snaps.len());
    let mut diag = Vec::with_capacity(snaps.len());
    let mut snapshot_times = Vec::with_capacity(snaps.len());

    let record = |xs: &[f64],
                  ys: &[f64],
                  t: f64,
                  snapshots: &mut Vec<ParticleCloud>,
                  diag: &mut Vec<SnapshotDiagnostics>,
                  times: &mut Vec<f64>|
     -> Result<()> {
        let cloud = ParticleCloud::new(xs.to_vec(), ys.to_vec(), weights.clone(), t)?;
        diag.push(diagnostics_for(&cloud, &m1, &m2)?);
        snapshots.push(cloud);
        times.push(t);
        Ok(())
    };

    if snaps.first() == Some(&0) {
        record(&xs, &ys, 0.0, &mut snapshots, &mut diag, &mut snapshot_times)?;
    }
    let seed = cfg.seed;
    for step_idx in 0..cfg.n_steps {
        let cloud = ParticleCloud::new(xs.clone(), ys.clone(), weights.clone(), cfg.dt * step_idx as f64)?;
        let fields = prepare_fields(&cloud, cs, cfg)?;
        if let Some(pid) = advance(
            &mut xs,
            &mut ys,
            cs,
            &cfg.coupling,
            &fields,
            cfg.dt,
            |i| normal_pair(seed, STREAM_MAIN, i as u64, step_idx as u64),
        ) {
            return Err(CoreError::Blowup {
                step: step_idx,
                message: format!("particle {pid} left the finite range"),
            });
        }
        if snaps.contains(&(step_idx + 1)) {
            let t = cfg.dt * (step_idx + 1) as f64;
            record(&xs, &ys, t, &mut snapshots, &mut diag, &mut snapshot_times)?;
        }
    }
    let final_cloud = snapshots
        .last()
        .cloned()
        .unwrap_or(ParticleCloud::new(xs, ys, weights, cfg.horizon())?);
    Ok(SimOutput {
        final_cloud,
        snapshot_times,
        snapshots,
        diagnostics: diag,
    })
}

/// Simulates independent marginal diffusions and reads the X-coordinate on
/// the random clock `tau_t = int_0^t f^2(Y_s) ds`. Requires `h = f^2`; the
/// reported clouds are `(X_{tau_t}, Y_t)`.
pub fn run_time_change(cs: &CoefficientSet, cfg: &SimConfig) -> Result<SimOutput> {
    check_preconditions(cs, cfg)?;
    let dom = marginal_domain(cs);
    if !cs.h_is_f_squared(dom, 1e-8) {
        return Err(CoreError::Config(
            "time-change construction requires h = f^2".into(),
        ));
    }
    let (m1, m2) = stationary_marginals(cs)?;
    let init = initial_cloud(cs, cfg, &m1, &m2)?;
    let weights = init.weights.clone();
    let n = cfg.n_particles;

    // per-particle state: Y on the outer clock; X bracketed on its own clock
    let mut ys = init.ys.clone();
    let mut tau = vec![0.0f64; n];
    let mut clock = vec![0u64; n];
    let mut xa = init.xs.clone();
    let mut xb = vec![0.0f64; n];
    let dt = cfg.dt;
    let sqdt = dt.sqrt();
    let seed = cfg.seed;
    let euler_x = |x: f64, z: f64| x + cs.b1.eval(x) * dt + cs.sigma1.eval(x) * sqdt * z;
    for i in 0..n {
        let (z, _) = normal_pair(seed, STREAM_TIME_CHANGE, i as u64, 0);
        xb[i] = euler_x(xa[i], z);
    }

    let snaps = snapshot_steps(cfg.n_steps, cfg.n_snapshots);
    let mut snapshots = Vec::new();
    let mut diag = Vec::new();
    let mut snapshot_times = Vec::new();

    let x_at_tau = |xa: &[f64], xb: &[f64], tau: &[f64], clock: &[u64]| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let w = (tau[i] / dt - clock[i] as f64).clamp(0.0, 1.0);
                xa[i] + (xb[i] - xa[i]) * w
            })
            .collect()
    };

    if snaps.first() == Some(&0) {
        let cloud = ParticleCloud::new(
            x_at_tau(&xa, &xb, &tau, &clock),
            ys.clone(),
            weights.clone(),
            0.0,
        )?;
        diag.push(diagnostics_for(&cloud, &m1, &m2)?);
        snapshot_times.push(0.0);
        snapshots.push(cloud);
    }

    for step_idx in 0..cfg.n_steps {
        let bad = ys
            .par_chunks_mut(CHUNK)
            .zip(tau.par_chunks_mut(CHUNK))
            .zip(clock.par_chunks_mut(CHUNK))
            .zip(xa.par_chunks_mut(CHUNK))
            .zip(xb.par_chunks_mut(CHUNK))
            .enumerate()
            .map(|(chunk_idx, ((((cy, ctau), cclock), cxa), cxb))| {
                let base = chunk_idx * CHUNK;
                for l in 0..cy.len() {
                    let pid = (base + l) as u64;
                    // left-endpoint quadrature of f^2(Y) on the outer clock
                    let fv = cs.f.eval(cy[l]);
                    ctau[l] += fv * fv * dt;
                    let (_, eta) = normal_pair(seed, STREAM_MAIN, pid, step_idx as u64);
                    cy[l] += cs.b2.eval(cy[l]) * dt + cs.sigma2.eval(cy[l]) * sqdt * eta;
                    while ctau[l] >= (cclock[l] + 1) as f64 * dt {
                        cclock[l] += 1;
                        cxa[l] = cxb[l];
                        let (z, _) = normal_pair(seed, STREAM_TIME_CHANGE, pid, cclock[l]);
                        cxb[l] = euler_x(cxb[l], z);
                    }
                    if !(cy[l].is_finite() && cxb[l].is_finite()) {
                        return Some(base + l);
                    }
                }
                None
            })
            .collect::<Vec<_>>();
        if let Some(pid) = bad.into_iter().flatten().next() {
            return Err(CoreError::Blowup {
                step: step_idx,
                message: format!("particle {pid} left the finite range"),
            });
        }
        if snaps.contains(&(step_idx + 1)) {
            let t = dt * (step_idx + 1) as f64;
            let cloud = ParticleCloud::new(
                x_at_tau(&xa, &xb, &tau, &clock),
                ys.clone(),
                weights.clone(),
                t,
            )?;
            diag.push(diagnostics_for(&cloud, &m1, &m2)?);
            snapshot_times.push(t);
            snapshots.push(cloud);
        }
    }
    let final_cloud = snapshots.last().cloned().expect("at least one snapshot");
    Ok(SimOutput {
        final_cloud,
        snapshot_times,
        snapshots,
        diagnostics: diag,
    })
}

/// Regression-built 1D mimicking run: per-snapshot W1 distances between the
/// mimicking marginal and the full system's X-marginal, plus the regressed
/// coefficients.
#[derive(Debug, Clone)]
pub struct MimickingReport {
    /// `(time, W1)` per snapshot of the source run.
    pub distances: Vec<(f64, f64)>,
    pub grid: Vec<f64>,
    pub drift: Vec<f64>,
    pub diffusion_sq: Vec<f64>,
}

/// Builds the 1D mimicking coefficients `bhat(x) = E[b | X = x]`,
/// `sighat^2(x) = E[s^2 | X = x]` by kernel regression of the realized
/// coefficients on X at the final snapshot, simulates the mimicking SDE from
/// the run's initial X-sample, and reports per-snapshot W1 distances.
pub fn mimick_check(
    output: &SimOutput,
    cs: &CoefficientSet,
    cfg: &SimConfig,
) -> Result<MimickingReport> {
    let cloud = &output.final_cloud;
    let k = &cs.constants;
    let fields = prepare_fields(cloud, cs, cfg)?;
    let (g_drift, g_diff) = match &fields {
        StepFields::Conditional { g_drift, g_diff } => (Some(g_drift), Some(g_diff)),
        StepFields::Decoupled => (None, None),
    };

    // realized per-particle coefficients, mirroring the step formulas
    let n = cloud.len();
    let mut drift_real = Vec::with_capacity(n);
    let mut diff2_real = Vec::with_capacity(n);
    for i in 0..n {
        let (x, y) = (cloud.xs[i], cloud.ys[i]);
        let (ratio, dif) = match (g_drift, g_diff) {
            (Some(gd), Some(gf)) => (
                (cs.h.eval(y) * gd.eval(x)).clamp(k.h_low / k.h_high, k.h_high / k.h_low),
                cs.f.eval(y) * gf.eval(x).sqrt(),
            ),
            _ => (1.0, 1.0),
        };
        drift_real.push(cs.b1.eval(x) * ratio);
        let s = cs.sigma1.eval(x) * dif;
        diff2_real.push(s * s);
    }

    // Nadaraya-Watson regression of the realized coefficients on X
    let (lo, hi) = cloud.x_range();
    let grid = uniform_grid(lo, hi, 65);
    let bw = rule_of_thumb_bandwidth(cloud);
    let mut drift_hat = vec![0.0f64; grid.len()];
    let mut diff2_hat = vec![0.0f64; grid.len()];
    for (gi, &gx) in grid.iter().enumerate() {
        let mut wsum = 0.0;
        let mut dsum = 0.0;
        let mut ssum = 0.0;
        for i in 0..n {
            let u = (gx - cloud.xs[i]) / bw;
            if u.abs() > 8.0 {
                continue;
            }
            let w = cloud.weights[i] * (-0.5 * u * u).exp();
            wsum += w;
            dsum += w * drift_real[i];
            ssum += w * diff2_real[i];
        }
        if wsum > 0.0 {
            drift_hat[gi] = dsum / wsum;
            diff2_hat[gi] = (ssum / wsum).max(1e-12);
        } else {
            diff2_hat[gi] = 1e-12;
        }
    }
    let eval_on = |table: &[f64], x: f64| -> f64 {
        if x <= grid[0] {
            return table[0];
        }
        if x >= *grid.last().unwrap() {
            return *table.last().unwrap();
        }
        let h = grid[1] - grid[0];
        let t = (x - grid[0]) / h;
        let i = (t.floor() as usize).min(grid.len() - 2);
        let w = t - i as f64;
        table[i] * (1.0 - w) + table[i + 1] * w
    };

    // mimicking SDE from the run's initial X-sample
    let mut xs = output.snapshots[0].xs.clone();
    let sqdt = cfg.dt.sqrt();
    let mut distances = Vec::new();
    let snaps = snapshot_steps(cfg.n_steps, cfg.n_snapshots);
    let mut snap_iter = 0usize;
    if snaps.first() == Some(&0) {
        distances.push((
            0.0,
            crate::stationary1d::wasserstein1_empirical(&xs, &output.snapshots[0].xs)?,
        ));
        snap_iter = 1;
    }
    for step_idx in 0..cfg.n_steps {
        xs.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, cx)| {
            let base = ci * CHUNK;
            for l in 0..cx.len() {
                let (z, _) =
                    normal_pair(cfg.seed, STREAM_MIMIC, (base + l) as u64, step_idx as u64);
                let x = cx[l];
                cx[l] = x + eval_on(&drift_hat, x) * cfg.dt
                    + eval_on(&diff2_hat, x).sqrt() * sqdt * z;
            }
        });
        if snap_iter < snaps.len() && snaps[snap_iter] == step_idx + 1 {
            let w1 = crate::stationary1d::wasserstein1_empirical(
                &xs,
                &output.snapshots[snap_iter].xs,
            )?;
            distances.push((output.snapshot_times[snap_iter], w1));
            snap_iter += 1;
        }
    }
    Ok(MimickingReport {
        distances,
        grid,
        drift: drift_hat,
        diffusion_sq: diff2_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::catalog;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_noise_step_is_deterministic_euler() {
        let cs = catalog::gaussian_decoupled().unwrap();
        let mut cfg = SimConfig::new(3, 1e-3, 1, 9);
        cfg.coupling = CouplingMode::McKeanVlasov;
        let cloud =
            ParticleCloud::uniform(vec![1.0, 1.0, 1.0], vec![0.5, 0.5, 0.5], 0.0).unwrap();
        let out = step(&cloud, &cs, &cfg, &[(0.0, 0.0); 3]).unwrap();
        for &x in &out.xs {
            assert_abs_diff_eq!(x, 1.0 - 1e-3, epsilon = 1e-15);
        }
    }

    /// With constant f, h the conditional ratios cancel exactly and the
    /// full-system step agrees bitwise with the decoupled reference.
    #[test]
    fn constant_coupling_matches_decoupled_bitwise() {
        let cs = catalog::gaussian_decoupled().unwrap();
        let n = 4096;
        let mut mv = SimConfig::new(n, 1e-3, 25, 42);
        mv.coupling = CouplingMode::McKeanVlasov;
        let mut dec = mv.clone();
        dec.coupling = CouplingMode::Decoupled;
        let a = run(&cs, &mv).unwrap();
        let b = run(&cs, &dec).unwrap();
        assert_eq!(a.final_cloud.xs, b.final_cloud.xs);
        assert_eq!(a.final_cloud.ys, b.final_cloud.ys);
    }

    #[test]
    fn identical_configs_are_bitwise_identical() {
        let cs = catalog::ou_logistic_hf2().unwrap();
        let mut cfg = SimConfig::new(2048, 1e-3, 50, 7);
        cfg.coupling = CouplingMode::McKeanVlasov;
        let a = run(&cs, &cfg).unwrap();
        let b = run(&cs, &cfg).unwrap();
        assert_eq!(a.final_cloud.xs, b.final_cloud.xs);
        assert_eq!(a.final_cloud.ys, b.final_cloud.ys);
        for (da, db) in a.diagnostics.iter().zip(&b.diagnostics) {
            assert_eq!(da.second_moment, db.second_moment);
            assert_eq!(da.marginal_w1_x, db.marginal_w1_x);
        }
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let cs = catalog::ou_logistic_hf2().unwrap();
        let mut cfg = SimConfig::new(3000, 1e-3, 20, 31);
        cfg.coupling = CouplingMode::McKeanVlasov;
        let pool1 = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let pool2 = rayon::ThreadPoolBuilder::new().num_threads(2).build().unwrap();
        let a = pool1.install(|| run(&cs, &cfg)).unwrap();
        let b = pool2.install(|| run(&cs, &cfg)).unwrap();
        assert_eq!(a.final_cloud.xs, b.final_cloud.xs);
        assert_eq!(a.final_cloud.ys, b.final_cloud.ys);
    }

    #[test]
    fn decoupled_run_stays_on_stationary_marginals() {
        let cs = catalog::gaussian_decoupled().unwrap();
        let mut cfg = SimConfig::new(20_000, 2e-3, 500, 3);
        cfg.coupling = CouplingMode::Decoupled;
        let out = run(&cs, &cfg).unwrap();
        let scale = 1.0; // domain scale of the standard normal marginals
        let tol = 5.0 * scale / (cfg.n_particles as f64).sqrt();
        for d in &out.diagnostics {
            assert!(d.marginal_w1_x < 3.0 * tol, "w1_x {} at t={}", d.marginal_w1_x, d.time);
            assert!(d.marginal_w1_y < 3.0 * tol, "w1_y {} at t={}", d.marginal_w1_y, d.time);
        }
    }

    #[test]
    fn dt_cap_is_enforced() {
        let cs = catalog::gaussian_decoupled().unwrap();
        let cfg = SimConfig::new(10, 0.5, 10, 1);
        assert!(matches!(run(&cs, &cfg), Err(CoreError::Config(_))));
        let mut over = SimConfig::new(10, 0.5, 10, 1);
        over.dt_cap_override = true;
        assert!(run(&cs, &over).is_ok());
    }

    #[test]
    fn time_change_refuses_general_h() {
        let cs = catalog::ou_tanh_general().unwrap();
        let cfg = SimConfig::new(10, 1e-3, 10, 1);
        assert!(matches!(
            run_time_change(&cs, &cfg),
            Err(CoreError::Config(_))
        ));
    }

    #[test]
    fn time_change_tau_increments_bounded() {
        let cs = catalog::ou_logistic_hf2().unwrap();
        // tau' = f^2(Y) in [f_low^2, f_high^2]; with dt steps the clock
        // advances by at most f_high^2 dt, so after n steps
        // tau <= n dt f_high^2; probe via the X-clock index
        let mut cfg = SimConfig::new(500, 1e-3, 200, 5);
        cfg.n_snapshots = 2;
        let out = run_time_change(&cs, &cfg).unwrap();
        // the reported X(tau) stays finite and the run is reproducible
        let out2 = run_time_change(&cs, &cfg).unwrap();
        assert_eq!(out.final_cloud.xs, out2.final_cloud.xs);
    }

    #[test]
    fn time_change_identity_for_constant_f() {
        // f = 1: tau = t and the construction is the decoupled system read
        // on its own clock; marginals match the decoupled run's in W1
        let cs = catalog::gaussian_decoupled().unwrap();
        let n = 20_000;
        let mut tc = SimConfig::new(n, 2e-3, 400, 17);
        tc.n_snapshots = 2;
        let out_tc = run_time_change(&cs, &tc).unwrap();
        let mut dec = SimConfig::new(n, 2e-3, 400, 17);
        dec.coupling = CouplingMode::Decoupled;
        dec.n_snapshots = 2;
        let out_dec = run(&cs, &dec).unwrap();
        let w1 = crate::stationary1d::wasserstein1_empirical(
            &out_tc.final_cloud.xs,
            &out_dec.final_cloud.xs,
        )
        .unwrap();
        let tol = 5.0 / (n as f64).sqrt();
        assert!(w1 < 3.0 * tol, "w1 {w1} vs tol {tol}");
    }

    #[test]
    fn mimicking_decoupled_recovers_b1() {
        let cs = catalog::gaussian_decoupled().unwrap();
        let mut cfg = SimConfig::new(30_000, 2e-3, 300, 23);
        cfg.coupling = CouplingMode::Decoupled;
        cfg.n_snapshots = 3;
        let out = run(&cs, &cfg).unwrap();
        let report = mimick_check(&out, &cs, &cfg).unwrap();
        // bhat ~ b1 = -x and sighat^2 ~ 2 on the bulk of the support
        for (gi, &x) in report.grid.iter().enumerate() {
            if x.abs() > 2.0 {
                continue;
            }
            assert!(
                (report.drift[gi] + x).abs() < 0.15,
                "bhat({x}) = {}",
                report.drift[gi]
            );
            assert!(
                (report.diffusion_sq[gi] - 2.0).abs() < 0.15,
                "sighat2({x}) = {}",
                report.diffusion_sq[gi]
            );
        }
        for &(t, w1) in &report.distances {
            assert!(w1 < 0.05, "w1 {w1} at t={t}");
        }
    }
}
