//! Hyperparameter calibration against the multivariate t test function.
//!
//! `ν_d` is the smallest integer whose t density has a Laplace approximation
//! within the threshold of its true integral (1). `γ` follows a closed rule,
//! `λ` is chosen either by minimizing the L² error of the posterior mean
//! surface (low `d`) or by matching `m1` to the true integral over a sweep,
//! and `α` places the test function exactly on the rejection boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bq::{residual_vector, DiagnosticConfig, QuadratureRule, SolveOptions, BOUNDARY_TOL};
use crate::error::{positive, Error, Result};
use crate::grids::{to_interrogation, GridSpec, PreliminaryGrid};
use crate::integrand::{gaussian_approx, laplace_approx, mvt_laplace, IntegrandSpec, StudentT};
use crate::optim::{bfgs, BfgsOptions};
use crate::oracles::L2Problem;
use crate::special::Z95;

/// Default ratio `L(τ)/∫τ` that defines `ν_d`.
pub const LA_THRESHOLD: f64 = 0.95;

/// Starting length-scales for the L² multistart.
pub const L2_STARTS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

/// Smallest integer `ν` with `L(τ_{ν,d}) ≥ 0.95`.
pub fn find_nu(d: usize) -> Result<u64> {
    find_nu_with_threshold(d, LA_THRESHOLD)
}

pub fn find_nu_with_threshold(d: usize, threshold: f64) -> Result<u64> {
    if d == 0 {
        return Err(Error::InvalidParameter { name: "dim", value: 0.0 });
    }
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidParameter { name: "threshold", value: threshold });
    }
    let ok = |nu: u64| -> Result<bool> { Ok(mvt_laplace(nu as f64, d)? >= threshold) };
    if ok(1)? {
        return Ok(1);
    }
    let mut lo = 1u64;
    let mut hi = 2u64;
    while !ok(hi)? {
        lo = hi;
        hi = hi.checked_mul(2).ok_or(Error::InvalidParameter { name: "threshold", value: threshold })?;
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `γ = √(1.5·(ν + d)/(ν + d − 3))`.
pub fn gamma_rule(nu: f64, d: usize) -> Result<f64> {
    let s = positive("nu", nu)? + d as f64;
    if s <= 3.0 {
        return Err(Error::InvalidParameter { name: "nu", value: nu });
    }
    Ok((1.5 * s / (s - 3.0)).sqrt())
}

/// Normalized residuals of `f` on a grid, independent of `λ` and `α`.
#[derive(Debug, Clone)]
pub struct Interrogation {
    pub residuals: Vec<f64>,
    pub log_la: f64,
}

impl Interrogation {
    pub fn new(spec: &IntegrandSpec, grid: &PreliminaryGrid, gamma: f64) -> Result<Self> {
        let approx = gaussian_approx(spec)?;
        let igrid = to_interrogation(grid, &approx)?;
        Ok(Self { residuals: residual_vector(spec, &approx, &igrid, gamma)?, log_la: laplace_approx(&approx) })
    }
}

/// `log α` that puts `|Δ|` exactly on `z_crit·√C̃₁`.
pub fn solve_alpha_for(rule: &QuadratureRule, residuals: &[f64], z_crit: f64) -> Result<f64> {
    let delta = rule.correction(residuals)?;
    if delta == 0.0 || !delta.is_finite() {
        return Err(Error::DegenerateCalibration);
    }
    let c1 = rule.unit_posterior_variance();
    if c1.is_nan() || c1 <= 0.0 {
        return Err(Error::NonPositiveVariance(c1));
    }
    Ok((2.0 * z_crit.ln() + c1.ln() - 2.0 * delta.abs().ln()) / rule.dim as f64)
}

/// `log α` placing `τ_{ν,d}` on the rejection boundary for `(grid, γ, λ)`.
pub fn solve_alpha(grid: &PreliminaryGrid, nu: f64, gamma: f64, lambda: f64, z_crit: f64) -> Result<f64> {
    let spec = StudentT::new(nu, grid.dim)?.spec()?;
    let probe = Interrogation::new(&spec, grid, gamma)?;
    let rule = QuadratureRule::new(grid, lambda, gamma, SolveOptions::default())?;
    solve_alpha_for(&rule, &probe.residuals, z_crit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Start {
    pub start: f64,
    pub lambda: f64,
    pub error: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L2Calibration {
    pub lambda: f64,
    pub error: f64,
    pub starts: Vec<L2Start>,
}

/// Multistart BFGS over `log λ` on the box-rule L² error of `f`.
pub fn calibrate_lambda_l2_for(
    spec: &IntegrandSpec,
    grid: &PreliminaryGrid,
    gamma: f64,
    halfwidth: f64,
    step: f64,
    opts: BfgsOptions,
) -> Result<L2Calibration> {
    let problem = L2Problem::new(spec, grid, gamma, halfwidth, step)?;
    let scale = L2_STARTS
        .iter()
        .filter_map(|&l| problem.error(l).ok())
        .filter(|e| e.is_finite() && *e > 0.0)
        .fold(f64::INFINITY, f64::min);
    let scale = if scale.is_finite() { scale } else { 1.0 };
    let objective = |x: &[f64]| problem.error(x[0].exp()).map(|e| e / scale).unwrap_or(f64::INFINITY);
    let mut starts = Vec::new();
    for &start in &L2_STARTS {
        match bfgs(objective, &[start.ln()], opts) {
            Ok(r) => starts.push(L2Start {
                start,
                lambda: r.x[0].exp(),
                error: r.value * scale,
                iterations: r.iterations,
                converged: r.converged,
            }),
            Err(_) => starts.push(L2Start { start, lambda: f64::NAN, error: f64::INFINITY, iterations: 0, converged: false }),
        }
    }
    let best = starts
        .iter()
        .filter(|s| s.error.is_finite())
        .min_by(|a, b| a.error.total_cmp(&b.error))
        .ok_or(Error::OptimizationDiverged)?;
    Ok(L2Calibration { lambda: best.lambda, error: best.error, starts })
}

/// [`calibrate_lambda_l2_for`] on `τ_{ν,d}` with default optimizer settings.
pub fn calibrate_lambda_l2(grid: &PreliminaryGrid, nu: f64, gamma: f64, halfwidth: f64, step: f64) -> Result<L2Calibration> {
    let spec = StudentT::new(nu, grid.dim)?.spec()?;
    calibrate_lambda_l2_for(&spec, grid, gamma, halfwidth, step, BfgsOptions::default())
}

/// `0.5, 0.6, …, 10.0`.
pub fn default_lambda_candidates() -> Vec<f64> {
    (5..=100).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub m1: f64,
    pub c1_unit: f64,
    pub log_alpha: Option<f64>,
    pub rcond: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetCalibration {
    pub lambda: f64,
    pub m1: f64,
    pub sweep: Vec<SweepRow>,
}

/// Evaluates `m1`, `C̃₁(α=1)`, the boundary `α` and rcond for each candidate.
pub fn lambda_sweep(
    probe: &Interrogation,
    grid: &PreliminaryGrid,
    gamma: f64,
    candidates: &[f64],
    z_crit: f64,
    opts: SolveOptions,
) -> Vec<SweepRow> {
    candidates
        .par_iter()
        .map(|&lambda| match QuadratureRule::new(grid, lambda, gamma, opts) {
            Ok(rule) => {
                let delta = rule.correction(&probe.residuals).unwrap_or(f64::NAN);
                let la = probe.log_la.exp();
                let m1 = la * (1.0 + delta * (-0.5 * grid.dim as f64 * crate::special::LN_2PI).exp());
                let log_alpha = solve_alpha_for(&rule, &probe.residuals, z_crit).ok();
                SweepRow { lambda, m1, c1_unit: rule.unit_posterior_variance(), log_alpha, rcond: rule.rcond, error: None }
            }
            Err(e) => SweepRow { lambda, m1: f64::NAN, c1_unit: f64::NAN, log_alpha: None, rcond: f64::NAN, error: Some(e.to_string()) },
        })
        .collect()
}

/// Picks the candidate whose `m1` on `f` is closest to `target`; ties go to
/// the earliest candidate.
pub fn calibrate_lambda_target_for(
    spec: &IntegrandSpec,
    grid: &PreliminaryGrid,
    gamma: f64,
    candidates: &[f64],
    target: f64,
) -> Result<TargetCalibration> {
    if candidates.is_empty() {
        return Err(Error::AllCandidatesFailed);
    }
    let probe = Interrogation::new(spec, grid, gamma)?;
    let sweep = lambda_sweep(&probe, grid, gamma, candidates, Z95, SolveOptions::default());
    let mut best: Option<&SweepRow> = None;
    for row in sweep.iter().filter(|r| r.error.is_none() && r.m1.is_finite()) {
        if best.is_none_or(|b| (row.m1 - target).abs() < (b.m1 - target).abs()) {
            best = Some(row);
        }
    }
    let best = best.ok_or(Error::AllCandidatesFailed)?;
    Ok(TargetCalibration { lambda: best.lambda, m1: best.m1, sweep: sweep.clone() })
}

/// [`calibrate_lambda_target_for`] on `τ_{ν,d}`, target integral 1.
pub fn calibrate_lambda_target(grid: &PreliminaryGrid, nu: f64, gamma: f64, candidates: &[f64]) -> Result<TargetCalibration> {
    let spec = StudentT::new(nu, grid.dim)?.spec()?;
    calibrate_lambda_target_for(&spec, grid, gamma, candidates, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMethod {
    L2Optimized,
    TargetM1,
    Fixed,
}

#[derive(Debug, Clone)]
pub enum LambdaChoice {
    L2 { halfwidth: f64, step: f64 },
    Target { candidates: Vec<f64> },
    Fixed(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct CalibrationOptions {
    pub la_threshold: f64,
    pub z_crit: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self { la_threshold: LA_THRESHOLD, z_crit: Z95 }
    }
}

#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub config: DiagnosticConfig,
    pub nu: u64,
    pub achieved_m1: f64,
    /// `(|Δ(τ)| − ε)/ε` after the `α` solve.
    pub boundary_residual: f64,
    pub method: CalibrationMethod,
    pub la_threshold: f64,
    pub rcond: f64,
    pub l2: Option<L2Calibration>,
    pub sweep: Option<Vec<SweepRow>>,
}

/// Full calibration of a grid: `ν_d`, `γ`, `λ`, then `α`.
pub fn calibrate(grid: &PreliminaryGrid, choice: &LambdaChoice, opts: CalibrationOptions) -> Result<CalibrationResult> {
    let d = grid.dim;
    let nu = find_nu_with_threshold(d, opts.la_threshold)?;
    let gamma = gamma_rule(nu as f64, d)?;
    let spec = StudentT::new(nu as f64, d)?.spec()?;
    let (lambda, method, l2, sweep) = match choice {
        LambdaChoice::L2 { halfwidth, step } => {
            let r = calibrate_lambda_l2_for(&spec, grid, gamma, *halfwidth, *step, BfgsOptions::default())?;
            (r.lambda, CalibrationMethod::L2Optimized, Some(r), None)
        }
        LambdaChoice::Target { candidates } => {
            let r = calibrate_lambda_target_for(&spec, grid, gamma, candidates, 1.0)?;
            (r.lambda, CalibrationMethod::TargetM1, None, Some(r.sweep))
        }
        LambdaChoice::Fixed(l) => (positive("lambda", *l)?, CalibrationMethod::Fixed, None, None),
    };
    let probe = Interrogation::new(&spec, grid, gamma)?;
    let rule = QuadratureRule::new(grid, lambda, gamma, SolveOptions::default())?;
    let log_alpha = solve_alpha_for(&rule, &probe.residuals, opts.z_crit)?;
    let config = DiagnosticConfig::new(grid.clone(), lambda, gamma, log_alpha)?.with_z_crit(opts.z_crit)?;
    let post = rule.posterior(&probe.residuals, log_alpha, opts.z_crit, probe.log_la)?;
    let boundary_residual = (post.delta.abs() - post.epsilon) / post.epsilon;
    debug_assert!(boundary_residual.abs() <= BOUNDARY_TOL);
    Ok(CalibrationResult {
        config,
        nu,
        achieved_m1: post.m1(),
        boundary_residual,
        method,
        la_threshold: opts.la_threshold,
        rcond: rule.rcond,
        l2,
        sweep,
    })
}

/// On-disk calibration artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub dim: usize,
    pub grid: GridSpec,
    pub nu: u64,
    pub gamma: f64,
    pub lambda: f64,
    pub log_alpha: f64,
    pub alpha: f64,
    pub z_crit: f64,
    pub la_threshold: f64,
    pub method: CalibrationMethod,
    pub achieved_m1: f64,
    pub boundary_residual: f64,
    pub rcond: f64,
    pub created_by_version: String,
}

impl CalibrationFile {
    pub fn from_result(r: &CalibrationResult) -> Self {
        Self {
            dim: r.config.dim(),
            grid: r.config.grid.to_spec(),
            nu: r.nu,
            gamma: r.config.gamma,
            lambda: r.config.lambda,
            log_alpha: r.config.log_alpha,
            alpha: r.config.alpha(),
            z_crit: r.config.z_crit,
            la_threshold: r.la_threshold,
            method: r.method,
            achieved_m1: r.achieved_m1,
            boundary_residual: r.boundary_residual,
            rcond: r.rcond,
            created_by_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn to_config(&self) -> Result<DiagnosticConfig> {
        let grid = self.grid.build()?;
        if grid.dim != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: grid.dim });
        }
        DiagnosticConfig::new(grid, self.lambda, self.gamma, self.log_alpha)?.with_z_crit(self.z_crit)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
