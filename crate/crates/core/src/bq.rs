//! Bayesian-quadrature engine.
//!
//! All algebra happens in standardized coordinates `s* = T⁻¹(s − x̂)`, with
//! function values normalized by `N = f(x̂)·√det(−H⁻¹)`. In these units
//!
//! * the kernel is `α^{-d}·exp(−‖u − v‖²/(2λ²))`,
//! * the integrating measure is `N(0, γ²I)`,
//! * the prior mean integrates to `L(f)/N = (2π)^{d/2}`,
//! * `m1 = L(f) + N·Δ(f)` and `C1 = N²·C̃1`.
//!
//! The quadrature weights `K⁻¹z` do not depend on `α`; `α` only scales `C̃1`
//! by `α^{-d}`, so it is applied at the end in log space.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{positive, Error, Result};
use crate::grids::{to_interrogation, GridFamily, InterrogationGrid, PreliminaryGrid};
use crate::integrand::{gaussian_approx, laplace_approx, GaussianApprox, IntegrandSpec};
use crate::linalg::{gram_matrix, rcond_exact, sq_dist, SpdSolver};
use crate::special::{ln_two_sided_p, two_sided_p, LN_2PI, Z95};

/// Above this many points the dense Gram matrix is skipped in favour of the
/// reduced orbit system.
pub const DENSE_LIMIT: usize = 2000;

/// Relative band around the critical value that counts as "on the boundary".
pub const BOUNDARY_TOL: f64 = 1e-10;

/// Hyperparameters bound to a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticConfig {
    pub grid: PreliminaryGrid,
    pub lambda: f64,
    pub gamma: f64,
    pub log_alpha: f64,
    /// Critical value of the two-sided normal interval.
    pub z_crit: f64,
}

impl DiagnosticConfig {
    pub fn new(grid: PreliminaryGrid, lambda: f64, gamma: f64, log_alpha: f64) -> Result<Self> {
        positive("lambda", lambda)?;
        positive("gamma", gamma)?;
        if !log_alpha.is_finite() {
            return Err(Error::InvalidParameter { name: "log_alpha", value: log_alpha });
        }
        Ok(Self { grid, lambda, gamma, log_alpha, z_crit: Z95 })
    }

    pub fn with_z_crit(mut self, z_crit: f64) -> Result<Self> {
        self.z_crit = positive("z_crit", z_crit)?;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.grid.dim
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }
}

/// `log κ(u, v) = −d·log α − ‖u − v‖²/(2λ²)`.
pub fn kernel(u: &[f64], v: &[f64], lambda: f64, log_alpha: f64) -> Result<f64> {
    positive("lambda", lambda)?;
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), got: v.len() });
    }
    let d = u.len() as f64;
    Ok(-d * log_alpha - sq_dist(u, v) / (2.0 * lambda * lambda))
}

/// `log ∫κ(u, s*)·N(u; 0, γ²I) du`.
pub fn kernel_mean(s_star: &[f64], lambda: f64, log_alpha: f64, gamma: f64) -> Result<f64> {
    positive("lambda", lambda)?;
    positive("gamma", gamma)?;
    Ok(log_kernel_mean_unit(s_star.iter().map(|v| v * v).sum(), s_star.len(), lambda, gamma) - s_star.len() as f64 * log_alpha)
}

fn log_kernel_mean_unit(r2: f64, d: usize, lambda: f64, gamma: f64) -> f64 {
    let l2 = lambda * lambda;
    let s2 = l2 + gamma * gamma;
    0.5 * d as f64 * (l2 / s2).ln() - r2 / (2.0 * s2)
}

/// `log ∬κ(u, v)·N(u)·N(v) du dv`, the prior variance of the integral.
pub fn double_kernel_mean(lambda: f64, log_alpha: f64, gamma: f64, d: usize) -> Result<f64> {
    positive("lambda", lambda)?;
    positive("gamma", gamma)?;
    let l2 = lambda * lambda;
    Ok(-(d as f64) * log_alpha + 0.5 * d as f64 * (l2 / (l2 + 2.0 * gamma * gamma)).ln())
}

/// `log[m₀ˣ(s)/N] = (d/2)·log 2π + d·log γ − ½‖s*‖²·(1 − 1/γ²)`.
pub fn prior_mean_interrogation(s_star: &[f64], gamma: f64) -> Result<f64> {
    positive("gamma", gamma)?;
    let d = s_star.len() as f64;
    let r2: f64 = s_star.iter().map(|v| v * v).sum();
    Ok(0.5 * d * LN_2PI + d * gamma.ln() - 0.5 * r2 * (1.0 - 1.0 / (gamma * gamma)))
}

/// Log density of the standardized measure `N(0, γ²I)`.
fn log_measure_density(r2: f64, d: usize, gamma: f64) -> f64 {
    let d = d as f64;
    -0.5 * d * LN_2PI - d * gamma.ln() - r2 / (2.0 * gamma * gamma)
}

/// Normalized residuals `(r(sᵢ) − m₀ˣ(sᵢ))/N` at every interrogation point.
pub fn residual_vector(spec: &IntegrandSpec, approx: &GaussianApprox, grid: &InterrogationGrid, gamma: f64) -> Result<Vec<f64>> {
    positive("gamma", gamma)?;
    let log_f = spec.density().log_density_batch(&grid.rows())?;
    residuals_from_log_values(&log_f, approx.log_f_mode, &grid.standardized, gamma)
}

/// Residuals from precomputed `log f(sᵢ)` values.
pub fn residuals_from_log_values(log_f: &[f64], log_f_mode: f64, standardized: &[Vec<f64>], gamma: f64) -> Result<Vec<f64>> {
    if log_f.len() != standardized.len() {
        return Err(Error::DimensionMismatch { expected: standardized.len(), got: log_f.len() });
    }
    log_f
        .iter()
        .zip(standardized)
        .enumerate()
        .map(|(i, (&lf, s))| {
            if lf.is_nan() || lf == f64::INFINITY {
                return Err(Error::NonFiniteLogF { index: i, value: lf });
            }
            let r2: f64 = s.iter().map(|v| v * v).sum();
            let log_gauss = -0.5 * r2;
            let log_ratio = lf - log_f_mode;
            // ratio − gauss = gauss·expm1(log_ratio − log_gauss), then / g̃
            let scaled = (log_gauss - log_measure_density(r2, s.len(), gamma)).exp();
            let value = if log_ratio == f64::NEG_INFINITY {
                -scaled
            } else {
                scaled * (log_ratio - log_gauss).exp_m1()
            };
            if value.is_finite() {
                Ok(value)
            } else {
                Err(Error::NonFiniteLogF { index: i, value: lf })
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverPath {
    /// Dense below [`DENSE_LIMIT`] points, FSKQ above.
    #[default]
    Auto,
    Dense,
    Fskq,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SolveOptions {
    pub solver: SolverPath,
    /// Add `1e-12·max diag` to the Gram diagonal before factorizing.
    pub jitter: bool,
}

/// The `α`-free part of the posterior: weights `K⁻¹z` at unit precision.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub dim: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// One weight per grid point, in grid order.
    pub weights: Vec<f64>,
    /// One weight per orbit (mean over the orbit for the dense path).
    pub orbit_weights: Vec<f64>,
    /// `zᵀK⁻¹z` at `α = 1`.
    pub explained: f64,
    /// `C̃₀` at `α = 1`.
    pub prior_variance: f64,
    /// Reciprocal condition estimate: the dense Gram matrix, or the reduced
    /// orbit system on the FSKQ path.
    pub rcond: f64,
    pub solver: SolverPath,
}

impl QuadratureRule {
    pub fn new(grid: &PreliminaryGrid, lambda: f64, gamma: f64, opts: SolveOptions) -> Result<Self> {
        positive("lambda", lambda)?;
        positive("gamma", gamma)?;
        let use_dense = match opts.solver {
            SolverPath::Dense => true,
            SolverPath::Fskq => false,
            SolverPath::Auto => grid.n() <= DENSE_LIMIT,
        };
        let d = grid.dim;
        let prior_variance = double_kernel_mean(lambda, 0.0, gamma, d)?.exp();
        if use_dense {
            let dense = dense_weights(grid, lambda, gamma, opts.jitter)?;
            let labels = grid.orbit_labels();
            let mut orbit_weights = vec![0.0; grid.orbits.len()];
            for (w, &k) in dense.weights.iter().zip(&labels) {
                orbit_weights[k] += w / grid.orbits[k].size() as f64;
            }
            Ok(Self {
                dim: d,
                lambda,
                gamma,
                weights: dense.weights,
                orbit_weights,
                explained: dense.explained,
                prior_variance,
                rcond: dense.rcond,
                solver: SolverPath::Dense,
            })
        } else {
            let reduced = reduced_system(grid, lambda, gamma)?;
            let orbit_weights = reduced.solve()?;
            let weights = grid.orbit_labels().iter().map(|&k| orbit_weights[k]).collect();
            let explained = orbit_weights
                .iter()
                .zip(&reduced.kernel_means)
                .zip(&grid.orbits)
                .map(|((w, z), o)| w * z * o.size() as f64)
                .sum();
            Ok(Self {
                dim: d,
                lambda,
                gamma,
                weights,
                orbit_weights,
                explained,
                prior_variance,
                rcond: rcond_exact(&reduced.matrix),
                solver: SolverPath::Fskq,
            })
        }
    }

    /// `C̃₁` at `α = 1`.
    pub fn unit_posterior_variance(&self) -> f64 {
        self.prior_variance - self.explained
    }

    /// `Δ(f) = zᵀK⁻¹(r − m₀)`.
    pub fn correction(&self, residuals: &[f64]) -> Result<f64> {
        if residuals.len() != self.weights.len() {
            return Err(Error::DimensionMismatch { expected: self.weights.len(), got: residuals.len() });
        }
        Ok(self.weights.iter().zip(residuals).map(|(w, r)| w * r).sum())
    }

    pub fn posterior(&self, residuals: &[f64], log_alpha: f64, z_crit: f64, log_la: f64) -> Result<IntegralPosterior> {
        let delta = self.correction(residuals)?;
        let c1_unit = self.unit_posterior_variance();
        if c1_unit.is_nan() || c1_unit <= 0.0 {
            return Err(Error::NonPositiveVariance(c1_unit));
        }
        Ok(IntegralPosterior::assemble(delta, c1_unit.ln() - self.dim as f64 * log_alpha, self.dim, z_crit, log_la, self.rcond, self.solver))
    }
}

pub(crate) struct DenseWeights {
    pub weights: Vec<f64>,
    pub explained: f64,
    pub rcond: f64,
}

fn kernel_mean_vector(points: &[Vec<f64>], lambda: f64, gamma: f64) -> DVector<f64> {
    DVector::from_iterator(
        points.len(),
        points.iter().map(|p| log_kernel_mean_unit(p.iter().map(|v| v * v).sum(), p.len(), lambda, gamma).exp()),
    )
}

pub(crate) fn dense_weights(grid: &PreliminaryGrid, lambda: f64, gamma: f64, jitter: bool) -> Result<DenseWeights> {
    let points: Vec<Vec<f64>> = grid.points().cloned().collect();
    let solver = SpdSolver::new(gram_matrix(&points, lambda), jitter)?;
    let z = kernel_mean_vector(&points, lambda, gamma);
    let w = solver.solve(&z);
    Ok(DenseWeights { explained: w.dot(&z), weights: w.as_slice().to_vec(), rcond: solver.rcond })
}

/// Dense Gram factorization of a grid at unit precision, for callers that
/// need `K⁻¹b` for arbitrary `b` (the posterior mean surface).
pub struct DenseGram {
    solver: SpdSolver,
    pub points: Vec<Vec<f64>>,
    pub lambda: f64,
}

impl DenseGram {
    pub fn new(grid: &PreliminaryGrid, lambda: f64, jitter: bool) -> Result<Self> {
        positive("lambda", lambda)?;
        let points: Vec<Vec<f64>> = grid.points().cloned().collect();
        let solver = SpdSolver::new(gram_matrix(&points, lambda), jitter)?;
        Ok(Self { solver, points, lambda })
    }

    pub fn rcond(&self) -> f64 {
        self.solver.rcond
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        self.solver.solve(&DVector::from_column_slice(b)).as_slice().to_vec()
    }
}

struct ReducedSystem {
    matrix: DMatrix<f64>,
    kernel_means: Vec<f64>,
}

impl ReducedSystem {
    fn solve(&self) -> Result<Vec<f64>> {
        let rhs = DVector::from_column_slice(&self.kernel_means);
        let sol = self.matrix.clone().lu().solve(&rhs).ok_or(Error::ReducedSystemSingular)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::ReducedSystemSingular);
        }
        Ok(sol.as_slice().to_vec())
    }
}

fn reduced_system(grid: &PreliminaryGrid, lambda: f64, gamma: f64) -> Result<ReducedSystem> {
    let m = grid.orbits.len();
    let scale = -0.5 / (lambda * lambda);
    let mut matrix = DMatrix::zeros(m, m);
    for (i, oi) in grid.orbits.iter().enumerate() {
        let rep = oi.representative();
        for (j, oj) in grid.orbits.iter().enumerate() {
            matrix[(i, j)] = oj.points.iter().map(|p| (scale * sq_dist(rep, p)).exp()).sum();
        }
    }
    let kernel_means = grid
        .orbits
        .iter()
        .map(|o| log_kernel_mean_unit(o.radius().powi(2), grid.dim, lambda, gamma).exp())
        .collect();
    Ok(ReducedSystem { matrix, kernel_means })
}

/// One weight per orbit from the reduced system `K̃w̃ = z̃`.
///
/// `K̃_{IJ} = Σ_{j∈J} κ(rep_I, s_j)`; expanding `w̃` orbit-wise reproduces the
/// dense solution `K⁻¹z`. The weights do not depend on `α`.
pub fn fskq_orbit_weights(grid: &PreliminaryGrid, lambda: f64, log_alpha: f64, gamma: f64) -> Result<Vec<f64>> {
    positive("lambda", lambda)?;
    positive("gamma", gamma)?;
    if !log_alpha.is_finite() {
        return Err(Error::InvalidParameter { name: "log_alpha", value: log_alpha });
    }
    reduced_system(grid, lambda, gamma)?.solve()
}

/// Posterior on the integral, normalized by `L(f)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegralPosterior {
    /// `m1/L(f)`.
    pub m1_rel: f64,
    /// `C1/L(f)²`.
    pub c1_rel: f64,
    /// Normalized correction term `Δ(f)`.
    pub delta: f64,
    /// Rejection threshold on `|Δ|`.
    pub epsilon: f64,
    /// `|Δ|/√C̃₁ = |m1 − L|/√C1`.
    pub z_score: f64,
    pub z_crit: f64,
    pub log_la: f64,
    /// `log C̃₁` (normalized posterior variance).
    pub log_c1_normalized: f64,
    pub p_value: f64,
    pub log_p_value: f64,
    pub reject: bool,
    /// `|Δ|` equals `ε` to within [`BOUNDARY_TOL`] (relative); never rejected.
    pub boundary: bool,
    pub rcond: f64,
    pub solver: SolverPath,
}

impl IntegralPosterior {
    fn assemble(delta: f64, log_c1_normalized: f64, d: usize, z_crit: f64, log_la: f64, rcond: f64, solver: SolverPath) -> Self {
        let half_ln_2pi_d = 0.5 * d as f64 * LN_2PI;
        let sd = (0.5 * log_c1_normalized).exp();
        let z_score = (delta.abs().ln() - 0.5 * log_c1_normalized).exp();
        let boundary = (z_score - z_crit).abs() <= BOUNDARY_TOL * z_crit;
        Self {
            m1_rel: 1.0 + delta * (-half_ln_2pi_d).exp(),
            c1_rel: (log_c1_normalized - 2.0 * half_ln_2pi_d).exp(),
            delta,
            epsilon: z_crit * sd,
            z_score,
            z_crit,
            log_la,
            log_c1_normalized,
            p_value: two_sided_p(z_score),
            log_p_value: ln_two_sided_p(z_score),
            reject: !boundary && z_score > z_crit,
            boundary,
            rcond,
            solver,
        }
    }

    pub fn m1(&self) -> f64 {
        self.log_la.exp() * self.m1_rel
    }

    pub fn c1(&self) -> f64 {
        (2.0 * self.log_la).exp() * self.c1_rel
    }
}

/// `posterior` for a config and a residual vector, via the default solver.
pub fn posterior(config: &DiagnosticConfig, approx: &GaussianApprox, residuals: &[f64]) -> Result<IntegralPosterior> {
    if approx.dim() != config.dim() {
        return Err(Error::DimensionMismatch { expected: config.dim(), got: approx.dim() });
    }
    let rule = QuadratureRule::new(&config.grid, config.lambda, config.gamma, SolveOptions::default())?;
    rule.posterior(residuals, config.log_alpha, config.z_crit, laplace_approx(approx))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitContribution {
    pub generator: Vec<f64>,
    pub radius: f64,
    pub size: usize,
    pub weight: f64,
    pub residual_sum: f64,
    /// `N·Σ_{i∈orbit} wᵢrᵢ`: this orbit's share of `m1 − L(f)`.
    pub mass: f64,
    /// `mass / L(f)`.
    pub mass_rel: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DiagnosticReport {
    pub dim: usize,
    pub n_points: usize,
    pub grid_family: GridFamily,
    pub grid_scale: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub log_alpha: f64,
    pub laplace: f64,
    pub m1: f64,
    pub c1: f64,
    pub posterior: IntegralPosterior,
    pub orbit_contributions: Vec<OrbitContribution>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl DiagnosticReport {
    pub fn reject(&self) -> bool {
        self.posterior.reject
    }

    pub fn orbit_csv(&self) -> String {
        let mut out = String::from("orbit,generator,radius,size,weight,residual_sum,mass,mass_rel\n");
        for (k, c) in self.orbit_contributions.iter().enumerate() {
            let gen: Vec<String> = c.generator.iter().map(|g| format!("{g}")).collect();
            out.push_str(&format!(
                "{k},{},{},{},{:e},{:e},{:e},{:e}\n",
                gen.join(" "),
                c.radius,
                c.size,
                c.weight,
                c.residual_sum,
                c.mass,
                c.mass_rel
            ));
        }
        out
    }
}

pub fn diagnose(spec: &IntegrandSpec, config: &DiagnosticConfig) -> Result<DiagnosticReport> {
    diagnose_with(spec, config, SolveOptions::default())
}

/// Full pipeline: Gaussian approximation, interrogation, residuals, posterior.
pub fn diagnose_with(spec: &IntegrandSpec, config: &DiagnosticConfig, opts: SolveOptions) -> Result<DiagnosticReport> {
    let start = Instant::now();
    if spec.dim() != config.dim() {
        return Err(Error::DimensionMismatch { expected: config.dim(), got: spec.dim() });
    }
    let approx = gaussian_approx(spec)?;
    let igrid = to_interrogation(&config.grid, &approx)?;
    let residuals = residual_vector(spec, &approx, &igrid, config.gamma)?;
    let rule = QuadratureRule::new(&config.grid, config.lambda, config.gamma, opts)?;
    let log_la = laplace_approx(&approx);
    let posterior = rule.posterior(&residuals, config.log_alpha, config.z_crit, log_la)?;
    let orbit_contributions = orbit_contributions(&config.grid, &rule, &residuals, approx.log_scale_n, log_la);
    Ok(DiagnosticReport {
        dim: config.dim(),
        n_points: config.grid.n(),
        grid_family: config.grid.family,
        grid_scale: config.grid.scale,
        lambda: config.lambda,
        gamma: config.gamma,
        log_alpha: config.log_alpha,
        laplace: log_la.exp(),
        m1: posterior.m1(),
        c1: posterior.c1(),
        posterior,
        orbit_contributions,
        elapsed: start.elapsed(),
    })
}

fn orbit_contributions(grid: &PreliminaryGrid, rule: &QuadratureRule, residuals: &[f64], log_scale_n: f64, log_la: f64) -> Vec<OrbitContribution> {
    let mut sums = vec![(0.0, 0.0); grid.orbits.len()];
    for ((&k, w), r) in grid.orbit_labels().iter().zip(&rule.weights).zip(residuals) {
        sums[k].0 += r;
        sums[k].1 += w * r;
    }
    grid.orbits
        .iter()
        .zip(&rule.orbit_weights)
        .zip(sums)
        .map(|((o, &weight), (residual_sum, weighted))| OrbitContribution {
            generator: o.generator.clone(),
            radius: o.radius(),
            size: o.size(),
            weight,
            residual_sum,
            mass: log_scale_n.exp() * weighted,
            mass_rel: (log_scale_n - log_la).exp() * weighted,
        })
        .collect()
}
