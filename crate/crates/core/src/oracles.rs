//! Reference computations: box quadrature, the L² error of the posterior
//! mean surface, and importance sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bq::{residual_vector, DenseGram, DiagnosticConfig};
use crate::error::{positive, Error, Result};
use crate::grids::{to_interrogation, PreliminaryGrid};
use crate::integrand::{gaussian_approx, mvt_log_density, GaussianApprox, IntegrandSpec, LogDensity};
use crate::linalg::sq_dist;
use crate::special::{LN_2PI, Z95};

/// Upper bound on the number of cells any box rule may visit.
pub const MAX_CELLS: u64 = 100_000_000;

/// Midpoints of a uniform partition of `[−halfwidth, halfwidth]`.
fn midpoints(halfwidth: f64, step: f64) -> Result<Vec<f64>> {
    let halfwidth = positive("halfwidth", halfwidth)?;
    let step = positive("step", step)?;
    let m = (2.0 * halfwidth / step).round();
    if m.is_nan() || m < 1.0 || m > MAX_CELLS as f64 {
        return Err(Error::CellCountOverflow { cells: m, limit: MAX_CELLS as f64 });
    }
    let m = m as usize;
    let h = 2.0 * halfwidth / m as f64;
    Ok((0..m).map(|k| -halfwidth + h * (k as f64 + 0.5)).collect())
}

fn check_cells(axis: usize, d: usize) -> Result<()> {
    let cells = (axis as f64).powi(d as i32);
    if cells > MAX_CELLS as f64 {
        return Err(Error::CellCountOverflow { cells, limit: MAX_CELLS as f64 });
    }
    Ok(())
}

/// Tensor midpoint nodes, yielded slab by slab along the first axis.
fn box_points(axis: &[f64], d: usize, first: usize) -> Vec<Vec<f64>> {
    let rest = d - 1;
    let count = axis.len().pow(rest as u32);
    (0..count)
        .map(|mut idx| {
            let mut p = vec![0.0; d];
            p[0] = axis[first];
            for slot in p.iter_mut().skip(1).rev() {
                *slot = axis[idx % axis.len()];
                idx /= axis.len();
            }
            p
        })
        .collect()
}

/// Midpoint-rule integral of `exp(log f)` over `[−halfwidth, halfwidth]^d`, `d ≤ 3`.
pub fn riemann_integrate(density: &dyn LogDensity, halfwidth: f64, step: f64) -> Result<f64> {
    let d = density.dim();
    if d == 0 || d > 3 {
        return Err(Error::InvalidParameter { name: "dim", value: d as f64 });
    }
    let axis = midpoints(halfwidth, step)?;
    check_cells(axis.len(), d)?;
    let h = 2.0 * halfwidth / axis.len() as f64;
    let slabs: Result<Vec<f64>> = (0..axis.len())
        .into_par_iter()
        .map(|i| {
            let mut sum = 0.0;
            for p in box_points(&axis, d, i) {
                sum += density.log_density(&p)?.exp();
            }
            Ok(sum)
        })
        .collect();
    Ok(slabs?.iter().sum::<f64>() * h.powi(d as i32))
}

/// Precomputed pieces of `∫(m₁ˣ·g − f)²` on a midpoint box, so that
/// repeated evaluation over `λ` only re-solves the Gram system.
pub struct L2Problem {
    grid: PreliminaryGrid,
    residuals: Vec<f64>,
    /// Per cell: standardized coordinates.
    cells_u: Vec<Vec<f64>>,
    /// Per cell: original coordinates (for surface export).
    cells_x: Vec<Vec<f64>>,
    /// Per cell: `f̂·exp(−‖u‖²/2) − f(x)`.
    base: Vec<f64>,
    /// Per cell: `f̂·g̃(u)`.
    weight: Vec<f64>,
    cell_volume: f64,
}

impl L2Problem {
    pub fn new(spec: &IntegrandSpec, grid: &PreliminaryGrid, gamma: f64, halfwidth: f64, step: f64) -> Result<Self> {
        let gamma = positive("gamma", gamma)?;
        let d = spec.dim();
        if d != grid.dim {
            return Err(Error::DimensionMismatch { expected: grid.dim, got: d });
        }
        if d > 2 {
            return Err(Error::InvalidParameter { name: "dim", value: d as f64 });
        }
        let approx = gaussian_approx(spec)?;
        let igrid = to_interrogation(grid, &approx)?;
        let residuals = residual_vector(spec, &approx, &igrid, gamma)?;
        let axis = midpoints(halfwidth, step)?;
        check_cells(axis.len(), d)?;
        let h = 2.0 * halfwidth / axis.len() as f64;
        let cells_x: Vec<Vec<f64>> = (0..axis.len()).flat_map(|i| box_points(&axis, d, i)).collect();
        let log_f = spec.density().log_density_batch(&cells_x)?;
        let lfm = approx.log_f_mode;
        let dd = d as f64;
        let cells_u: Vec<Vec<f64>> = cells_x.par_iter().map(|x| approx.to_standardized(x)).collect();
        let (base, weight) = cells_u
            .par_iter()
            .zip(&log_f)
            .map(|(u, &lf)| {
                let r2: f64 = u.iter().map(|v| v * v).sum();
                let phi = (lfm - 0.5 * r2).exp();
                let g = (lfm - 0.5 * dd * LN_2PI - dd * gamma.ln() - r2 / (2.0 * gamma * gamma)).exp();
                (phi - lf.exp(), g)
            })
            .unzip();
        Ok(Self { grid: grid.clone(), residuals, cells_u, cells_x, base, weight, cell_volume: h.powi(d as i32) })
    }

    /// Fails once the Gram matrix loses all significant digits, where the
    /// surface is rounding noise.
    fn weights(&self, lambda: f64) -> Result<Vec<f64>> {
        let gram = DenseGram::new(&self.grid, lambda, false)?;
        if gram.rcond() < f64::EPSILON {
            return Err(Error::GramSingular { rcond: gram.rcond() });
        }
        Ok(gram.solve(&self.residuals))
    }

    fn differences(&self, lambda: f64) -> Result<Vec<f64>> {
        let w = self.weights(lambda)?;
        let pts: Vec<&Vec<f64>> = self.grid.points().collect();
        let scale = -0.5 / (lambda * lambda);
        Ok(self
            .cells_u
            .par_iter()
            .zip(&self.base)
            .zip(&self.weight)
            .map(|((u, b), g)| {
                let kw: f64 = pts.iter().zip(&w).map(|(s, wi)| wi * (scale * sq_dist(u, s)).exp()).sum();
                b + g * kw
            })
            .collect())
    }

    /// `∫(m₁ˣ·g − f)²` at length-scale `λ`.
    pub fn error(&self, lambda: f64) -> Result<f64> {
        positive("lambda", lambda)?;
        Ok(self.differences(lambda)?.iter().map(|v| v * v).sum::<f64>() * self.cell_volume)
    }

    /// `∫(m₁ˣ·g − f)`, which equals `m1` minus the true box integral.
    pub fn signed_error(&self, lambda: f64) -> Result<f64> {
        positive("lambda", lambda)?;
        Ok(self.differences(lambda)?.iter().sum::<f64>() * self.cell_volume)
    }

    /// CSV rows `x1[,x2],value` of the difference surface `m₁ˣ·g − f`.
    pub fn surface_csv(&self, lambda: f64) -> Result<String> {
        positive("lambda", lambda)?;
        let diffs = self.differences(lambda)?;
        let d = self.grid.dim;
        let mut out = if d == 1 { String::from("x1,value\n") } else { String::from("x1,x2,value\n") };
        for (x, v) in self.cells_x.iter().zip(diffs) {
            let coords: Vec<String> = x.iter().map(|c| format!("{c}")).collect();
            out.push_str(&format!("{},{v:e}\n", coords.join(",")));
        }
        Ok(out)
    }
}

/// Midpoint-rule `∫(m₁ˣ(x)g(x) − f(x))² dx` over `[−halfwidth, halfwidth]^d`, `d ≤ 2`.
pub fn l2_error(config: &DiagnosticConfig, spec: &IntegrandSpec, halfwidth: f64, step: f64) -> Result<f64> {
    L2Problem::new(spec, &config.grid, config.gamma, halfwidth, step)?.error(config.lambda)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsResult {
    pub estimate: f64,
    pub std_error: f64,
    pub ci95: (f64, f64),
    pub n_samples: usize,
    /// Largest normalized weight.
    pub max_weight_fraction: f64,
    /// `(Σw)²/Σw²`.
    pub ess: f64,
}

const IS_BLOCK: usize = 4096;

/// Draws from the multivariate t proposal centred at the mode with scale
/// `−H⁻¹`, returning the points and `log q` at each.
fn sample_proposal(approx: &GaussianApprox, n: usize, df: f64, seed: u64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = approx.dim();
    let chi = ChiSquared::new(df).map_err(|_| Error::InvalidParameter { name: "df", value: df })?;
    let log_det_scale = 0.5 * approx.log_det_neg_hinv;
    let blocks: Vec<(Vec<Vec<f64>>, Vec<f64>)> = (0..n.div_ceil(IS_BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let len = IS_BLOCK.min(n - b * IS_BLOCK);
            let mut xs = Vec::with_capacity(len);
            let mut lq = Vec::with_capacity(len);
            for _ in 0..len {
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                let w: f64 = chi.sample(&mut rng);
                let scale = (df / w).sqrt();
                let y: Vec<f64> = z.iter().map(|v| v * scale).collect();
                let x = approx.to_original(&y);
                lq.push(mvt_log_density(&y, df, d).unwrap_or(f64::NAN) - log_det_scale);
                xs.push(x);
            }
            (xs, lq)
        })
        .collect();
    let mut xs = Vec::with_capacity(n);
    let mut lq = Vec::with_capacity(n);
    for (bx, bq) in blocks {
        xs.extend(bx);
        lq.extend(bq);
    }
    Ok((xs, lq))
}

/// Log importance weights `log f(xᵢ) − log q(xᵢ)` for a multivariate t
/// proposal with `df` degrees of freedom. Deterministic for a fixed seed,
/// independent of thread count.
pub fn importance_log_weights(spec: &IntegrandSpec, n_samples: usize, df: f64, seed: u64) -> Result<Vec<f64>> {
    positive("df", df)?;
    if n_samples < 2 {
        return Err(Error::InvalidParameter { name: "n_samples", value: n_samples as f64 });
    }
    let approx = gaussian_approx(spec)?;
    let (xs, lq) = sample_proposal(&approx, n_samples, df, seed)?;
    let lf = spec.density().log_density_batch(&xs)?;
    lf.iter()
        .zip(&lq)
        .enumerate()
        .map(|(i, (f, q))| {
            if f.is_nan() || *f == f64::INFINITY {
                Err(Error::NonFiniteLogF { index: i, value: *f })
            } else {
                Ok(f - q)
            }
        })
        .collect()
}

/// Plain-mean importance estimate with a normal 95% interval.
pub fn summarize_weights(log_w: &[f64]) -> Result<IsResult> {
    let n = log_w.len();
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::AllWeightsZero);
    }
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = w.iter().sum();
    let sum_sq: f64 = w.iter().map(|v| v * v).sum();
    let mean = sum / n as f64;
    let var = w.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
    let scale = max.exp();
    let estimate = mean * scale;
    let std_error = (var / n as f64).sqrt() * scale;
    Ok(IsResult {
        estimate,
        std_error,
        ci95: (estimate - Z95 * std_error, estimate + Z95 * std_error),
        n_samples: n,
        max_weight_fraction: 1.0 / sum,
        ess: sum * sum / sum_sq,
    })
}

pub fn importance_sample(spec: &IntegrandSpec, n_samples: usize, df: f64, seed: u64) -> Result<IsResult> {
    summarize_weights(&importance_log_weights(spec, n_samples, df, seed)?)
}

/// Histogram of `log10` normalized weights (largest weight = 0) as CSV.
pub fn weight_histogram_csv(log_w: &[f64], bins: usize) -> String {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let l10: Vec<f64> = log_w.iter().filter(|l| l.is_finite()).map(|l| (l - max) / std::f64::consts::LN_10).collect();
    let lo = l10.iter().copied().fold(0.0, f64::min);
    let bins = bins.max(1);
    let width = if lo < 0.0 { -lo / bins as f64 } else { 1.0 };
    let mut counts = vec![0usize; bins];
    for v in &l10 {
        let k = (((v - lo) / width) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let mut out = String::from("lo,hi,count\n");
    for (k, c) in counts.iter().enumerate() {
        out.push_str(&format!("{},{},{c}\n", lo + k as f64 * width, lo + (k + 1) as f64 * width));
    }
    out
}

/// Box-rule value of `∫exp(−‖u − s‖²/(2λ²))·N(u; 0, γ²I) du`; a check on the
/// closed form in [`crate::bq::kernel_mean`].
pub fn kernel_mean_numeric(s: &[f64], lambda: f64, gamma: f64, halfwidth: f64, step: f64) -> Result<f64> {
    let d = s.len();
    let axis = midpoints(halfwidth, step)?;
    check_cells(axis.len(), d)?;
    let h = 2.0 * halfwidth / axis.len() as f64;
    let dd = d as f64;
    let sum: f64 = (0..axis.len())
        .into_par_iter()
        .map(|i| {
            box_points(&axis, d, i)
                .iter()
                .map(|u| {
                    let r2: f64 = u.iter().map(|v| v * v).sum();
                    let g = (-0.5 * dd * LN_2PI - dd * gamma.ln() - r2 / (2.0 * gamma * gamma)).exp();
                    (-sq_dist(u, s) / (2.0 * lambda * lambda)).exp() * g
                })
                .sum::<f64>()
        })
        .sum();
    Ok(sum * h.powi(d as i32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grids::cross2d_grid;
    use crate::integrand::{Banana, FnDensity, Gaussian, StudentT};
    use std::sync::Arc;

    #[test]
    fn gaussian_box_integral() {
        let g = Gaussian::standard(2).spec().unwrap();
        let v = riemann_integrate(g.density().as_ref(), 10.0, 0.01).unwrap();
        assert!((v - 1.0).abs() < 1e-4, "{v}");
    }

    #[test]
    fn box_rule_converges_at_second_order() {
        let f = FnDensity::new(1, |x: &[f64]| -(x[0] - 0.3).powi(2) / 0.8 + 0.1 * x[0].sin());
        let a = riemann_integrate(&f, 2.0, 0.4).unwrap();
        let b = riemann_integrate(&f, 2.0, 0.2).unwrap();
        let c = riemann_integrate(&f, 2.0, 0.1).unwrap();
        assert!((a - b).abs() < 4.5 * (b - c).abs() && (a - b).abs() > 3.5 * (b - c).abs());
    }

    #[test]
    fn three_dimensional_box() {
        let g = Gaussian::standard(3).spec().unwrap();
        let v = riemann_integrate(g.density().as_ref(), 8.0, 0.1).unwrap();
        assert!((v - 1.0).abs() < 1e-6, "{v}");
    }

    #[test]
    fn cell_limit_is_enforced() {
        let g = Gaussian::standard(3).spec().unwrap();
        let err = riemann_integrate(g.density().as_ref(), 10.0, 0.01).unwrap_err();
        assert!(matches!(err, Error::CellCountOverflow { .. }));
        let g4 = Gaussian::standard(4).spec().unwrap();
        assert!(riemann_integrate(g4.density().as_ref(), 1.0, 0.5).is_err());
    }

    #[test]
    fn l2_error_vanishes_for_gaussians() {
        let g = Gaussian::new(vec![0.5, -1.0], nalgebra::DMatrix::from_row_slice(2, 2, &[1.5, 0.4, 0.4, 0.7]), 0.0).unwrap();
        let config = DiagnosticConfig::new(cross2d_grid(), 4.2241, 1.2734, 0.0).unwrap();
        let e = l2_error(&config, &g.spec().unwrap(), 10.0, 0.05).unwrap();
        assert!(e < 1e-12, "{e}");
    }

    #[test]
    fn l2_error_prefers_calibrated_lambda() {
        let spec = StudentT::new(38.0, 2).unwrap().spec().unwrap();
        let p = L2Problem::new(&spec, &cross2d_grid(), 1.2734, 10.0, 0.05).unwrap();
        let best = p.error(4.2241).unwrap();
        assert!(best <= p.error(0.0729).unwrap());
        assert!(best <= p.error(9.0).unwrap());
        assert!(matches!(p.error(21.0), Err(Error::GramSingular { .. })));
    }

    #[test]
    fn signed_error_matches_posterior_mean() {
        let spec = StudentT::new(38.0, 2).unwrap().spec().unwrap();
        let config = DiagnosticConfig::new(cross2d_grid(), 4.2241, 1.2734, 0.0).unwrap();
        let rep = crate::bq::diagnose(&spec, &config).unwrap();
        let p = L2Problem::new(&spec, &config.grid, config.gamma, 40.0, 0.05).unwrap();
        let box_mass = riemann_integrate(spec.density().as_ref(), 40.0, 0.05).unwrap();
        assert!((p.signed_error(4.2241).unwrap() - (rep.m1 - box_mass)).abs() < 1e-6);
    }

    #[test]
    fn is_is_deterministic_and_covers_truth() {
        let spec = StudentT::new(38.0, 2).unwrap().spec().unwrap();
        let a = importance_sample(&spec, 20_000, 5.0, 7).unwrap();
        let b = importance_sample(&spec, 20_000, 5.0, 7).unwrap();
        assert_eq!(a, b);
        assert!((a.estimate - 1.0).abs() < 3.0 * a.std_error);
        assert!(a.ci95.0 <= a.estimate && a.estimate <= a.ci95.1);
        assert!(a.ess <= a.n_samples as f64 && a.max_weight_fraction > 0.0 && a.max_weight_fraction <= 1.0);
    }

    #[test]
    fn is_on_banana() {
        let spec = Banana.spec().unwrap();
        let r = importance_sample(&spec, 50_000, 5.0, 1).unwrap();
        assert!((r.estimate - 1.0).abs() < 3.0 * r.std_error, "{r:?}");
    }

    #[test]
    fn zero_weights_are_reported() {
        assert!(matches!(summarize_weights(&[f64::NEG_INFINITY; 4]), Err(Error::AllWeightsZero)));
        let spec = IntegrandSpec::new(
            Arc::new(FnDensity::new(1, |x: &[f64]| if x[0] == 0.0 { 0.0 } else { f64::NEG_INFINITY })),
            vec![0.0],
            nalgebra::DMatrix::from_element(1, 1, -1.0),
        )
        .unwrap();
        assert!(matches!(importance_sample(&spec, 100, 5.0, 0), Err(Error::AllWeightsZero)));
    }

    #[test]
    fn histogram_counts_every_weight() {
        let lw = vec![0.0, -1.0, -2.0, -5.0, -0.5];
        let csv = weight_histogram_csv(&lw, 3);
        let total: usize = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn numeric_kernel_mean_is_consistent() {
        let v = kernel_mean_numeric(&[0.4], 0.9, 1.3, 12.0, 0.01).unwrap();
        let c = crate::bq::kernel_mean(&[0.4], 0.9, 0.0, 1.3).unwrap().exp();
        assert!((v / c - 1.0).abs() < 1e-8);
    }
}
