//! Integrands under test, their Laplace approximation, and the built-in
//! test functions.
//!
//! Every function value is handled as `log f`. Densities in high dimension
//! underflow long before the diagnostic loses precision, and only ratios
//! `f(s)/f(x̂)` ever enter the posterior.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{positive, Error, Result};
use crate::special::{ln_gamma_ratio, LN_2PI, PI};

/// Evaluator of `log f` on `R^d`.
///
/// Implementations must be callable from several threads at once. `-∞` is a
/// legal return value (f = 0); `+∞` and NaN are rejected by the engine.
pub trait LogDensity: Send + Sync {
    fn dim(&self) -> usize;

    fn log_density(&self, x: &[f64]) -> Result<f64>;

    /// Evaluate a batch of points. The default evaluates in parallel.
    fn log_density_batch(&self, points: &[Vec<f64>]) -> Result<Vec<f64>> {
        points.par_iter().map(|p| self.log_density(p)).collect()
    }
}

/// Wraps a plain closure as a [`LogDensity`].
pub struct FnDensity<F> {
    dim: usize,
    f: F,
}

impl<F> FnDensity<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> LogDensity for FnDensity<F>
where
    F: Fn(&[f64]) -> f64 + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        Ok((self.f)(x))
    }
}

/// A positive function on `R^d` together with its mode and the Hessian of
/// `log f` at the mode.
#[derive(Clone)]
pub struct IntegrandSpec {
    density: Arc<dyn LogDensity>,
    mode: DVector<f64>,
    hessian: DMatrix<f64>,
    log_f_mode: f64,
}

impl fmt::Debug for IntegrandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IntegrandSpec")
            .field("dim", &self.dim())
            .field("mode", &self.mode.as_slice())
            .field("log_f_mode", &self.log_f_mode)
            .finish_non_exhaustive()
    }
}

impl IntegrandSpec {
    /// Build a spec from an explicit Hessian. The Hessian is symmetrized.
    pub fn new(density: Arc<dyn LogDensity>, mode: Vec<f64>, hessian: DMatrix<f64>) -> Result<Self> {
        let d = density.dim();
        if d == 0 {
            return Err(Error::InvalidParameter { name: "dim", value: 0.0 });
        }
        if mode.len() != d {
            return Err(Error::DimensionMismatch { expected: d, got: mode.len() });
        }
        if hessian.nrows() != d || hessian.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: hessian.nrows() });
        }
        if hessian.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteHessian);
        }
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        check_negative_definite(&hessian)?;
        let log_f_mode = density.log_density(&mode)?;
        if !log_f_mode.is_finite() {
            return Err(Error::NonFiniteModeValue(log_f_mode));
        }
        Ok(Self { density, mode: DVector::from_vec(mode), hessian, log_f_mode })
    }

    /// Build a spec whose Hessian is taken by central differences at `mode`
    /// with step `1e-4·√scale_hint`.
    pub fn with_fd_hessian(density: Arc<dyn LogDensity>, mode: Vec<f64>, scale_hint: f64) -> Result<Self> {
        let scale_hint = positive("scale_hint", scale_hint)?;
        let h = 1e-4 * scale_hint.sqrt();
        let hessian = fd_hessian(density.as_ref(), &mode, h)?;
        Self::new(density, mode, hessian)
    }

    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    pub fn mode(&self) -> &DVector<f64> {
        &self.mode
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn log_f_mode(&self) -> f64 {
        self.log_f_mode
    }

    pub fn density(&self) -> &Arc<dyn LogDensity> {
        &self.density
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        self.density.log_density(x)
    }
}

/// Central-difference Hessian of a log density with a uniform step `h`.
pub fn fd_hessian(density: &dyn LogDensity, x: &[f64], h: f64) -> Result<DMatrix<f64>> {
    let d = x.len();
    if density.dim() != d {
        return Err(Error::DimensionMismatch { expected: density.dim(), got: d });
    }
    let at = |offsets: &[(usize, f64)]| -> Result<f64> {
        let mut p = x.to_vec();
        for &(i, o) in offsets {
            p[i] += o;
        }
        density.log_density(&p)
    };
    let f0 = at(&[])?;
    let mut hess = DMatrix::zeros(d, d);
    for i in 0..d {
        let fp = at(&[(i, h)])?;
        let fm = at(&[(i, -h)])?;
        hess[(i, i)] = (fp - 2.0 * f0 + fm) / (h * h);
        for j in 0..i {
            let fpp = at(&[(i, h), (j, h)])?;
            let fpm = at(&[(i, h), (j, -h)])?;
            let fmp = at(&[(i, -h), (j, h)])?;
            let fmm = at(&[(i, -h), (j, -h)])?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * h * h);
            hess[(i, j)] = v;
            hess[(j, i)] = v;
        }
    }
    if hess.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteHessian);
    }
    Ok(hess)
}

fn check_negative_definite(h: &DMatrix<f64>) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let eig = h.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let largest = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if largest.is_nan() || largest >= -1e-12 * max_abs || max_abs == 0.0 {
        return Err(Error::NotNegativeDefinite { max_eigenvalue: largest });
    }
    Ok(eig)
}

/// Eigendecomposition products of `−H⁻¹ = V·diag(D)·Vᵀ`.
#[derive(Debug, Clone)]
pub struct GaussianApprox {
    pub mode: DVector<f64>,
    /// Columns are eigenvectors, ordered by descending eigenvalue.
    pub eigvecs: DMatrix<f64>,
    /// Eigenvalues of `−H⁻¹`, descending.
    pub eigvals: DVector<f64>,
    /// `T = V·√D`.
    pub transform: DMatrix<f64>,
    pub log_det_neg_hinv: f64,
    pub log_f_mode: f64,
    /// `log f(x̂) + ½·log det(−H⁻¹)`.
    pub log_scale_n: f64,
}

impl GaussianApprox {
    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    /// `log L(f)`.
    pub fn log_laplace(&self) -> f64 {
        laplace_approx(self)
    }

    /// `T·s + x̂`.
    pub fn to_original(&self, standardized: &[f64]) -> Vec<f64> {
        let s = DVector::from_column_slice(standardized);
        (&self.transform * s + &self.mode).as_slice().to_vec()
    }

    /// `T⁻¹(x − x̂) = D^{-1/2}·Vᵀ(x − x̂)`.
    pub fn to_standardized(&self, x: &[f64]) -> Vec<f64> {
        let diff = DVector::from_column_slice(x) - &self.mode;
        let mut u = self.eigvecs.transpose() * diff;
        for (ui, di) in u.iter_mut().zip(self.eigvals.iter()) {
            *ui /= di.sqrt();
        }
        u.as_slice().to_vec()
    }

    /// `−H⁻¹` rebuilt from the decomposition.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.transform * self.transform.transpose()
    }
}

/// Eigendecompose `−H⁻¹` for the spec.
pub fn gaussian_approx(spec: &IntegrandSpec) -> Result<GaussianApprox> {
    let d = spec.dim();
    if spec.hessian.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteHessian);
    }
    let eig = check_negative_definite(&spec.hessian)?;
    // H = V diag(μ) Vᵀ  ⇒  −H⁻¹ = V diag(−1/μ) Vᵀ
    let mut order: Vec<(f64, DVector<f64>)> = (0..d)
        .map(|k| {
            let mut v = eig.eigenvectors.column(k).into_owned();
            if let Some(first) = v.iter().find(|c| c.abs() > 1e-14) {
                if *first < 0.0 {
                    v.neg_mut();
                }
            }
            (-1.0 / eig.eigenvalues[k], v)
        })
        .collect();
    let dominant = |v: &DVector<f64>| v.iamax();
    order.sort_by(|a, b| {
        let tie = (a.0 - b.0).abs() <= 1e-12 * a.0.abs().max(b.0.abs());
        if tie {
            dominant(&a.1).cmp(&dominant(&b.1))
        } else {
            b.0.total_cmp(&a.0)
        }
    });

    let eigvals = DVector::from_iterator(d, order.iter().map(|(l, _)| *l));
    let mut eigvecs = DMatrix::zeros(d, d);
    for (k, (_, v)) in order.iter().enumerate() {
        eigvecs.set_column(k, v);
    }
    let mut transform = eigvecs.clone();
    for (k, l) in eigvals.iter().enumerate() {
        let r = l.sqrt();
        transform.column_mut(k).scale_mut(r);
    }
    let log_det_neg_hinv: f64 = eigvals.iter().map(|l| l.ln()).sum();
    Ok(GaussianApprox {
        mode: spec.mode.clone(),
        eigvecs,
        eigvals,
        transform,
        log_det_neg_hinv,
        log_f_mode: spec.log_f_mode,
        log_scale_n: spec.log_f_mode + 0.5 * log_det_neg_hinv,
    })
}

/// `log L(f) = log f(x̂) + (d/2)·log 2π + ½·log det(−H⁻¹)`.
pub fn laplace_approx(approx: &GaussianApprox) -> f64 {
    approx.log_f_mode + 0.5 * approx.dim() as f64 * LN_2PI + 0.5 * approx.log_det_neg_hinv
}

fn t_log_normalizer(nu: f64, d: usize) -> f64 {
    let d = d as f64;
    ln_gamma_ratio(0.5 * nu, 0.5 * d) - 0.5 * d * (nu * PI).ln()
}

/// Log density of the standard `d`-variate Student t with identity scale.
pub fn mvt_log_density(x: &[f64], nu: f64, d: usize) -> Result<f64> {
    let nu = positive("nu", nu)?;
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok(t_log_normalizer(nu, d) - 0.5 * (nu + d as f64) * (r2 / nu).ln_1p())
}

/// Laplace approximation of the standard multivariate t density:
/// `(2/(ν+d))^{d/2}·Γ((ν+d)/2)/Γ(ν/2)`.
pub fn mvt_laplace(nu: f64, d: usize) -> Result<f64> {
    Ok(mvt_log_laplace(nu, d)?.exp())
}

pub fn mvt_log_laplace(nu: f64, d: usize) -> Result<f64> {
    let nu = positive("nu", nu)?;
    let df = d as f64;
    Ok(0.5 * df * (2.0 / (nu + df)).ln() + ln_gamma_ratio(0.5 * nu, 0.5 * df))
}

/// Banana-shaped density: a bivariate normal with covariance `diag(3, 1)`
/// evaluated at `(x₁, x₂ − ½(x₁² − 3))`.
pub fn banana_log_density(x: &[f64]) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, got: x.len() });
    }
    let y1 = x[0];
    let y2 = x[1] - 0.5 * (x[0] * x[0] - 3.0);
    Ok(-LN_2PI - 0.5 * 3f64.ln() - y1 * y1 / 6.0 - 0.5 * y2 * y2)
}

/// Product of `d` univariate t kernels sharing the `(ν+d)/2` exponent,
/// normalized so that it equals `τ_{ν,d}` at the origin (and hence on every
/// coordinate axis).
pub fn product_t_log_density(x: &[f64], nu: f64, d: usize) -> Result<f64> {
    let nu = positive("nu", nu)?;
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: x.len() });
    }
    let tails: f64 = x.iter().map(|v| (v * v / nu).ln_1p()).sum();
    Ok(t_log_normalizer(nu, d) - 0.5 * (nu + d as f64) * tails)
}

/// Closed-form integral of [`product_t_log_density`] over `R^d`.
pub fn product_t_integral(nu: f64, d: usize) -> Result<f64> {
    let nu = positive("nu", nu)?;
    let df = d as f64;
    let log = ln_gamma_ratio(0.5 * nu, 0.5 * df) - df * ln_gamma_ratio(0.5 * (nu + df - 1.0), 0.5);
    Ok(log.exp())
}

/// Standard multivariate t density `τ_{ν,d}`.
#[derive(Debug, Clone, Copy)]
pub struct StudentT {
    pub nu: f64,
    pub dim: usize,
}

impl StudentT {
    pub fn new(nu: f64, dim: usize) -> Result<Self> {
        positive("nu", nu)?;
        if dim == 0 {
            return Err(Error::InvalidParameter { name: "dim", value: 0.0 });
        }
        Ok(Self { nu, dim })
    }

    /// Mode at the origin, `H = −((ν+d)/ν)·I`.
    pub fn spec(self) -> Result<IntegrandSpec> {
        let c = (self.nu + self.dim as f64) / self.nu;
        let h = DMatrix::from_diagonal_element(self.dim, self.dim, -c);
        IntegrandSpec::new(Arc::new(self), vec![0.0; self.dim], h)
    }
}

impl LogDensity for StudentT {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        mvt_log_density(x, self.nu, self.dim)
    }
}

/// Product-t function `f_{ν,d}`; agrees with `τ_{ν,d}` on the axes.
#[derive(Debug, Clone, Copy)]
pub struct ProductT {
    pub nu: f64,
    pub dim: usize,
}

impl ProductT {
    pub fn new(nu: f64, dim: usize) -> Result<Self> {
        positive("nu", nu)?;
        if dim == 0 {
            return Err(Error::InvalidParameter { name: "dim", value: 0.0 });
        }
        Ok(Self { nu, dim })
    }

    pub fn spec(self) -> Result<IntegrandSpec> {
        let c = (self.nu + self.dim as f64) / self.nu;
        let h = DMatrix::from_diagonal_element(self.dim, self.dim, -c);
        IntegrandSpec::new(Arc::new(self), vec![0.0; self.dim], h)
    }
}

impl LogDensity for ProductT {
    fn dim(&self) -> usize {
        self.dim
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        product_t_log_density(x, self.nu, self.dim)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Banana;

impl Banana {
    /// Mode `(0, −1.5)`, `H = diag(−1/3, −1)`.
    pub fn spec(self) -> Result<IntegrandSpec> {
        let h = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0 / 3.0, -1.0]));
        IntegrandSpec::new(Arc::new(self), vec![0.0, -1.5], h)
    }
}

impl LogDensity for Banana {
    fn dim(&self) -> usize {
        2
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        banana_log_density(x)
    }
}

/// Multivariate normal density, optionally rescaled by `exp(log_scale)`.
#[derive(Debug, Clone)]
pub struct Gaussian {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl Gaussian {
    pub fn standard(dim: usize) -> Self {
        Self::new(vec![0.0; dim], DMatrix::identity(dim, dim), 0.0).expect("identity covariance")
    }

    /// `exp(log_scale)·N(mean, cov)`.
    pub fn new(mean: Vec<f64>, cov: DMatrix<f64>, log_scale: f64) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::DimensionMismatch { expected: d, got: cov.nrows() });
        }
        let chol = cov.clone().cholesky().ok_or(Error::NotNegativeDefinite { max_eigenvalue: f64::NAN })?;
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        Ok(Self {
            mean: DVector::from_vec(mean),
            precision,
            log_norm: log_scale - 0.5 * d as f64 * LN_2PI - 0.5 * log_det,
        })
    }

    /// Total mass `exp(log_scale)`.
    pub fn log_integral(&self) -> f64 {
        let d = self.mean.len() as f64;
        let log_det_prec: f64 = self.precision.clone().cholesky().map_or(f64::NAN, |c| {
            2.0 * c.l().diagonal().iter().map(|v| v.ln()).sum::<f64>()
        });
        self.log_norm + 0.5 * d * LN_2PI - 0.5 * log_det_prec
    }

    pub fn spec(self) -> Result<IntegrandSpec> {
        let mode = self.mean.as_slice().to_vec();
        let h = -self.precision.clone();
        IntegrandSpec::new(Arc::new(self), mode, h)
    }
}

impl LogDensity for Gaussian {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::DimensionMismatch { expected: self.mean.len(), got: x.len() });
        }
        let diff = DVector::from_column_slice(x) - &self.mean;
        let q = (&self.precision * &diff).dot(&diff);
        Ok(self.log_norm - 0.5 * q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Midpoint-rule oracle over a centered square, independent of `oracles`.
    fn riemann_2d(f: impl Fn(&[f64]) -> f64, halfwidth: f64, step: f64) -> f64 {
        let n = (2.0 * halfwidth / step).round() as usize;
        let mut total = 0.0;
        for i in 0..n {
            let x = -halfwidth + (i as f64 + 0.5) * step;
            for j in 0..n {
                let y = -halfwidth + (j as f64 + 0.5) * step;
                total += f(&[x, y]).exp();
            }
        }
        total * step * step
    }

    #[test]
    fn identity_hessian_gives_identity_transform() {
        let spec = IntegrandSpec::new(
            Arc::new(FnDensity::new(2, |x: &[f64]| -0.5 * (x[0] * x[0] + x[1] * x[1]))),
            vec![0.0, 0.0],
            -DMatrix::identity(2, 2),
        )
        .unwrap();
        let ga = gaussian_approx(&spec).unwrap();
        assert_relative_eq!(ga.transform, DMatrix::identity(2, 2), epsilon = 1e-14);
        assert_eq!(ga.log_det_neg_hinv, 0.0);
        assert_eq!(ga.log_scale_n, 0.0);
    }

    #[test]
    fn banana_transform() {
        let ga = gaussian_approx(&Banana.spec().unwrap()).unwrap();
        assert_relative_eq!(ga.eigvals[0], 3.0, max_relative = 1e-12);
        assert_relative_eq!(ga.eigvals[1], 1.0, max_relative = 1e-12);
        assert_relative_eq!(ga.log_det_neg_hinv.exp(), 3.0, max_relative = 1e-12);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![3f64.sqrt(), 1.0]));
        assert_relative_eq!(ga.transform, expected, epsilon = 1e-12);
        assert_relative_eq!(laplace_approx(&ga).exp(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn student_t_transform_and_laplace() {
        let ga = gaussian_approx(&StudentT::new(38.0, 2).unwrap().spec().unwrap()).unwrap();
        let expected = DMatrix::from_diagonal_element(2, 2, 0.95f64.sqrt());
        assert_relative_eq!(ga.transform, expected, epsilon = 1e-12);
        assert_relative_eq!(laplace_approx(&ga).exp(), 0.95, max_relative = 1e-12);
    }

    #[test]
    fn decomposition_reconstructs_covariance() {
        let h = DMatrix::from_row_slice(3, 3, &[-2.0, 0.3, 0.1, 0.3, -1.0, -0.2, 0.1, -0.2, -0.5]);
        let spec = IntegrandSpec::new(
            Arc::new(FnDensity::new(3, |_x: &[f64]| 0.0)),
            vec![0.0; 3],
            h.clone(),
        )
        .unwrap();
        let ga = gaussian_approx(&spec).unwrap();
        let neg_hinv = -h.try_inverse().unwrap();
        let vdv = &ga.eigvecs * DMatrix::from_diagonal(&ga.eigvals) * ga.eigvecs.transpose();
        assert_relative_eq!(vdv, neg_hinv, max_relative = 1e-8);
        assert_relative_eq!(ga.covariance(), neg_hinv, max_relative = 1e-8);
        assert!(ga.eigvals.as_slice().windows(2).all(|w| w[0] >= w[1]));
        for k in 0..3 {
            let first = ga.eigvecs.column(k).iter().copied().find(|c| c.abs() > 1e-14).unwrap();
            assert!(first > 0.0);
        }
        let x = [0.4, -1.2, 2.0];
        let back = ga.to_original(&ga.to_standardized(&x));
        for (a, b) in back.iter().zip(x) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn rejects_indefinite_and_non_finite_hessians() {
        let dens = Arc::new(FnDensity::new(2, |_x: &[f64]| 0.0));
        let indefinite = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.5]));
        assert!(matches!(
            IntegrandSpec::new(dens.clone(), vec![0.0, 0.0], indefinite),
            Err(Error::NotNegativeDefinite { .. })
        ));
        let semidef = DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 0.0]));
        assert!(matches!(
            IntegrandSpec::new(dens.clone(), vec![0.0, 0.0], semidef),
            Err(Error::NotNegativeDefinite { .. })
        ));
        let mut nan = -DMatrix::identity(2, 2);
        nan[(0, 1)] = f64::NAN;
        assert!(matches!(
            IntegrandSpec::new(dens, vec![0.0, 0.0], nan),
            Err(Error::NonFiniteHessian)
        ));
        let neg_inf_mode = Arc::new(FnDensity::new(1, |_x: &[f64]| f64::NEG_INFINITY));
        assert!(matches!(
            IntegrandSpec::new(neg_inf_mode, vec![0.0], -DMatrix::identity(1, 1)),
            Err(Error::NonFiniteModeValue(_))
        ));
    }

    #[test]
    fn hessian_is_symmetrized_on_ingest() {
        let h = DMatrix::from_row_slice(2, 2, &[-1.0, 0.1 + 1e-11, 0.1, -1.0]);
        let spec = IntegrandSpec::new(Arc::new(FnDensity::new(2, |_x: &[f64]| 0.0)), vec![0.0; 2], h).unwrap();
        assert_eq!(spec.hessian()[(0, 1)], spec.hessian()[(1, 0)]);
    }

    #[test]
    fn fd_hessian_spec_matches_analytic() {
        let spec = IntegrandSpec::with_fd_hessian(Arc::new(Banana), vec![0.0, -1.5], 1.0).unwrap();
        let analytic = Banana.spec().unwrap();
        let rel = (spec.hessian() - analytic.hessian()).norm() / analytic.hessian().norm();
        assert!(rel < 1e-4, "rel = {rel}");
    }

    #[test]
    fn mvt_density_examples() {
        assert_relative_eq!(mvt_log_density(&[0.0], 1.0, 1).unwrap(), (1.0 / PI).ln(), epsilon = 1e-14);
        let x = [1.0, 1.0];
        let normal = -LN_2PI - 1.0;
        assert!((mvt_log_density(&x, 1e8, 2).unwrap() - normal).abs() < 1e-6);
        assert!(mvt_log_density(&x, 0.0, 2).is_err());
        assert!(mvt_log_density(&x, -1.0, 2).is_err());
        let total = riemann_2d(|p| mvt_log_density(p, 38.0, 2).unwrap(), 40.0, 0.05);
        assert_relative_eq!(total, 1.0, max_relative = 1e-3);
    }

    #[test]
    fn mvt_laplace_examples() {
        assert!((mvt_laplace(38.0, 2).unwrap() - 0.95).abs() < 1e-12);
        assert!((mvt_laplace(25921.0, 72).unwrap() - 0.95).abs() < 5e-4);
        assert!((mvt_laplace(1e9, 2).unwrap() - 1.0).abs() < 1e-6);
        assert!(mvt_laplace(0.0, 2).is_err());
    }

    #[test]
    fn mvt_laplace_monotonicity() {
        for d in 1..=20 {
            for nu in 5..100 {
                let a = mvt_laplace(nu as f64, d).unwrap();
                assert!(mvt_laplace(nu as f64 + 1.0, d).unwrap() > a);
                assert!(mvt_laplace(nu as f64, d + 1).unwrap() < a);
            }
        }
    }

    #[test]
    fn banana_examples() {
        let at_mode = banana_log_density(&[0.0, -1.5]).unwrap();
        assert_relative_eq!(at_mode, (1.0 / (2.0 * PI * 3f64.sqrt())).ln(), epsilon = 1e-14);
        let total = riemann_2d(|p| banana_log_density(p).unwrap(), 15.0, 0.02);
        assert_relative_eq!(total, 1.0, max_relative = 1e-3);
        for &(a, b) in &[(0.3, 1.1), (2.5, -4.0), (7.0, 20.0)] {
            assert_eq!(banana_log_density(&[a, b]).unwrap(), banana_log_density(&[-a, b]).unwrap());
        }
        assert!(banana_log_density(&[0.0]).is_err());
    }

    #[test]
    fn product_t_examples() {
        let zero = [0.0, 0.0];
        assert_relative_eq!(
            product_t_log_density(&zero, 38.0, 2).unwrap(),
            mvt_log_density(&zero, 38.0, 2).unwrap(),
            epsilon = 1e-13
        );
        for m in [0.5, 1.0, 3.0, -2.0] {
            for axis in 0..2 {
                let mut p = [0.0, 0.0];
                p[axis] = m;
                assert_relative_eq!(
                    product_t_log_density(&p, 38.0, 2).unwrap(),
                    mvt_log_density(&p, 38.0, 2).unwrap(),
                    epsilon = 1e-13
                );
            }
        }
        assert!(product_t_log_density(&[1.0, 1.0], 38.0, 2).unwrap() < mvt_log_density(&[1.0, 1.0], 38.0, 2).unwrap());
    }

    #[test]
    fn product_t_integral_examples() {
        assert!((product_t_integral(25921.0, 72).unwrap() - 0.952).abs() < 5e-4);
        for nu in [1.5, 3.0, 38.0, 1000.0] {
            assert_relative_eq!(product_t_integral(nu, 1).unwrap(), 1.0, epsilon = 1e-12);
        }
        let oracle = riemann_2d(|p| product_t_log_density(p, 38.0, 2).unwrap(), 40.0, 0.05);
        assert_relative_eq!(product_t_integral(38.0, 2).unwrap(), oracle, max_relative = 1e-3);
        for &(nu, d) in &[(38.0, 2), (25921.0, 72), (100.0, 5), (10.0, 3)] {
            assert!(product_t_integral(nu, d).unwrap() >= mvt_laplace(nu, d).unwrap());
        }
    }

    #[test]
    fn gaussian_laplace_is_exact() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let g = Gaussian::new(vec![1.0, -2.0], cov, 3.5).unwrap();
        let ga = gaussian_approx(&g.clone().spec().unwrap()).unwrap();
        assert_relative_eq!(laplace_approx(&ga), g.log_integral(), max_relative = 1e-10);
        assert_relative_eq!(laplace_approx(&ga), 3.5, max_relative = 1e-10);
        let std = gaussian_approx(&Gaussian::standard(2).spec().unwrap()).unwrap();
        assert!(laplace_approx(&std).abs() < 1e-12);
    }
}
