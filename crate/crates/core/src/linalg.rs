use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::error::{Error, Result};

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Unit-precision squared-exponential Gram matrix `exp(−‖sᵢ − sⱼ‖²/(2λ²))`.
pub(crate) fn gram_matrix(points: &[Vec<f64>], lambda: f64) -> DMatrix<f64> {
    let n = points.len();
    let scale = -0.5 / (lambda * lambda);
    let rows: Vec<Vec<f64>> = points
        .par_iter()
        .map(|p| points.iter().map(|q| (scale * sq_dist(p, q)).exp()).collect())
        .collect();
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

pub(crate) fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Hager's estimate of `‖A⁻¹‖₁` for symmetric `A`, given a solver for `A`.
pub(crate) fn inverse_one_norm_estimate(n: usize, solve: impl Fn(&DVector<f64>) -> DVector<f64>) -> f64 {
    let mut x = DVector::from_element(n, 1.0 / n as f64);
    let mut estimate = 0.0;
    for _ in 0..5 {
        let y = solve(&x);
        estimate = y.iter().map(|v| v.abs()).sum::<f64>();
        let xi = y.map(|v| if v >= 0.0 { 1.0 } else { -1.0 });
        let z = solve(&xi);
        let j = z.iamax();
        if z[j].abs() <= z.dot(&x) {
            break;
        }
        x = DVector::zeros(n);
        x[j] = 1.0;
    }
    estimate
}

/// Cholesky factorization of a symmetric positive-definite matrix, with a
/// reciprocal 1-norm condition estimate.
pub(crate) struct SpdSolver {
    chol: Cholesky<f64, Dyn>,
    pub rcond: f64,
}

impl SpdSolver {
    pub fn new(mut a: DMatrix<f64>, jitter: bool) -> Result<Self> {
        if jitter {
            let bump = 1e-12 * a.diagonal().max();
            for i in 0..a.nrows() {
                a[(i, i)] += bump;
            }
        }
        let norm = one_norm(&a);
        let n = a.nrows();
        match Cholesky::new(a.clone()) {
            Some(chol) => {
                let inv_norm = inverse_one_norm_estimate(n, |b| chol.solve(b));
                Ok(Self { chol, rcond: 1.0 / (norm * inv_norm) })
            }
            None => {
                let eig = a.symmetric_eigen().eigenvalues;
                let max = eig.max();
                let min = eig.min();
                Err(Error::GramNotPd { rcond: if max > 0.0 { min / max } else { f64::NAN } })
            }
        }
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }
}

/// Exact reciprocal 1-norm condition number of a small general matrix.
pub(crate) fn rcond_exact(a: &DMatrix<f64>) -> f64 {
    match a.clone().try_inverse() {
        Some(inv) => 1.0 / (one_norm(a) * one_norm(&inv)),
        None => 0.0,
    }
}
