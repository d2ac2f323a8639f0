//! Small quasi-Newton minimizer for smooth low-dimensional objectives.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub grad_tol: f64,
    pub max_iter: usize,
    /// Central-difference step for the gradient.
    pub fd_step: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { grad_tol: 1e-8, max_iter: 200, fd_step: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn fd_gradient(f: &impl Fn(&[f64]) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(xp.as_slice());
        xp[i] = orig - h;
        let fm = f(xp.as_slice());
        xp[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    g
}

/// BFGS with Armijo backtracking and a finite-difference gradient.
///
/// Non-finite objective values are treated as `+∞` by the line search.
pub fn bfgs(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: BfgsOptions) -> Result<BfgsResult> {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let mut fx = f(x.as_slice());
    if !fx.is_finite() {
        return Err(Error::OptimizationDiverged);
    }
    let mut g = fd_gradient(&f, &x, opts.fd_step);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if g.norm() <= opts.grad_tol {
            break;
        }
        iterations += 1;
        let mut p = -(&hinv * &g);
        if p.dot(&g) >= 0.0 {
            hinv = DMatrix::identity(n, n);
            p = -g.clone();
        }
        let slope = p.dot(&g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let xn = &x + &p * step;
            let fn_ = f(xn.as_slice());
            if fn_.is_finite() && fn_ <= fx + 1e-4 * step * slope {
                accepted = Some((xn, fn_));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_)) = accepted else {
            break;
        };
        let gn = fd_gradient(&f, &xn, opts.fd_step);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-300 {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - rho * &s * y.transpose();
            let right = &eye - rho * &y * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        let small_move = (fx - fn_).abs() <= 1e-16 * fx.abs().max(1e-300);
        x = xn;
        fx = fn_;
        g = gn;
        if small_move {
            break;
        }
    }
    let grad_norm = g.norm();
    Ok(BfgsResult { x: x.as_slice().to_vec(), value: fx, grad_norm, iterations, converged: grad_norm <= opts.grad_tol })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_bowl() {
        let r = bfgs(|x| (x[0] - 1.5).powi(2) + 3.0 * (x[1] + 0.5).powi(2), &[0.0, 0.0], BfgsOptions::default()).unwrap();
        assert!((r.x[0] - 1.5).abs() < 1e-6 && (r.x[1] + 0.5).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let r = bfgs(f, &[-1.2, 1.0], BfgsOptions { max_iter: 500, ..Default::default() }).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-4 && (r.x[1] - 1.0).abs() < 1e-4, "{:?}", r.x);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        assert!(bfgs(|_| f64::NAN, &[0.0], BfgsOptions::default()).is_err());
    }
}
