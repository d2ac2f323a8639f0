#![allow(dead_code)]

use std::sync::Arc;

use lapdiag::integrand::{gaussian_approx, FnDensity, IntegrandSpec};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// `x ↦ a·f(Ax + b)`, with mode and Hessian carried over exactly.
pub fn affine_transform(spec: &IntegrandSpec, a: &DMatrix<f64>, b: &[f64], log_a: f64) -> IntegrandSpec {
    let inner = spec.density().clone();
    let a_in = a.clone();
    let b_in = DVector::from_column_slice(b);
    let density = FnDensity::new(spec.dim(), move |x: &[f64]| {
        let y = &a_in * DVector::from_column_slice(x) + &b_in;
        log_a + inner.log_density(y.as_slice()).unwrap()
    });
    let mode = a.clone().try_inverse().unwrap() * (spec.mode() - DVector::from_column_slice(b));
    let hessian = a.transpose() * spec.hessian() * a;
    IntegrandSpec::new(Arc::new(density), mode.as_slice().to_vec(), hessian).unwrap()
}

pub fn rotation2(theta: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[theta.cos(), -theta.sin(), theta.sin(), theta.cos()])
}

/// Random 2×2 signed permutation.
pub fn signed_permutation2(rng: &mut impl Rng) -> DMatrix<f64> {
    let s0 = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let s1 = if rng.random::<bool>() { 1.0 } else { -1.0 };
    if rng.random::<bool>() {
        DMatrix::from_row_slice(2, 2, &[s0, 0.0, 0.0, s1])
    } else {
        DMatrix::from_row_slice(2, 2, &[0.0, s0, s1, 0.0])
    }
}

/// A transform that maps the standardized frame of `spec` onto itself up to a
/// signed permutation, so the interrogation points are the same set.
pub fn frame_preserving_transform(spec: &IntegrandSpec, rng: &mut impl Rng) -> DMatrix<f64> {
    let t = gaussian_approx(spec).unwrap().transform;
    let q = signed_permutation2(rng);
    let l1: f64 = rng.random_range(0.2..5.0);
    let l2: f64 = l1 * rng.random_range(1.1..3.0);
    let lambda_inv = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0 / l1, 1.0 / l2]));
    let u = rotation2(rng.random_range(0.0..std::f64::consts::TAU));
    t * q * lambda_inv * u.transpose()
}

/// Random well-conditioned invertible matrix.
pub fn random_invertible(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    loop {
        let m = DMatrix::from_fn(d, d, |_, _| rng.random_range(-2.0..2.0));
        let svd = m.clone().svd(false, false);
        let s = svd.singular_values;
        if s.min() > 0.2 && s.max() / s.min() < 20.0 {
            return m;
        }
    }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}
