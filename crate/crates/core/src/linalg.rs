//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Dimension up to which operator norms use a full symmetric eigensolve.
const EIGEN_MAX_DIM: usize = 16;
const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn sq_norm(a: &[f64]) -> f64 {
    dot(a, a)
}

/// `log Σ exp(v_i)`, evaluated with the max shifted out. Summation order is
/// the iteration order, so results do not depend on threading.
pub(crate) fn log_sum_exp<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64>,
    I::IntoIter: Clone,
{
    let iter = values.into_iter();
    let max = iter.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let sum: f64 = iter.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Normalizes logits in place into log-probabilities and returns the
/// log-normalizer.
pub(crate) fn log_normalize(logits: &mut [f64]) -> f64 {
    let lse = log_sum_exp(logits.iter().copied());
    for v in logits.iter_mut() {
        *v -= lse;
    }
    lse
}

/// Largest eigenvalue magnitude of a symmetric matrix.
pub(crate) fn sym_op_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    if n == 0 {
        return 0.0;
    }
    if n <= EIGEN_MAX_DIM {
        let eig = SymmetricEigen::new(m.clone());
        return eig.eigenvalues.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    }
    power_iteration(m)
}

fn power_iteration(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    // deterministic start with all directions represented
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64) / (n as f64));
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = w / norm;
        let done = (norm - lambda).abs() <= POWER_TOL * norm.max(1.0);
        lambda = norm;
        v = next;
        if done {
            break;
        }
    }
    lambda
}
