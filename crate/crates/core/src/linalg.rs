//! Small dense helpers shared by the solvers. Matrices here are p×p with p in
//! the tens, so everything is plain nalgebra on `DMatrix<f64>`.

use nalgebra::{Cholesky, DMatrix, Dyn};
#[allow(unused_imports)]
use num_traits::Float;

/// Cholesky factorization that also rejects non-finite input.
pub fn cholesky(m: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if !m.iter().all(|v| v.is_finite()) {
        return None;
    }
    let ch = m.clone().cholesky()?;
    // nalgebra accepts tiny positive pivots that overflow the inverse.
    if ch
        .l_dirty()
        .diagonal()
        .iter()
        .all(|d| *d > 0.0 && d.is_finite())
    {
        Some(ch)
    } else {
        None
    }
}

pub fn log_det_from_cholesky(ch: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    cholesky(m).is_some()
}

/// Inverse of a symmetric positive-definite matrix, symmetrized.
pub fn spd_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let ch = cholesky(m)?;
    let mut inv = ch.inverse();
    symmetrize(&mut inv);
    Some(inv)
}

/// Replaces `m` by `(m + mᵀ)/2`.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in (j + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Sum of |m_ij| over i ≠ j.
pub fn off_diagonal_l1(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut s = 0.0;
    for j in 0..n {
        for i in 0..n {
            if i != j {
                s += m[(i, j)].abs();
            }
        }
    }
    s
}

/// Diagonal matrix with entries `1/m_ii`.
pub fn inverse_diagonal(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 / m[(i, i)] } else { 0.0 })
}

/// Trace of `a * b` for square matrices without forming the product.
pub fn trace_of_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for k in 0..n {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    s.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v))
}

pub fn soft_threshold(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}
