//! Pooled empirical orthogonal functions.
//!
//! The pooled matrix stacks every (realization, variable) field as a column
//! of an n×(p·m) matrix; its leading left singular vectors form the basis.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DMatrix;

use crate::model::BasisMatrix;
use crate::{Dataset, Error, Result};

/// Above this many pooled-matrix entries `Auto` switches to the Gram route.
pub const GRAM_ROUTE_THRESHOLD: usize = 4_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EofMethod {
    /// Thin SVD for small inputs, Gram eigendecomposition otherwise.
    #[default]
    Auto,
    /// Thin SVD of the pooled matrix.
    Svd,
    /// Symmetric eigendecomposition of the smaller of `BᵀB` and `BBᵀ`.
    Gram,
}

/// n×(p·m) pooled matrix; column `r*p + v` holds variable `v` of realization `r`.
pub fn pooled_matrix(data: &Dataset) -> DMatrix<f64> {
    let p = data.n_vars();
    let n = data.n_locations();
    let m = data.n_realizations();
    DMatrix::from_fn(n, p * m, |s, c| data.get(c % p, s, c / p))
}

/// First `levels` pooled EOFs of (already standardized) data.
pub fn build_pooled_eof_basis(data: &Dataset, levels: usize) -> Result<BasisMatrix> {
    build_pooled_eof_basis_with(data, levels, EofMethod::Auto)
}

pub fn build_pooled_eof_basis_with(
    data: &Dataset,
    levels: usize,
    method: EofMethod,
) -> Result<BasisMatrix> {
    let n = data.n_locations();
    let cols = data.n_vars() * data.n_realizations();
    if levels == 0 || levels > n.min(cols) {
        return Err(Error::invalid(alloc::format!(
            "levels must be in 1..={} (min of n={n} and p*m={cols}), got {levels}",
            n.min(cols)
        )));
    }
    let b = pooled_matrix(data);
    let method = match method {
        EofMethod::Auto if n * cols > GRAM_ROUTE_THRESHOLD => EofMethod::Gram,
        EofMethod::Auto => EofMethod::Svd,
        other => other,
    };
    let (u, sv, rank_tol) = match method {
        EofMethod::Gram => gram_route(&b),
        _ => svd_route(&b),
    };
    let rank = sv.iter().filter(|d| **d > rank_tol).count();
    if rank < levels {
        return Err(Error::RankDeficient {
            requested: levels,
            rank,
        });
    }
    let total: f64 = sv.iter().map(|d| d * d).sum();
    let mut acc = 0.0;
    let variance_fraction = sv[..levels]
        .iter()
        .map(|d| {
            acc += d * d;
            (acc / total).min(1.0)
        })
        .collect();

    let mut phi = u.columns(0, levels).into_owned();
    if matches!(method, EofMethod::Gram) && b.ncols() < b.nrows() {
        // Columns recovered as B v / d lose a little orthogonality; one
        // re-orthonormalization pass restores it without changing the span order.
        reorthonormalize(&mut phi);
    }
    for j in 0..levels {
        fix_sign(&mut phi, j);
    }
    Ok(BasisMatrix::new_unchecked(phi, variance_fraction))
}

/// Returns (U sorted by singular value, sorted singular values, rank tolerance).
fn svd_route(b: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, f64) {
    let svd = b.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sorted_u = DMatrix::from_fn(u.nrows(), order.len(), |r, c| u[(r, order[c])]);
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let dmax = sv.first().copied().unwrap_or(0.0);
    let tol = b.nrows().max(b.ncols()) as f64 * f64::EPSILON * dmax;
    (sorted_u, sv, tol)
}

fn gram_route(b: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>, f64) {
    let (n, c) = b.shape();
    let wide = c >= n;
    let gram = if wide { b * b.transpose() } else { b.tr_mul(b) };
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let sv: Vec<f64> = order
        .iter()
        .map(|&i| eig.eigenvalues[i].max(0.0).sqrt())
        .collect();
    let dmax = sv.first().copied().unwrap_or(0.0);
    // Eigenvalues of the Gram matrix carry eps·λmax absolute error, i.e.
    // sqrt(eps)·dmax on the singular values.
    let tol = (n.max(c) as f64 * f64::EPSILON).sqrt() * dmax;
    let u = if wide {
        DMatrix::from_fn(n, order.len(), |r, k| eig.eigenvectors[(r, order[k])])
    } else {
        let mut u = DMatrix::zeros(n, order.len());
        for (k, &i) in order.iter().enumerate() {
            if sv[k] > tol {
                let col = b * eig.eigenvectors.column(i) / sv[k];
                u.set_column(k, &col);
            }
        }
        u
    };
    (u, sv, tol)
}

fn reorthonormalize(phi: &mut DMatrix<f64>) {
    for j in 0..phi.ncols() {
        for k in 0..j {
            let proj = phi.column(j).dot(&phi.column(k));
            let ck = phi.column(k).clone_owned();
            let mut cj = phi.column_mut(j);
            cj -= ck * proj;
        }
        let norm = phi.column(j).norm();
        phi.column_mut(j).scale_mut(1.0 / norm);
    }
}

/// Makes the largest-magnitude entry of column `j` positive.
fn fix_sign(phi: &mut DMatrix<f64>, j: usize) {
    let mut best = 0usize;
    let mut best_abs = -1.0;
    for (i, v) in phi.column(j).iter().enumerate() {
        if v.abs() > best_abs {
            best_abs = v.abs();
            best = i;
        }
    }
    if phi[(best, j)] < 0.0 {
        phi.column_mut(j).neg_mut();
    }
}
