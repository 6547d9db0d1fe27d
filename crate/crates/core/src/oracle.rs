//! Dense reference computations in the full np-dimensional observation space.
//!
//! These build `Σ = (Φ⊗I_p) Q⁻¹ (Φ⊗I_p)ᵀ + D` explicitly and cost O((np)³),
//! so they are limited to desk-scale problems. They exist to cross-check the
//! reduced fast paths and make no use of them.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::{BasisMatrix, Dataset, Error, NoiseModel, PrecisionBlockSet, Result};

/// Largest `n·p` accepted by the dense routines.
pub const ORACLE_LIMIT: usize = 2000;

fn guard(n: usize, p: usize) -> Result<()> {
    if n * p > ORACLE_LIMIT {
        return Err(Error::TooLargeForOracle {
            size: n * p,
            limit: ORACLE_LIMIT,
        });
    }
    Ok(())
}

/// `Φ ⊗ I_p` (np × pL).
pub fn kron_basis(phi: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    phi.kronecker(&DMatrix::<f64>::identity(p, p))
}

/// `D = I_n ⊗ diag(τ²)`.
pub fn dense_noise_cov(noise: &NoiseModel, n: usize) -> DMatrix<f64> {
    let p = noise.p();
    DMatrix::from_fn(n * p, n * p, |i, j| {
        if i == j {
            noise.tau_sq()[i % p]
        } else {
            0.0
        }
    })
}

/// `D⁻¹ = I_n ⊗ diag(τ⁻²)`.
pub fn dense_noise_precision(noise: &NoiseModel, n: usize) -> DMatrix<f64> {
    let p = noise.p();
    DMatrix::from_fn(n * p, n * p, |i, j| {
        if i == j {
            1.0 / noise.tau_sq()[i % p]
        } else {
            0.0
        }
    })
}

/// `diag(Q_1, …, Q_L)` as a dense pL×pL matrix.
pub fn block_diagonal(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let p = blocks.first().map_or(0, |b| b.nrows());
    let l = blocks.len();
    let mut out = DMatrix::zeros(p * l, p * l);
    for (k, b) in blocks.iter().enumerate() {
        out.view_mut((k * p, k * p), (p, p)).copy_from(b);
    }
    out
}

/// `S = (1/m) Σ_i Y_i Y_iᵀ`.
pub fn dense_sample_cov(data: &Dataset) -> DMatrix<f64> {
    let np = data.n_vars() * data.n_locations();
    let m = data.n_realizations();
    let mut s = DMatrix::zeros(np, np);
    for r in 0..m {
        let y = DVector::from_column_slice(data.realization(r));
        s += &y * y.transpose();
    }
    s / m as f64
}

/// `(Φ⊗I)ᵀ D⁻¹ S D⁻¹ (Φ⊗I)` built densely.
pub fn projected_second_moment(
    data: &Dataset,
    basis: &BasisMatrix,
    noise: &NoiseModel,
) -> DMatrix<f64> {
    let n = data.n_locations();
    let big_phi = kron_basis(basis.phi(), data.n_vars());
    let d_inv = dense_noise_precision(noise, n);
    let left = big_phi.transpose() * &d_inv;
    &left * dense_sample_cov(data) * left.transpose()
}

/// Model covariance `Σ = (Φ⊗I_p) Q⁻¹ (Φ⊗I_p)ᵀ + D` (D omitted when
/// `include_noise` is false).
pub fn dense_covariance(
    q: &PrecisionBlockSet,
    basis: &BasisMatrix,
    noise: &NoiseModel,
    include_noise: bool,
) -> Result<DMatrix<f64>> {
    let n = basis.n_locations();
    guard(n, q.p())?;
    let q_inv: Vec<DMatrix<f64>> = q
        .blocks()
        .iter()
        .enumerate()
        .map(|(l, b)| {
            linalg::spd_inverse(b)
                .ok_or_else(|| Error::NotPositiveDefinite(alloc::format!("Q block {l}")))
        })
        .collect::<Result<_>>()?;
    let big_phi = kron_basis(basis.phi(), q.p());
    let mut sigma = &big_phi * block_diagonal(&q_inv) * big_phi.transpose();
    if include_noise {
        sigma += dense_noise_cov(noise, n);
    }
    linalg::symmetrize(&mut sigma);
    Ok(sigma)
}

/// Full negative log-likelihood `log det Σ + tr(SΣ⁻¹)` (constants dropped).
pub fn negloglik_dense_oracle(
    q: &PrecisionBlockSet,
    data: &Dataset,
    basis: &BasisMatrix,
    noise: &NoiseModel,
) -> Result<f64> {
    guard(data.n_locations(), data.n_vars())?;
    let sigma = dense_covariance(q, basis, noise, true)?;
    let ch =
        linalg::cholesky(&sigma).ok_or_else(|| Error::NotPositiveDefinite("dense Σ".into()))?;
    let s = dense_sample_cov(data);
    let sol = ch.solve(&s);
    Ok(linalg::log_det_from_cholesky(&ch) + sol.trace())
}

/// The full pL×pL linearization matrix
/// `Ψ = (Q + G)⁻¹ + (Q + G)⁻¹ C (Q + G)⁻¹` with `G = (Φ⊗I)ᵀD⁻¹(Φ⊗I)` and
/// `C = (Φ⊗I)ᵀD⁻¹SD⁻¹(Φ⊗I)`, for any basis.
pub fn linearization_dense(
    q: &PrecisionBlockSet,
    data: &Dataset,
    basis: &BasisMatrix,
    noise: &NoiseModel,
) -> Result<DMatrix<f64>> {
    let n = data.n_locations();
    guard(n, data.n_vars())?;
    let big_phi = kron_basis(basis.phi(), data.n_vars());
    let d_inv = dense_noise_precision(noise, n);
    let g = big_phi.transpose() * &d_inv * &big_phi;
    let c = projected_second_moment(data, basis, noise);
    let k = block_diagonal(q.blocks()) + g;
    let m_inv =
        linalg::spd_inverse(&k).ok_or_else(|| Error::NotPositiveDefinite("Q + ΦᵀD⁻¹Φ".into()))?;
    let mut psi = &m_inv + &m_inv * c * &m_inv;
    linalg::symmetrize(&mut psi);
    Ok(psi)
}
