//! Reduced negative log-likelihood and per-level linearization blocks.
//!
//! With `ΦᵀΦ = I_L` and block-diagonal `Q`, the matrix `Q + ΦᵀD⁻¹Φ` is
//! block diagonal with blocks `Q_ℓ + T`, `T = diag(τ⁻²)`. Each level then
//! contributes
//!
//! ```text
//! log det(Q_ℓ + T) − log det Q_ℓ − tr(B_ℓ (Q_ℓ + T)⁻¹)
//! ```
//!
//! where `B_ℓ` is the level's projected second moment. The trace term is
//! evaluated as `(1/m)‖L⁻¹A_ℓ‖²_F` from the Cholesky factor, never forming
//! `B_ℓ`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::exec::{Executor, Sequential};
use crate::linalg;
use crate::{Error, NoiseModel, PrecisionBlockSet, Result, SuffStats};

/// `Ψ_1..Ψ_L`, the diagonal blocks of the linearization matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearizationBlocks {
    pub psi: Vec<DMatrix<f64>>,
}

impl LinearizationBlocks {
    pub fn n_levels(&self) -> usize {
        self.psi.len()
    }
}

pub(crate) fn check_compatible(
    q: &PrecisionBlockSet,
    stats: &SuffStats,
    noise: &NoiseModel,
) -> Result<()> {
    if q.p() != stats.p() || noise.p() != stats.p() {
        return Err(Error::dims(format!(
            "p mismatch: blocks {}, stats {}, noise {}",
            q.p(),
            stats.p(),
            noise.p()
        )));
    }
    if q.n_levels() != stats.n_levels() {
        return Err(Error::dims(format!(
            "blocks have L={} but stats have L={}",
            q.n_levels(),
            stats.n_levels()
        )));
    }
    if noise.tau_sq() != stats.tau_sq() {
        return Err(Error::invalid(
            "noise model differs from the one used to build the sufficient statistics",
        ));
    }
    Ok(())
}

fn shifted(q: &DMatrix<f64>, noise: &NoiseModel) -> DMatrix<f64> {
    let mut c = q.clone();
    for (i, t) in noise.tau_sq().iter().enumerate() {
        c[(i, i)] += 1.0 / t;
    }
    c
}

/// Reduced objective contribution of one level.
pub fn level_negloglik(
    q: &DMatrix<f64>,
    stats: &SuffStats,
    noise: &NoiseModel,
    level: usize,
) -> Result<f64> {
    let chol_q = linalg::cholesky(q)
        .ok_or_else(|| Error::NotPositiveDefinite(format!("Q block {level}")))?;
    let chol_c = linalg::cholesky(&shifted(q, noise))
        .ok_or_else(|| Error::NotPositiveDefinite(format!("Q + T at level {level}")))?;
    let mut a = stats.level_weights(level);
    let l = chol_c.l();
    if !l.solve_lower_triangular_mut(&mut a) {
        return Err(Error::NotPositiveDefinite(format!(
            "Q + T at level {level}"
        )));
    }
    let trace = linalg::frobenius_sq(&a) / stats.n_realizations() as f64;
    Ok(linalg::log_det_from_cholesky(&chol_c) - linalg::log_det_from_cholesky(&chol_q) - trace)
}

/// `Σ_ℓ [log det(Q_ℓ + T) − log det Q_ℓ − tr(B_ℓ (Q_ℓ + T)⁻¹)]`.
pub fn negloglik_reduced(
    q: &PrecisionBlockSet,
    stats: &SuffStats,
    noise: &NoiseModel,
) -> Result<f64> {
    negloglik_reduced_with(q, stats, noise, &Sequential)
}

pub fn negloglik_reduced_with<E: Executor>(
    q: &PrecisionBlockSet,
    stats: &SuffStats,
    noise: &NoiseModel,
    exec: &E,
) -> Result<f64> {
    check_compatible(q, stats, noise)?;
    let terms = exec.map(q.n_levels(), |l| {
        level_negloglik(q.block(l), stats, noise, l)
    });
    let mut total = 0.0;
    for t in terms {
        total += t?;
    }
    Ok(total)
}

/// `Ψ_ℓ = M_ℓ + M_ℓ B_ℓ M_ℓ` with `M_ℓ = (Q_ℓ + T)⁻¹`.
pub fn level_linearization(
    q: &DMatrix<f64>,
    stats: &SuffStats,
    noise: &NoiseModel,
    level: usize,
) -> Result<DMatrix<f64>> {
    let m_inv = linalg::spd_inverse(&shifted(q, noise))
        .ok_or_else(|| Error::NotPositiveDefinite(format!("Q + T at level {level}")))?;
    let x = &m_inv * stats.level_weights(level);
    let mut psi = m_inv + &x * x.transpose() / stats.n_realizations() as f64;
    linalg::symmetrize(&mut psi);
    Ok(psi)
}

pub fn linearization_blocks(
    q: &PrecisionBlockSet,
    stats: &SuffStats,
    noise: &NoiseModel,
) -> Result<LinearizationBlocks> {
    linearization_blocks_with(q, stats, noise, &Sequential)
}

pub fn linearization_blocks_with<E: Executor>(
    q: &PrecisionBlockSet,
    stats: &SuffStats,
    noise: &NoiseModel,
    exec: &E,
) -> Result<LinearizationBlocks> {
    check_compatible(q, stats, noise)?;
    let psi = exec
        .map(q.n_levels(), |l| {
            level_linearization(q.block(l), stats, noise, l)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(LinearizationBlocks { psi })
}

/// Value of the DC surrogate `Σ_ℓ [−log det Q_ℓ + tr(Ψ_ℓ Q_ℓ)]` (unpenalized).
pub fn surrogate_value(q: &PrecisionBlockSet, psi: &LinearizationBlocks) -> Result<f64> {
    let mut total = 0.0;
    for (l, (b, s)) in q.blocks().iter().zip(&psi.psi).enumerate() {
        let ch = linalg::cholesky(b)
            .ok_or_else(|| Error::NotPositiveDefinite(format!("Q block {l}")))?;
        total += -linalg::log_det_from_cholesky(&ch) + linalg::trace_of_product(s, b);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::suffstats::compute_suffstats;
    use crate::testutil;
    use crate::{BasisMatrix, Dataset};
    use alloc::vec;

    struct Instance {
        data: Dataset,
        basis: BasisMatrix,
        noise: NoiseModel,
        stats: SuffStats,
    }

    fn instance(seed: u64) -> Instance {
        let data = testutil::random_dataset(2, 6, 4, seed);
        let basis = testutil::orthonormal_basis(6, 3, seed + 100);
        let noise = NoiseModel::new(vec![0.6, 1.3]).unwrap();
        let stats = compute_suffstats(&data, &basis, &noise).unwrap();
        Instance {
            data,
            basis,
            noise,
            stats,
        }
    }

    #[test]
    fn zero_data_identity_blocks() {
        let data = testutil::zero_dataset(2, 5, 3);
        let basis = testutil::orthonormal_basis(5, 3, 1);
        let noise = NoiseModel::uniform(2, 1.0).unwrap();
        let stats = compute_suffstats(&data, &basis, &noise).unwrap();
        let q = PrecisionBlockSet::identity(2, 3);
        let v = negloglik_reduced(&q, &stats, &noise).unwrap();
        assert!((v - 6.0 * 2f64.ln()).abs() < 1e-12);
        let psi = linearization_blocks(&q, &stats, &noise).unwrap();
        for b in &psi.psi {
            assert!(linalg::max_abs(&(b - DMatrix::identity(2, 2) * 0.5)) < 1e-15);
        }
    }

    #[test]
    fn zero_data_general_blocks_give_shifted_inverse() {
        let data = testutil::zero_dataset(2, 5, 3);
        let basis = testutil::orthonormal_basis(5, 2, 2);
        let noise = NoiseModel::new(vec![0.5, 2.0]).unwrap();
        let stats = compute_suffstats(&data, &basis, &noise).unwrap();
        let q = testutil::random_blocks(2, 2, 3);
        let psi = linearization_blocks(&q, &stats, &noise).unwrap();
        for (l, b) in psi.psi.iter().enumerate() {
            let expect = linalg::spd_inverse(&(q.block(l) + noise.precision_diag())).unwrap();
            assert!(linalg::max_abs(&(b - expect)) < 1e-14);
        }
    }

    #[test]
    fn reduced_differences_match_dense_likelihood() {
        let inst = instance(7);
        let q1 = testutil::random_blocks(2, 3, 8);
        let q2 = testutil::random_blocks(2, 3, 9);
        let r1 = negloglik_reduced(&q1, &inst.stats, &inst.noise).unwrap();
        let r2 = negloglik_reduced(&q2, &inst.stats, &inst.noise).unwrap();
        let d1 = oracle::negloglik_dense_oracle(&q1, &inst.data, &inst.basis, &inst.noise).unwrap();
        let d2 = oracle::negloglik_dense_oracle(&q2, &inst.data, &inst.basis, &inst.noise).unwrap();
        assert!(((r1 - r2) - (d1 - d2)).abs() < 1e-8);
        // and the dropped constant is exactly log det D + tr(SD⁻¹)
        let c = inst.stats.likelihood_constant();
        assert!((r1 + c - d1).abs() < 1e-8, "{} vs {}", r1 + c, d1);
    }

    #[test]
    fn large_precision_sweep_tracks_dense_oracle() {
        let inst = instance(10);
        let c = inst.stats.likelihood_constant();
        let mut prev = f64::INFINITY;
        let mut prev_gap = f64::INFINITY;
        for k in 0..8 {
            let scale = 10f64.powi(k);
            let q =
                PrecisionBlockSet::new((0..3).map(|_| DMatrix::identity(2, 2) * scale).collect())
                    .unwrap();
            let r = negloglik_reduced(&q, &inst.stats, &inst.noise).unwrap();
            let d =
                oracle::negloglik_dense_oracle(&q, &inst.data, &inst.basis, &inst.noise).unwrap();
            assert!((r + c - d).abs() < 1e-7 * d.abs().max(1.0));
            // the reduced value decays to zero (Σ → D) from above or below monotonically
            let gap = r.abs();
            assert!(gap <= prev_gap + 1e-12);
            prev_gap = gap;
            prev = r;
        }
        assert!(prev.abs() < 1e-5);
    }

    #[test]
    fn linearization_matches_dense_blocks() {
        let inst = instance(11);
        let q = testutil::random_blocks(2, 3, 12);
        let psi = linearization_blocks(&q, &inst.stats, &inst.noise).unwrap();
        let dense = oracle::linearization_dense(&q, &inst.data, &inst.basis, &inst.noise).unwrap();
        for l in 0..3 {
            let d = dense.view((2 * l, 2 * l), (2, 2));
            assert!(linalg::max_abs(&(&psi.psi[l] - d)) < 1e-10);
            // Ψ_ℓ ⪰ M_ℓ
            let m = linalg::spd_inverse(&(q.block(l) + inst.noise.precision_diag())).unwrap();
            assert!(linalg::min_eigenvalue(&(&psi.psi[l] - m)) >= -1e-10);
            assert_eq!(linalg::max_asymmetry(&psi.psi[l]), 0.0);
        }
    }

    #[test]
    fn gradient_identity_by_finite_differences() {
        let inst = instance(13);
        let q = testutil::random_blocks(2, 3, 14);
        let psi = linearization_blocks(&q, &inst.stats, &inst.noise).unwrap();
        let mut g = testutil::rng(15);
        for level in 0..3 {
            let raw = testutil::random_matrix(2, 2, &mut g);
            let e = &raw + raw.transpose();
            let h = 1e-5;
            let eval = |t: f64| {
                let mut blocks = q.blocks().to_vec();
                blocks[level] += &e * t;
                let qq = PrecisionBlockSet::new(blocks).unwrap();
                negloglik_reduced(&qq, &inst.stats, &inst.noise).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            let q_inv = linalg::spd_inverse(q.block(level)).unwrap();
            let analytic = linalg::trace_of_product(&psi.psi[level], &e)
                - linalg::trace_of_product(&q_inv, &e);
            assert!(
                (fd - analytic).abs() <= 1e-4 * analytic.abs().max(1e-3),
                "level {level}: fd {fd} analytic {analytic}"
            );
        }
    }

    #[test]
    fn surrogate_majorizes_at_nearby_points() {
        let inst = instance(16);
        let q0 = testutil::random_blocks(2, 3, 17);
        let psi = linearization_blocks(&q0, &inst.stats, &inst.noise).unwrap();
        let f0 = negloglik_reduced(&q0, &inst.stats, &inst.noise).unwrap();
        let s0 = surrogate_value(&q0, &psi).unwrap();
        let constant = f0 - s0;
        let mut g = testutil::rng(18);
        let mut tested = 0;
        while tested < 20 {
            let blocks: Vec<_> = q0
                .blocks()
                .iter()
                .map(|b| {
                    let r = testutil::random_matrix(2, 2, &mut g) * 0.2;
                    b + &r + r.transpose()
                })
                .collect();
            let Ok(q) = PrecisionBlockSet::new(blocks) else {
                continue;
            };
            let f = negloglik_reduced(&q, &inst.stats, &inst.noise).unwrap();
            let s = surrogate_value(&q, &psi).unwrap() + constant;
            assert!(s >= f - 1e-10, "surrogate {s} below objective {f}");
            tested += 1;
        }
    }

    #[test]
    fn not_positive_definite_is_reported() {
        let inst = instance(19);
        let bad = PrecisionBlockSet::new_unchecked(vec![
            DMatrix::from_row_slice(2, 2, &[1.0, 3.0, 3.0, 1.0]),
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2),
        ])
        .unwrap();
        assert!(matches!(
            negloglik_reduced(&bad, &inst.stats, &inst.noise),
            Err(Error::NotPositiveDefinite(_))
        ));
    }
}
