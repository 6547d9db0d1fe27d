//! Sufficient statistics for the reduced likelihood under an orthonormal
//! basis and block-diagonal precision.
//!
//! Everything downstream needs only the projected weights
//! `A[:,:,i] = diag(τ⁻²)·mat(Y_i)·Φ` (p×L per realization) plus per-variable
//! sums of squares. Realizations are processed one at a time, so nothing of
//! size n×n or pn×pn is ever formed.

use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{DMatrix, DMatrixView};

use crate::exec::{Executor, Sequential};
use crate::{BasisMatrix, Dataset, Error, NoiseModel, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    p: usize,
    levels: usize,
    n: usize,
    /// p×L×m, first index fastest.
    weights: Vec<f64>,
    /// τ⁻² per variable; the diagonal of each block of `ΦᵀD⁻¹Φ = I_L ⊗ T`.
    gram_diag: Vec<f64>,
    tau_sq: Vec<f64>,
    /// p×m: Σ_s Y_i(s)_v² for each variable and realization.
    sq_norms: Vec<f64>,
    /// Original realization index of each stored column.
    realizations: Vec<usize>,
}

pub fn compute_suffstats(
    data: &Dataset,
    basis: &BasisMatrix,
    noise: &NoiseModel,
) -> Result<SuffStats> {
    compute_suffstats_with(data, basis, noise, &Sequential)
}

pub fn compute_suffstats_with<E: Executor>(
    data: &Dataset,
    basis: &BasisMatrix,
    noise: &NoiseModel,
    exec: &E,
) -> Result<SuffStats> {
    let p = data.n_vars();
    let n = data.n_locations();
    let m = data.n_realizations();
    let levels = basis.n_levels();
    if basis.n_locations() != n {
        return Err(Error::dims(format!(
            "basis has {} rows but data has {n} locations",
            basis.n_locations()
        )));
    }
    if noise.p() != p {
        return Err(Error::dims(format!(
            "noise model has {} variances but data has {p} variables",
            noise.p()
        )));
    }
    let inv_tau: Vec<f64> = noise.tau_sq().iter().map(|t| 1.0 / t).collect();
    let phi = basis.phi();

    let per_realization = exec.map(m, |r| {
        let y = DMatrixView::from_slice(data.realization(r), p, n);
        let mut a = y * phi;
        for v in 0..p {
            a.row_mut(v).scale_mut(inv_tau[v]);
        }
        let sq: Vec<f64> = (0..p)
            .map(|v| y.row(v).iter().map(|x| x * x).sum())
            .collect();
        (a, sq)
    });

    let mut weights = Vec::with_capacity(p * levels * m);
    let mut sq_norms = Vec::with_capacity(p * m);
    for (a, sq) in per_realization {
        weights.extend_from_slice(a.as_slice());
        sq_norms.extend(sq);
    }
    Ok(SuffStats {
        p,
        levels,
        n,
        weights,
        gram_diag: inv_tau,
        tau_sq: noise.tau_sq().to_vec(),
        sq_norms,
        realizations: (0..m).collect(),
    })
}

impl SuffStats {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_levels(&self) -> usize {
        self.levels
    }

    pub fn n_realizations(&self) -> usize {
        self.realizations.len()
    }

    pub fn n_locations(&self) -> usize {
        self.n
    }

    pub fn gram_diag(&self) -> &[f64] {
        &self.gram_diag
    }

    pub fn tau_sq(&self) -> &[f64] {
        &self.tau_sq
    }

    /// Original realization indices behind the stored columns.
    pub fn realizations(&self) -> &[usize] {
        &self.realizations
    }

    /// Raw p×L×m weight array.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `A[:, level, i]`.
    pub fn weight_vector(&self, level: usize, i: usize) -> &[f64] {
        let off = self.p * (level + self.levels * i);
        &self.weights[off..off + self.p]
    }

    /// `A[:,:,i]` as a p×L matrix.
    pub fn weight_matrix(&self, i: usize) -> DMatrix<f64> {
        let len = self.p * self.levels;
        DMatrix::from_column_slice(self.p, self.levels, &self.weights[i * len..(i + 1) * len])
    }

    /// p×m matrix with columns `A[:, level, i]`.
    pub fn level_weights(&self, level: usize) -> DMatrix<f64> {
        let m = self.n_realizations();
        let mut out = DMatrix::zeros(self.p, m);
        for i in 0..m {
            out.column_mut(i)
                .copy_from_slice(self.weight_vector(level, i));
        }
        out
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level >= self.levels {
            return Err(Error::IndexOutOfRange {
                what: "level",
                index: level,
                len: self.levels,
            });
        }
        Ok(())
    }

    /// `B_ℓ = (1/m) Σ_i A[:,ℓ,i] A[:,ℓ,i]ᵀ`, the ℓth diagonal block of
    /// `ΦᵀD⁻¹SD⁻¹Φ`.
    pub fn second_moment_block(&self, level: usize) -> Result<DMatrix<f64>> {
        self.check_level(level)?;
        let a = self.level_weights(level);
        let mut b = &a * a.transpose() / self.n_realizations() as f64;
        crate::linalg::symmetrize(&mut b);
        Ok(b)
    }

    /// Per-variable `Σ_{s,i} Y_i(s)_v² / (m τ_v²)`; these sum to `tr(SD⁻¹)`.
    pub fn trace_sd(&self) -> Vec<f64> {
        let m = self.n_realizations();
        (0..self.p)
            .map(|v| {
                let s: f64 = (0..m).map(|i| self.sq_norms[v + self.p * i]).sum();
                s * self.gram_diag[v] / m as f64
            })
            .collect()
    }

    /// `log det D + tr(SD⁻¹)`: the Q-independent part of the full
    /// negative log-likelihood dropped by the reduced form.
    pub fn likelihood_constant(&self) -> f64 {
        let log_det_d: f64 = self.tau_sq.iter().map(|t| t.ln()).sum::<f64>() * self.n as f64;
        log_det_d + self.trace_sd().iter().sum::<f64>()
    }

    /// Statistics restricted to the given stored columns (positions, not
    /// original realization ids).
    pub fn subset(&self, positions: &[usize]) -> Result<SuffStats> {
        let m = self.n_realizations();
        let len = self.p * self.levels;
        let mut weights = Vec::with_capacity(len * positions.len());
        let mut sq_norms = Vec::with_capacity(self.p * positions.len());
        let mut realizations = Vec::with_capacity(positions.len());
        for &i in positions {
            if i >= m {
                return Err(Error::IndexOutOfRange {
                    what: "realization",
                    index: i,
                    len: m,
                });
            }
            weights.extend_from_slice(&self.weights[i * len..(i + 1) * len]);
            sq_norms.extend_from_slice(&self.sq_norms[i * self.p..(i + 1) * self.p]);
            realizations.push(self.realizations[i]);
        }
        if realizations.is_empty() {
            return Err(Error::invalid("subset must keep at least one realization"));
        }
        Ok(SuffStats {
            weights,
            sq_norms,
            realizations,
            ..self.clone_header()
        })
    }

    /// Statistics for a single level, as a one-level problem.
    pub fn level(&self, level: usize) -> Result<SuffStats> {
        self.check_level(level)?;
        let m = self.n_realizations();
        let mut weights = Vec::with_capacity(self.p * m);
        for i in 0..m {
            weights.extend_from_slice(self.weight_vector(level, i));
        }
        Ok(SuffStats {
            levels: 1,
            weights,
            sq_norms: self.sq_norms.clone(),
            realizations: self.realizations.clone(),
            ..self.clone_header()
        })
    }

    fn clone_header(&self) -> SuffStats {
        SuffStats {
            p: self.p,
            levels: self.levels,
            n: self.n,
            weights: Vec::new(),
            gram_diag: self.gram_diag.clone(),
            tau_sq: self.tau_sq.clone(),
            sq_norms: Vec::new(),
            realizations: Vec::new(),
        }
    }
}
