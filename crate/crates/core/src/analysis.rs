//! Diagnostics of a fitted model: implied covariances and correlations
//! between any two variables at any two locations, and graph summaries of
//! the precision blocks.
//!
//! `Cov(Z_i(s), Z_j(t)) = Σ_ℓ φ_ℓ(s) φ_ℓ(t) (Q_ℓ⁻¹)_ij`, plus `τ²_i` when
//! `i = j`, `s = t` and noise is included.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DMatrix;

use crate::linalg;
use crate::{BasisMatrix, Error, NoiseModel, PrecisionBlockSet, Result, StandardizationFields};

/// Default magnitude below which a precision entry counts as zero.
pub const ZERO_TOL: f64 = 1e-8;

/// `Q_ℓ⁻¹` for every level.
#[derive(Debug, Clone, PartialEq)]
pub struct CovBlockCache {
    pub sigma_blocks: Vec<DMatrix<f64>>,
}

impl CovBlockCache {
    pub fn new(q: &PrecisionBlockSet) -> Result<Self> {
        let sigma_blocks = q
            .blocks()
            .iter()
            .enumerate()
            .map(|(l, b)| {
                linalg::spd_inverse(b)
                    .ok_or_else(|| Error::NotPositiveDefinite(format!("Q block {l}")))
            })
            .collect::<Result<_>>()?;
        Ok(Self { sigma_blocks })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    basis: BasisMatrix,
    q: PrecisionBlockSet,
    noise: NoiseModel,
    standardization: Option<StandardizationFields>,
    variable_names: Vec<String>,
    /// n×d coordinates, carried through to simulated datasets.
    locations: Option<DMatrix<f64>>,
    cache: CovBlockCache,
}

impl FittedModel {
    pub fn new(
        basis: BasisMatrix,
        q: PrecisionBlockSet,
        noise: NoiseModel,
        standardization: Option<StandardizationFields>,
        variable_names: Vec<String>,
    ) -> Result<Self> {
        if basis.n_levels() != q.n_levels() {
            return Err(Error::dims(format!(
                "basis has L={} but blocks have L={}",
                basis.n_levels(),
                q.n_levels()
            )));
        }
        if q.p() != noise.p() || variable_names.len() != q.p() {
            return Err(Error::dims(format!(
                "p mismatch: blocks {}, noise {}, names {}",
                q.p(),
                noise.p(),
                variable_names.len()
            )));
        }
        if let Some(st) = &standardization {
            if st.pixel_mean().shape() != (q.p(), basis.n_locations()) {
                return Err(Error::dims("standardization fields must be p×n"));
            }
        }
        let cache = CovBlockCache::new(&q)?;
        Ok(Self {
            basis,
            q,
            noise,
            standardization,
            variable_names,
            locations: None,
            cache,
        })
    }

    pub fn with_locations(mut self, locations: DMatrix<f64>) -> Result<Self> {
        if locations.nrows() != self.n_locations() || locations.ncols() == 0 {
            return Err(Error::dims("locations must be n×d with d ≥ 1"));
        }
        self.locations = Some(locations);
        Ok(self)
    }

    pub fn basis(&self) -> &BasisMatrix {
        &self.basis
    }
    pub fn q(&self) -> &PrecisionBlockSet {
        &self.q
    }
    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }
    pub fn standardization(&self) -> Option<&StandardizationFields> {
        self.standardization.as_ref()
    }
    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }
    pub fn locations(&self) -> Option<&DMatrix<f64>> {
        self.locations.as_ref()
    }
    pub fn cache(&self) -> &CovBlockCache {
        &self.cache
    }
    pub fn p(&self) -> usize {
        self.q.p()
    }
    pub fn n_locations(&self) -> usize {
        self.basis.n_locations()
    }
    pub fn n_levels(&self) -> usize {
        self.q.n_levels()
    }

    fn check_var(&self, i: usize) -> Result<()> {
        if i >= self.p() {
            return Err(Error::IndexOutOfRange {
                what: "variable",
                index: i,
                len: self.p(),
            });
        }
        Ok(())
    }

    fn check_loc(&self, s: usize) -> Result<()> {
        if s >= self.n_locations() {
            return Err(Error::IndexOutOfRange {
                what: "location",
                index: s,
                len: self.n_locations(),
            });
        }
        Ok(())
    }

    /// Unchecked covariance. Swapping `(i, j)` or `(s, t)` gives bitwise
    /// identical results: the Σ blocks are exactly symmetric and each term
    /// multiplies `σ_ij` by the product `φ(s)·φ(t)`, which commutes.
    fn cov(&self, i: usize, j: usize, s: usize, t: usize, include_noise: bool) -> f64 {
        let phi = self.basis.phi();
        let mut c = 0.0;
        for (l, sigma) in self.cache.sigma_blocks.iter().enumerate() {
            c += sigma[(i, j)] * (phi[(s, l)] * phi[(t, l)]);
        }
        if include_noise && i == j && s == t {
            c += self.noise.tau_sq()[i];
        }
        c
    }

    pub fn cross_covariance(
        &self,
        i: usize,
        j: usize,
        s: usize,
        t: usize,
        include_noise: bool,
    ) -> Result<f64> {
        self.check_var(i)?;
        self.check_var(j)?;
        self.check_loc(s)?;
        self.check_loc(t)?;
        Ok(self.cov(i, j, s, t, include_noise))
    }

    fn variances(&self, i: usize, include_noise: bool) -> Vec<f64> {
        (0..self.n_locations())
            .map(|s| self.cov(i, i, s, s, include_noise))
            .collect()
    }

    pub fn local_sd_field(&self, i: usize, include_noise: bool) -> Result<Vec<f64>> {
        self.check_var(i)?;
        Ok(self
            .variances(i, include_noise)
            .into_iter()
            .map(f64::sqrt)
            .collect())
    }

    /// Correlation between variable `i` at `anchor` and variable `j` at every
    /// location. Normalized as `cov / √(var·var)`, so the anchor's
    /// self-correlation is exactly 1.
    pub fn correlation_map(
        &self,
        i: usize,
        j: usize,
        anchor: usize,
        include_noise: bool,
    ) -> Result<Vec<f64>> {
        self.check_var(i)?;
        self.check_var(j)?;
        self.check_loc(anchor)?;
        let var_a = self.cov(i, i, anchor, anchor, include_noise);
        if !(var_a > 0.0) {
            return Err(Error::ZeroVarianceLocation {
                variable: i,
                location: anchor,
            });
        }
        let var_j = self.variances(j, include_noise);
        (0..self.n_locations())
            .map(|t| {
                if !(var_j[t] > 0.0) {
                    return Err(Error::ZeroVarianceLocation {
                        variable: j,
                        location: t,
                    });
                }
                Ok(self.cov(i, j, anchor, t, include_noise) / (var_a * var_j[t]).sqrt())
            })
            .collect()
    }

    /// Correlation of variables `i` and `j` at the same location.
    pub fn local_cross_correlation_field(
        &self,
        i: usize,
        j: usize,
        include_noise: bool,
    ) -> Result<Vec<f64>> {
        self.check_var(i)?;
        self.check_var(j)?;
        let var_i = self.variances(i, include_noise);
        let var_j = self.variances(j, include_noise);
        (0..self.n_locations())
            .map(|s| {
                for (v, var) in [(i, var_i[s]), (j, var_j[s])] {
                    if !(var > 0.0) {
                        return Err(Error::ZeroVarianceLocation {
                            variable: v,
                            location: s,
                        });
                    }
                }
                Ok(self.cov(i, j, s, s, include_noise) / (var_i[s] * var_j[s]).sqrt())
            })
            .collect()
    }
}

/// L×p matrix of block diagonals.
pub fn marginal_precisions(q: &PrecisionBlockSet) -> DMatrix<f64> {
    DMatrix::from_fn(q.n_levels(), q.p(), |l, i| q.block(l)[(i, i)])
}

/// Pairs `i < j` with `|Q_ℓ,ij| > zero_tol`, per level.
pub fn edge_counts_by_level(q: &PrecisionBlockSet, zero_tol: f64) -> Vec<usize> {
    let p = q.p();
    q.blocks()
        .iter()
        .map(|b| {
            (0..p)
                .flat_map(|j| (0..j).map(move |i| (i, j)))
                .filter(|&(i, j)| b[(i, j)].abs() > zero_tol)
                .count()
        })
        .collect()
}

/// `trace[ℓ][j]` is true when `j ≠ i` is a neighbour of `i` at level ℓ.
pub fn neighbor_trace(q: &PrecisionBlockSet, i: usize, zero_tol: f64) -> Result<Vec<Vec<bool>>> {
    if i >= q.p() {
        return Err(Error::IndexOutOfRange {
            what: "variable",
            index: i,
            len: q.p(),
        });
    }
    Ok(q.blocks()
        .iter()
        .map(|b| {
            (0..q.p())
                .map(|j| j != i && b[(i, j)].abs() > zero_tol)
                .collect()
        })
        .collect())
}

/// For each variable, the first level (counted from 1) from which it has no
/// neighbours at every later level; `L + 1` if it has a neighbour at level L.
pub fn independence_level(q: &PrecisionBlockSet, zero_tol: f64) -> Vec<usize> {
    let p = q.p();
    let mut out = vec![1usize; p];
    for (l, b) in q.blocks().iter().enumerate() {
        for i in 0..p {
            if (0..p).any(|j| j != i && b[(i, j)].abs() > zero_tol) {
                out[i] = l + 2;
            }
        }
    }
    out
}
