//! Domain types and the pixelwise standardization transform.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DMatrix;

use crate::linalg;
use crate::{Error, Result};

/// Tolerance on `max |ΦᵀΦ − I|` for a basis to count as orthonormal.
pub const ORTHONORMAL_TOL: f64 = 1e-8;

/// Replicated multivariate spatial data.
///
/// `values` is a p×n×m array stored first-index-fastest: the value of
/// variable `v` at location `s` in realization `r` lives at
/// `v + p*(s + n*r)`. Each realization is therefore a contiguous p×n
/// column-major block whose column `s` is the p-vector observed at `s`, so the
/// slice is exactly `vec(mat(Y_r))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_vars: usize,
    n_locations: usize,
    n_realizations: usize,
    values: Vec<f64>,
    locations: DMatrix<f64>,
    variable_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        n_vars: usize,
        n_locations: usize,
        n_realizations: usize,
        values: Vec<f64>,
        locations: DMatrix<f64>,
        variable_names: Vec<String>,
    ) -> Result<Self> {
        if n_vars == 0 || n_locations == 0 || n_realizations == 0 {
            return Err(Error::invalid("dataset dimensions must all be at least 1"));
        }
        if values.len() != n_vars * n_locations * n_realizations {
            return Err(Error::dims(format!(
                "expected {} values for p={n_vars}, n={n_locations}, m={n_realizations}, got {}",
                n_vars * n_locations * n_realizations,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite value at flat index {pos}"
            )));
        }
        if locations.nrows() != n_locations || locations.ncols() == 0 {
            return Err(Error::dims(format!(
                "locations must be {n_locations}×d with d ≥ 1, got {}×{}",
                locations.nrows(),
                locations.ncols()
            )));
        }
        if variable_names.len() != n_vars {
            return Err(Error::dims(format!(
                "expected {n_vars} variable names, got {}",
                variable_names.len()
            )));
        }
        for (i, a) in variable_names.iter().enumerate() {
            if variable_names[..i].contains(a) {
                return Err(Error::invalid(format!("duplicate variable name {a:?}")));
            }
        }
        Ok(Self {
            n_vars,
            n_locations,
            n_realizations,
            values,
            locations,
            variable_names,
        })
    }

    /// Dataset with 1-D index coordinates and names `V1..Vp`.
    pub fn from_values(
        n_vars: usize,
        n_locations: usize,
        n_realizations: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let locations = DMatrix::from_fn(n_locations, 1, |s, _| s as f64);
        Self::new(
            n_vars,
            n_locations,
            n_realizations,
            values,
            locations,
            default_names(n_vars),
        )
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn n_locations(&self) -> usize {
        self.n_locations
    }

    pub fn n_realizations(&self) -> usize {
        self.n_realizations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn locations(&self) -> &DMatrix<f64> {
        &self.locations
    }

    pub fn variable_names(&self) -> &[String] {
        &self.variable_names
    }

    #[inline]
    pub fn index(&self, var: usize, loc: usize, real: usize) -> usize {
        var + self.n_vars * (loc + self.n_locations * real)
    }

    #[inline]
    pub fn get(&self, var: usize, loc: usize, real: usize) -> f64 {
        self.values[self.index(var, loc, real)]
    }

    /// `vec(mat(Y_r))`: the p×n block of realization `r`, column-major.
    pub fn realization(&self, r: usize) -> &[f64] {
        let len = self.n_vars * self.n_locations;
        &self.values[r * len..(r + 1) * len]
    }

    /// n×m matrix of one variable across locations and realizations.
    pub fn variable_field(&self, var: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_locations, self.n_realizations, |s, r| {
            self.get(var, s, r)
        })
    }

    /// New dataset keeping only the listed realizations, in the given order.
    pub fn select_realizations(&self, which: &[usize]) -> Result<Self> {
        let len = self.n_vars * self.n_locations;
        let mut values = Vec::with_capacity(len * which.len());
        for &r in which {
            if r >= self.n_realizations {
                return Err(Error::IndexOutOfRange {
                    what: "realization",
                    index: r,
                    len: self.n_realizations,
                });
            }
            values.extend_from_slice(self.realization(r));
        }
        Self::new(
            self.n_vars,
            self.n_locations,
            which.len(),
            values,
            self.locations.clone(),
            self.variable_names.clone(),
        )
    }

    fn with_values(&self, values: Vec<f64>) -> Self {
        Self {
            values,
            ..self.clone()
        }
    }
}

pub fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("V{i}")).collect()
}

/// Pixelwise mean and standard deviation, both p×n.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationFields {
    pixel_mean: DMatrix<f64>,
    pixel_sd: DMatrix<f64>,
}

impl StandardizationFields {
    pub fn new(pixel_mean: DMatrix<f64>, pixel_sd: DMatrix<f64>) -> Result<Self> {
        if pixel_mean.shape() != pixel_sd.shape() {
            return Err(Error::dims("pixel mean and sd shapes differ"));
        }
        if !pixel_sd.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::invalid(
                "pixel sd must be strictly positive and finite",
            ));
        }
        if !pixel_mean.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("pixel mean must be finite"));
        }
        Ok(Self {
            pixel_mean,
            pixel_sd,
        })
    }

    pub fn pixel_mean(&self) -> &DMatrix<f64> {
        &self.pixel_mean
    }

    pub fn pixel_sd(&self) -> &DMatrix<f64> {
        &self.pixel_sd
    }

    fn check(&self, data: &Dataset) -> Result<()> {
        if self.pixel_mean.shape() != (data.n_vars(), data.n_locations()) {
            return Err(Error::dims(format!(
                "standardization fields are {:?}, data has p={} n={}",
                self.pixel_mean.shape(),
                data.n_vars(),
                data.n_locations()
            )));
        }
        Ok(())
    }

    /// `(y − mean) / sd` pixelwise.
    pub fn apply(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data)?;
        let p = data.n_vars();
        let n = data.n_locations();
        let values = data
            .values()
            .iter()
            .enumerate()
            .map(|(k, y)| {
                let v = k % p;
                let s = (k / p) % n;
                (y - self.pixel_mean[(v, s)]) / self.pixel_sd[(v, s)]
            })
            .collect();
        Ok(data.with_values(values))
    }

    /// `z * sd + mean` pixelwise.
    pub fn invert(&self, data: &Dataset) -> Result<Dataset> {
        self.check(data)?;
        let p = data.n_vars();
        let n = data.n_locations();
        let values = data
            .values()
            .iter()
            .enumerate()
            .map(|(k, z)| {
                let v = k % p;
                let s = (k / p) % n;
                z * self.pixel_sd[(v, s)] + self.pixel_mean[(v, s)]
            })
            .collect();
        Ok(data.with_values(values))
    }
}

/// Standardizes every (variable, location) series across realizations to
/// sample mean 0 and sample sd 1 (divisor m − 1).
pub fn standardize(data: &Dataset) -> Result<(Dataset, StandardizationFields)> {
    let p = data.n_vars();
    let n = data.n_locations();
    let m = data.n_realizations();
    if m < 2 {
        return Err(Error::TooFewRealizations { m });
    }
    let mut mean = DMatrix::zeros(p, n);
    let mut sd = DMatrix::zeros(p, n);
    for s in 0..n {
        for v in 0..p {
            let mu = (0..m).map(|r| data.get(v, s, r)).sum::<f64>() / m as f64;
            let ss = (0..m)
                .map(|r| {
                    let d = data.get(v, s, r) - mu;
                    d * d
                })
                .sum::<f64>();
            let sigma = (ss / (m - 1) as f64).sqrt();
            // Constant series can leave rounding residue on the order of ulp(mean).
            if !(sigma > 64.0 * f64::EPSILON * mu.abs()) {
                return Err(Error::ZeroVarianceSeries {
                    variable: v,
                    location: s,
                });
            }
            mean[(v, s)] = mu;
            sd[(v, s)] = sigma;
        }
    }
    let fields = StandardizationFields::new(mean, sd)?;
    let out = fields.apply(data)?;
    Ok((out, fields))
}

/// n×L spatial basis with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    phi: DMatrix<f64>,
    variance_fraction: Vec<f64>,
}

impl BasisMatrix {
    /// Wraps `phi` without checking orthonormality. Only the dense oracles
    /// accept such bases meaningfully; the fast paths assume `ΦᵀΦ = I`.
    pub fn new_unchecked(phi: DMatrix<f64>, variance_fraction: Vec<f64>) -> Self {
        Self {
            phi,
            variance_fraction,
        }
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn n_locations(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_levels(&self) -> usize {
        self.phi.ncols()
    }

    /// Cumulative explained-variance fractions; empty for user-supplied bases.
    pub fn variance_fraction(&self) -> &[f64] {
        &self.variance_fraction
    }
}

/// Accepts a user-supplied basis if `max |ΦᵀΦ − I| ≤ 1e-8`.
pub fn validate_basis(phi: DMatrix<f64>) -> Result<BasisMatrix> {
    let (n, l) = phi.shape();
    if l == 0 || n == 0 {
        return Err(Error::invalid(
            "basis must have at least one row and column",
        ));
    }
    if l > n {
        return Err(Error::dims(format!("basis has L={l} > n={n}")));
    }
    if !phi.iter().all(|v| v.is_finite()) {
        return Err(Error::invalid("basis has non-finite entries"));
    }
    let gram = phi.tr_mul(&phi);
    let mut worst = (0, 0, 0.0f64);
    for j in 0..l {
        for i in 0..l {
            let target = if i == j { 1.0 } else { 0.0 };
            let dev = (gram[(i, j)] - target).abs();
            if dev > worst.2 {
                worst = (i, j, dev);
            }
        }
    }
    if worst.2 > ORTHONORMAL_TOL {
        return Err(Error::NotOrthonormal {
            row: worst.0,
            col: worst.1,
            deviation: worst.2,
        });
    }
    Ok(BasisMatrix::new_unchecked(phi, Vec::new()))
}

/// The L precision blocks `Q_1..Q_L`, each p×p symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionBlockSet {
    p: usize,
    blocks: Vec<DMatrix<f64>>,
}

impl PrecisionBlockSet {
    /// Validates symmetry (relative to the block's scale) and positive
    /// definiteness, then stores exactly symmetrized copies.
    pub fn new(blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let set = Self::new_unchecked(blocks)?;
        for (l, b) in set.blocks.iter().enumerate() {
            if !linalg::is_spd(b) {
                return Err(Error::NotPositiveDefinite(format!("precision block {l}")));
            }
        }
        Ok(set)
    }

    /// Checks shapes and symmetry only.
    pub fn new_unchecked(mut blocks: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return Err(Error::invalid("need at least one precision block"));
        };
        let p = first.nrows();
        for (l, b) in blocks.iter_mut().enumerate() {
            if b.shape() != (p, p) || p == 0 {
                return Err(Error::dims(format!(
                    "block {l} is {:?}, expected {p}×{p}",
                    b.shape()
                )));
            }
            let scale = linalg::max_abs(b).max(1.0);
            if linalg::max_asymmetry(b) > 1e-10 * scale {
                return Err(Error::invalid(format!("block {l} is not symmetric")));
            }
            linalg::symmetrize(b);
        }
        Ok(Self { p, blocks })
    }

    pub fn identity(p: usize, levels: usize) -> Self {
        Self {
            p,
            blocks: (0..levels).map(|_| DMatrix::identity(p, p)).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn n_levels(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[DMatrix<f64>] {
        &self.blocks
    }

    pub fn block(&self, level: usize) -> &DMatrix<f64> {
        &self.blocks[level]
    }

    pub fn into_blocks(self) -> Vec<DMatrix<f64>> {
        self.blocks
    }

    /// Frobenius norm of the block-diagonal whole.
    pub fn frobenius_norm(&self) -> f64 {
        self.blocks
            .iter()
            .map(linalg::frobenius_sq)
            .sum::<f64>()
            .sqrt()
    }

    /// `‖self − other‖_F` over all blocks.
    pub fn frobenius_distance(&self, other: &Self) -> f64 {
        self.blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| linalg::frobenius_sq(&(a - b)))
            .sum::<f64>()
            .sqrt()
    }
}

/// Per-variable error variances τ²_1..τ²_p.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    tau_sq: Vec<f64>,
}

impl NoiseModel {
    pub fn new(tau_sq: Vec<f64>) -> Result<Self> {
        if tau_sq.is_empty() {
            return Err(Error::invalid("noise model needs at least one variance"));
        }
        if let Some(i) = tau_sq.iter().position(|t| !(*t > 0.0 && t.is_finite())) {
            return Err(Error::invalid(format!(
                "error variance {i} must be positive and finite, got {}",
                tau_sq[i]
            )));
        }
        Ok(Self { tau_sq })
    }

    pub fn uniform(p: usize, tau_sq: f64) -> Result<Self> {
        Self::new(alloc::vec![tau_sq; p])
    }

    pub fn tau_sq(&self) -> &[f64] {
        &self.tau_sq
    }

    pub fn p(&self) -> usize {
        self.tau_sq.len()
    }

    /// `T = diag(τ⁻²)`.
    pub fn precision_diag(&self) -> DMatrix<f64> {
        let p = self.p();
        DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 / self.tau_sq[i] } else { 0.0 })
    }
}

/// Penalty weights and DC-loop controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyConfig {
    /// Off-diagonal ℓ1 weight λ.
    pub lambda: f64,
    /// Sequential fusion weight ρ between adjacent levels.
    pub rho: f64,
    /// Relative Frobenius change that stops the DC loop.
    pub dc_tolerance: f64,
    /// Floor for the inner solver's KKT tolerance.
    pub inner_tolerance: f64,
    pub max_dc_iterations: usize,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            rho: 0.0,
            dc_tolerance: 0.05,
            inner_tolerance: 1e-6,
            max_dc_iterations: 100,
        }
    }
}

impl PenaltyConfig {
    pub fn new(lambda: f64, rho: f64) -> Self {
        Self {
            lambda,
            rho,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and ≥ 0"));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(Error::invalid("rho must be finite and ≥ 0"));
        }
        if !(self.dc_tolerance > 0.0) || !(self.inner_tolerance > 0.0) {
            return Err(Error::invalid("tolerances must be positive"));
        }
        if self.max_dc_iterations == 0 {
            return Err(Error::invalid("max_dc_iterations must be at least 1"));
        }
        Ok(())
    }
}
