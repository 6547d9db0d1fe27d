//! Per-variable noise variance estimation.
//!
//! Each variable is fitted on its own with a diagonal precision
//! `q_ℓ = a·exp(b·ℓ)` (ℓ counted from 1) for the basis weights. With an
//! orthonormal basis the objective separates by level:
//!
//! ```text
//! f(a, b, τ²) = Σ_ℓ [ln(1 + 1/(τ² q_ℓ)) − c_ℓ / (τ²(τ² q_ℓ + 1))] + n ln τ² + tr(S)/τ²
//! ```
//!
//! with `c_ℓ = (1/m) Σ_i (φ_ℓᵀ y_i)²` and `tr(S) = (1/m) Σ_i ‖y_i‖²`. It is
//! minimized by Nelder–Mead over `(ln a, b, ln τ²)`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::DMatrix;

use crate::exec::{Executor, Sequential};
use crate::simplex::{self, SimplexOptions};
use crate::{BasisMatrix, Dataset, Error, NoiseModel, Result};

/// Smallest variance the optimizer may report.
pub const TAU_SQ_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseParams {
    pub a: f64,
    pub b: f64,
    pub tau_sq: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseFitConfig {
    /// Starting point; `None` picks one from the data (half the mean
    /// variance as noise, the rest spread evenly over levels).
    pub param_init: Option<NoiseParams>,
    pub optimizer_tolerance: f64,
    pub max_evals: usize,
}

impl Default for NoiseFitConfig {
    fn default() -> Self {
        Self {
            param_init: None,
            optimizer_tolerance: 1e-8,
            max_evals: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub params: NoiseParams,
    pub objective: f64,
    pub initial_objective: f64,
    /// τ² ended on [`TAU_SQ_FLOOR`].
    pub boundary_hit: bool,
    pub converged: bool,
    pub evaluations: usize,
}

/// Projected moments of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMoments {
    pub level_moments: Vec<f64>,
    pub trace_s: f64,
    pub n: usize,
}

impl NoiseMoments {
    /// `var_data` is n×m: one column per realization.
    pub fn new(var_data: &DMatrix<f64>, basis: &BasisMatrix) -> Result<Self> {
        let (n, m) = var_data.shape();
        if basis.n_locations() != n {
            return Err(Error::dims(format!(
                "basis has {} rows but data has {n} locations",
                basis.n_locations()
            )));
        }
        if m == 0 {
            return Err(Error::invalid("no realizations"));
        }
        let proj = basis.phi().transpose() * var_data;
        let level_moments = proj
            .row_iter()
            .map(|r| r.norm_squared() / m as f64)
            .collect();
        let trace_s = var_data.norm_squared() / m as f64;
        if !(trace_s > 0.0) {
            return Err(Error::DegenerateData("all values are zero".into()));
        }
        Ok(Self {
            level_moments,
            trace_s,
            n,
        })
    }

    pub fn objective(&self, params: &NoiseParams) -> f64 {
        let t = params.tau_sq;
        let mut f = self.n as f64 * t.ln() + self.trace_s / t;
        for (k, c) in self.level_moments.iter().enumerate() {
            let q = params.a * (params.b * (k + 1) as f64).exp();
            let tq = t * q;
            f += (1.0 / tq).ln_1p() - c / (t * (tq + 1.0));
        }
        f
    }

    fn default_init(&self) -> NoiseParams {
        let l = self.level_moments.len().max(1) as f64;
        let tau_sq = 0.5 * self.trace_s / self.n as f64;
        let mean_c = self.level_moments.iter().sum::<f64>() / l;
        let signal = (mean_c - tau_sq).max(1e-3 * mean_c).max(f64::MIN_POSITIVE);
        NoiseParams {
            a: 1.0 / signal,
            b: 0.0,
            tau_sq,
        }
    }
}

fn unpack(x: &[f64]) -> NoiseParams {
    NoiseParams {
        a: x[0].exp(),
        b: x[1],
        tau_sq: x[2].exp().max(TAU_SQ_FLOOR),
    }
}

pub fn estimate_noise_variance(
    var_data: &DMatrix<f64>,
    basis: &BasisMatrix,
    config: &NoiseFitConfig,
) -> Result<NoiseEstimate> {
    fit_moments(&NoiseMoments::new(var_data, basis)?, config)
}

pub fn fit_moments(moments: &NoiseMoments, config: &NoiseFitConfig) -> Result<NoiseEstimate> {
    let init = config.param_init.unwrap_or_else(|| moments.default_init());
    if !(init.a > 0.0 && init.tau_sq > 0.0 && init.b.is_finite()) {
        return Err(Error::invalid("initial a and tau_sq must be positive"));
    }
    let x0 = [init.a.ln(), init.b, init.tau_sq.ln()];
    let initial_objective = moments.objective(&unpack(&x0));
    let opts = SimplexOptions {
        f_tol: config.optimizer_tolerance,
        x_tol: config.optimizer_tolerance.sqrt(),
        max_evals: config.max_evals,
        step: 0.5,
    };
    let res = simplex::minimize(|x| moments.objective(&unpack(x)), &x0, &opts);
    let params = unpack(&res.x);
    if !res.value.is_finite() || !params.a.is_finite() || !params.tau_sq.is_finite() {
        return Err(Error::OptimizerDiverged);
    }
    Ok(NoiseEstimate {
        params,
        objective: res.value,
        initial_objective,
        boundary_hit: params.tau_sq <= TAU_SQ_FLOOR,
        converged: res.converged,
        evaluations: res.evaluations,
    })
}

pub fn estimate_all_noise(
    data: &Dataset,
    basis: &BasisMatrix,
    config: &NoiseFitConfig,
) -> Result<NoiseModel> {
    estimate_all_noise_with(data, basis, config, &Sequential).map(|(model, _)| model)
}

pub fn estimate_all_noise_with<E: Executor>(
    data: &Dataset,
    basis: &BasisMatrix,
    config: &NoiseFitConfig,
    exec: &E,
) -> Result<(NoiseModel, Vec<NoiseEstimate>)> {
    let fits = exec.map(data.n_vars(), |v| {
        estimate_noise_variance(&data.variable_field(v), basis, config).map_err(|e| {
            Error::ForVariable {
                variable: data.variable_names()[v].clone(),
                source: Box::new(e),
            }
        })
    });
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let model = NoiseModel::new(fits.iter().map(|f| f.params.tau_sq).collect())?;
    Ok((model, fits))
}
