//! Draws realizations from a fitted model.
//!
//! Per realization: `W_ℓ ~ N(0, Q_ℓ⁻¹)` by solving `Rᵀx = z` with `Q_ℓ = RRᵀ`
//! and `z` standard normal, then `Z = vec(MΦᵀ)` where `M` has columns `W_ℓ`.
//! Realization `r` uses its own ChaCha8 stream `(seed, r)`, so output does
//! not depend on how realizations are scheduled.

use alloc::vec::Vec;
#[allow(unused_imports)]
use num_traits::Float;

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::FittedModel;
use crate::exec::{Executor, Sequential};
use crate::{Dataset, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulateOptions {
    pub add_noise: bool,
    /// Map back to the original units with the model's standardization.
    pub destandardize: bool,
}

pub fn simulate(
    model: &FittedModel,
    m_out: usize,
    seed: u64,
    add_noise: bool,
    destandardize: bool,
) -> Result<Dataset> {
    simulate_with(
        model,
        m_out,
        seed,
        SimulateOptions {
            add_noise,
            destandardize,
        },
        &Sequential,
    )
}

pub fn simulate_with<E: Executor>(
    model: &FittedModel,
    m_out: usize,
    seed: u64,
    opts: SimulateOptions,
    exec: &E,
) -> Result<Dataset> {
    if m_out == 0 {
        return Err(Error::invalid("need at least one realization"));
    }
    if opts.destandardize && model.standardization().is_none() {
        return Err(Error::MissingStandardization);
    }
    let factors = model
        .q()
        .blocks()
        .iter()
        .map(|b| {
            b.clone()
                .cholesky()
                .ok_or_else(|| Error::NotPositiveDefinite("Q block".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    let parts = exec.map(m_out, |r| {
        simulate_realization(model, &factors, seed, r, opts.add_noise)
    });
    let values: Vec<f64> = parts.into_iter().flatten().collect();
    let locations = model
        .locations()
        .cloned()
        .unwrap_or_else(|| DMatrix::from_fn(model.n_locations(), 1, |s, _| s as f64));
    let names = model.variable_names().to_vec();
    let data = Dataset::new(
        model.p(),
        model.n_locations(),
        m_out,
        values,
        locations,
        names,
    )?;
    match (opts.destandardize, model.standardization()) {
        (true, Some(st)) => st.invert(&data),
        _ => Ok(data),
    }
}

fn simulate_realization(
    model: &FittedModel,
    factors: &[Cholesky<f64, Dyn>],
    seed: u64,
    r: usize,
    add_noise: bool,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    let p = model.p();
    let mut m = DMatrix::zeros(p, factors.len());
    for (l, ch) in factors.iter().enumerate() {
        let mut z = DMatrix::from_fn(p, 1, |_, _| StandardNormal.sample(&mut rng));
        ch.l().tr_solve_lower_triangular_mut(&mut z);
        m.set_column(l, &z.column(0));
    }
    let mut values = assemble_field(&m, model.basis().phi());
    if add_noise {
        let sd: Vec<f64> = model.noise().tau_sq().iter().map(|t| t.sqrt()).collect();
        for (k, v) in values.iter_mut().enumerate() {
            let e: f64 = StandardNormal.sample(&mut rng);
            *v += sd[k % p] * e;
        }
    }
    values
}

/// `vec(MΦᵀ)` for a p×L weight matrix: entry `v + p·s` is variable `v` at
/// location `s`.
pub fn assemble_field(m: &DMatrix<f64>, phi: &DMatrix<f64>) -> Vec<f64> {
    (m * phi.transpose()).as_slice().to_vec()
}
