//! The difference-of-convex outer loop.
//!
//! The reduced objective is a concave log-determinant plus a convex part.
//! Each iteration replaces the concave part by its tangent at the current
//! estimate, which turns the update into one graphical lasso per level
//! (`ρ = 0`) or one fused problem across levels (`ρ > 0`), with the
//! linearization blocks `Ψ_ℓ` standing in for sample covariances. The
//! penalized objective is nonincreasing along the iterates; this is checked,
//! not assumed.

use alloc::boxed::Box;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::exec::{Executor, Sequential};
use crate::fused::{self, FmglOptions, FmglProblem};
use crate::glasso::{self, GlassoOptions, GlassoProblem};
use crate::likelihood::{self, check_compatible};
use crate::linalg;
use crate::{Error, NoiseModel, PenaltyConfig, PrecisionBlockSet, Result, SuffStats};

/// Absolute slack allowed in the monotonicity check, on top of a relative
/// rounding allowance.
pub const MONOTONE_SLACK: f64 = 1e-8;
pub const MLE_MAX_ITERATIONS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub n_dc_iterations: usize,
    /// Penalized objective at the starting point and after every iteration.
    pub objective_trace: Vec<f64>,
    /// `‖Q⁺ − Q‖_F / ‖Q‖_F` per iteration, norms over all stacked blocks.
    pub relative_change_trace: Vec<f64>,
    pub converged: bool,
    /// Zero unless the observer supplies a clock.
    pub wall_time_seconds: f64,
    pub penalty: PenaltyConfig,
}

/// Per-iteration hook. `core` has no clock, so timing comes from here too.
pub trait FitObserver {
    fn on_iteration(&mut self, _iteration: usize, _objective: f64, _relative_change: f64) {}

    fn elapsed_seconds(&self) -> Option<f64> {
        None
    }
}

impl FitObserver for () {}

/// `negloglik_reduced + penalty_value`.
pub fn penalized_objective(
    q: &PrecisionBlockSet,
    stats: &SuffStats,
    noise: &NoiseModel,
    penalty: &PenaltyConfig,
) -> Result<f64> {
    penalized_objective_with(q, stats, noise, penalty, &Sequential)
}

pub fn penalized_objective_with<E: Executor>(
    q: &PrecisionBlockSet,
    stats: &SuffStats,
    noise: &NoiseModel,
    penalty: &PenaltyConfig,
    exec: &E,
) -> Result<f64> {
    Ok(likelihood::negloglik_reduced_with(q, stats, noise, exec)?
        + fused::penalty_value(q, penalty.lambda, penalty.rho))
}

pub fn dc_fit(
    stats: &SuffStats,
    noise: &NoiseModel,
    penalty: &PenaltyConfig,
    init: Option<&PrecisionBlockSet>,
) -> Result<(PrecisionBlockSet, FitReport)> {
    dc_fit_with(stats, noise, penalty, init, &Sequential, &mut ())
}

/// Without `init`, λ-only fits start at `diag(1/Ψ_ii)` of the linearization
/// at `Q = I`, and fused fits start at the converged unfused solution.
pub fn dc_fit_with<E: Executor, O: FitObserver>(
    stats: &SuffStats,
    noise: &NoiseModel,
    penalty: &PenaltyConfig,
    init: Option<&PrecisionBlockSet>,
    exec: &E,
    observer: &mut O,
) -> Result<(PrecisionBlockSet, FitReport)> {
    penalty.validate()?;
    let start = match init {
        Some(q) => q.clone(),
        None if penalty.rho == 0.0 => diagonal_start(stats, noise, exec)?,
        None => {
            let unfused = PenaltyConfig {
                rho: 0.0,
                ..*penalty
            };
            dc_fit_with(stats, noise, &unfused, None, exec, &mut ())?.0
        }
    };
    check_compatible(&start, stats, noise)?;
    let lambda = penalty.lambda;
    let rho = penalty.rho;
    run_dc(
        stats,
        noise,
        penalty,
        start,
        penalty.max_dc_iterations,
        exec,
        observer,
        |iteration, q, psi, tol| {
            let wrap = |e: Error| Error::InnerSolverFailure {
                iteration,
                source: Box::new(e),
            };
            if rho == 0.0 {
                let opts = GlassoOptions {
                    tol,
                    ..GlassoOptions::default()
                };
                exec.map(psi.len(), |l| {
                    let problem = GlassoProblem::new(psi[l].clone(), lambda);
                    match glasso::glasso_solve_with(&problem, Some(q.block(l)), &opts) {
                        Ok(sol) => Ok(sol.q),
                        // Warm-started descent iterates still decrease the
                        // surrogate, so the best iterate is a valid MM step.
                        Err(Error::MaxIterationsExceeded { mut best, .. }) => Ok(best.remove(0)),
                        Err(e) => Err(e),
                    }
                })
                .into_iter()
                .collect::<Result<Vec<_>>>()
                .map_err(wrap)
            } else {
                let problem = FmglProblem::new(psi, lambda, rho);
                let opts = FmglOptions {
                    tol,
                    ..FmglOptions::default()
                };
                match fused::fmgl_solve_with(&problem, Some(q), &opts) {
                    Ok(sol) => Ok(sol.q.into_blocks()),
                    Err(Error::MaxIterationsExceeded { best, .. }) => Ok(best),
                    Err(e) => Err(wrap(e)),
                }
            }
        },
    )
}

/// Unpenalized maximum likelihood: the inner step is `Q_ℓ = Ψ_ℓ⁻¹`.
pub fn mle_fit(
    stats: &SuffStats,
    noise: &NoiseModel,
    dc_tolerance: f64,
) -> Result<(PrecisionBlockSet, FitReport)> {
    mle_fit_with(stats, noise, dc_tolerance, None, &Sequential, &mut ())
}

pub fn mle_fit_with<E: Executor, O: FitObserver>(
    stats: &SuffStats,
    noise: &NoiseModel,
    dc_tolerance: f64,
    init: Option<&PrecisionBlockSet>,
    exec: &E,
    observer: &mut O,
) -> Result<(PrecisionBlockSet, FitReport)> {
    let penalty = PenaltyConfig {
        dc_tolerance,
        max_dc_iterations: MLE_MAX_ITERATIONS,
        ..PenaltyConfig::default()
    };
    penalty.validate()?;
    // Fewer realizations than variables leaves the sample part of every
    // block rank deficient and the iterates run off to infinity.
    if stats.n_realizations() < stats.p() {
        return Err(Error::SingularLinearization { level: 0 });
    }
    let start = match init {
        Some(q) => q.clone(),
        None => PrecisionBlockSet::identity(stats.p(), stats.n_levels()),
    };
    check_compatible(&start, stats, noise)?;
    run_dc(
        stats,
        noise,
        &penalty,
        start,
        MLE_MAX_ITERATIONS,
        exec,
        observer,
        |_, _, psi, _| {
            exec.map(psi.len(), |l| {
                linalg::spd_inverse(&psi[l]).ok_or(Error::SingularLinearization { level: l })
            })
            .into_iter()
            .collect()
        },
    )
}

fn diagonal_start<E: Executor>(
    stats: &SuffStats,
    noise: &NoiseModel,
    exec: &E,
) -> Result<PrecisionBlockSet> {
    let identity = PrecisionBlockSet::identity(stats.p(), stats.n_levels());
    let psi = likelihood::linearization_blocks_with(&identity, stats, noise, exec)?;
    PrecisionBlockSet::new(psi.psi.iter().map(linalg::inverse_diagonal).collect())
}

#[allow(clippy::too_many_arguments)]
fn run_dc<E, O, S>(
    stats: &SuffStats,
    noise: &NoiseModel,
    penalty: &PenaltyConfig,
    start: PrecisionBlockSet,
    max_iterations: usize,
    exec: &E,
    observer: &mut O,
    mut inner: S,
) -> Result<(PrecisionBlockSet, FitReport)>
where
    E: Executor,
    O: FitObserver,
    S: FnMut(usize, &PrecisionBlockSet, Vec<DMatrix<f64>>, f64) -> Result<Vec<DMatrix<f64>>>,
{
    let mut q = start;
    let mut f = penalized_objective_with(&q, stats, noise, penalty, exec)?;
    let mut report = FitReport {
        n_dc_iterations: 0,
        objective_trace: alloc::vec![f],
        relative_change_trace: Vec::new(),
        converged: false,
        wall_time_seconds: 0.0,
        penalty: *penalty,
    };
    let mut last_change = 1.0f64;
    for iteration in 1..=max_iterations {
        let psi = likelihood::linearization_blocks_with(&q, stats, noise, exec)?.psi;
        let tol = penalty.inner_tolerance.max(0.01 * last_change);
        let blocks = inner(iteration, &q, psi, tol)?;
        let next = PrecisionBlockSet::new_unchecked(blocks)?;
        let change = next.frobenius_distance(&q) / q.frobenius_norm();
        let f_next = penalized_objective_with(&next, stats, noise, penalty, exec).map_err(|e| {
            Error::InnerSolverFailure {
                iteration,
                source: Box::new(e),
            }
        })?;
        if f_next > f + MONOTONE_SLACK + 1e-12 * f.abs() {
            return Err(Error::NonmonotoneObjective {
                iteration,
                previous: f,
                current: f_next,
            });
        }
        report.n_dc_iterations = iteration;
        report.objective_trace.push(f_next);
        report.relative_change_trace.push(change);
        observer.on_iteration(iteration, f_next, change);
        q = next;
        f = f_next;
        last_change = change;
        if change < penalty.dc_tolerance {
            report.converged = true;
            break;
        }
    }
    report.wall_time_seconds = observer.elapsed_seconds().unwrap_or(0.0);
    Ok((q, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::suffstats::compute_suffstats;
    use crate::testutil;
    use crate::Dataset;
    use alloc::vec;

    /// Draws `m` realizations of Φ-weighted Gaussian vectors with precision
    /// blocks `q`, plus white noise; written independently of `simulate`.
    fn synth(
        q: &PrecisionBlockSet,
        n: usize,
        m: usize,
        tau_sq: f64,
        seed: u64,
    ) -> (Dataset, crate::BasisMatrix) {
        let p = q.p();
        let l = q.n_levels();
        let basis = testutil::orthonormal_basis(n, l, seed);
        let mut g = testutil::rng(seed + 1);
        let covs: Vec<DMatrix<f64>> = q
            .blocks()
            .iter()
            .map(|b| linalg::spd_inverse(b).unwrap().cholesky().unwrap().l())
            .collect();
        let mut values = vec![0.0; p * n * m];
        for r in 0..m {
            let w: Vec<_> = covs
                .iter()
                .map(|c| c * testutil::random_matrix(p, 1, &mut g))
                .collect();
            for s in 0..n {
                for v in 0..p {
                    let mut x = tau_sq.sqrt() * testutil::normal(&mut g);
                    for (k, wk) in w.iter().enumerate() {
                        x += basis.phi()[(s, k)] * wk[v];
                    }
                    values[v + p * (s + n * r)] = x;
                }
            }
        }
        (Dataset::from_values(p, n, m, values).unwrap(), basis)
    }

    fn setup(p: usize, l: usize, m: usize, seed: u64) -> (SuffStats, NoiseModel) {
        let truth = testutil::random_blocks(p, l, seed);
        let (data, basis) = synth(&truth, 30, m, 0.1, seed);
        let noise = NoiseModel::uniform(p, 0.1).unwrap();
        (compute_suffstats(&data, &basis, &noise).unwrap(), noise)
    }

    #[test]
    fn penalized_objective_sums_parts() {
        let (stats, noise) = setup(3, 2, 20, 1);
        let q = testutil::random_blocks(3, 2, 9);
        let pen = PenaltyConfig::new(0.3, 0.7);
        let total = penalized_objective(&q, &stats, &noise, &pen).unwrap();
        let nll = likelihood::negloglik_reduced(&q, &stats, &noise).unwrap();
        let mut by_hand = 0.0;
        for k in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    if i != j {
                        by_hand += 0.3 * q.block(k)[(i, j)].abs();
                        if k == 0 {
                            by_hand += 0.7 * (q.block(0)[(i, j)] - q.block(1)[(i, j)]).abs();
                        }
                    }
                }
            }
        }
        assert!((total - (nll + by_hand)).abs() < 1e-12);
        let diag = PrecisionBlockSet::identity(3, 2);
        assert_eq!(
            penalized_objective(&diag, &stats, &noise, &pen).unwrap(),
            likelihood::negloglik_reduced(&diag, &stats, &noise).unwrap()
        );
        assert_eq!(
            penalized_objective(&q, &stats, &noise, &PenaltyConfig::new(0.0, 0.0)).unwrap(),
            nll
        );
    }

    #[test]
    fn large_lambda_gives_diagonal_blocks() {
        let diag: Vec<DMatrix<f64>> = (0..3)
            .map(|k| DMatrix::from_diagonal(&nalgebra::DVector::from_element(4, 1.0 + k as f64)))
            .collect();
        let truth = PrecisionBlockSet::new(diag).unwrap();
        let (data, basis) = synth(&truth, 25, 40, 0.1, 5);
        let noise = NoiseModel::uniform(4, 0.1).unwrap();
        let stats = compute_suffstats(&data, &basis, &noise).unwrap();
        let (q, report) = dc_fit(&stats, &noise, &PenaltyConfig::new(1e3, 0.0), None).unwrap();
        assert!(report.converged);
        for b in q.blocks() {
            for j in 0..4 {
                for i in 0..4 {
                    if i != j {
                        assert_eq!(b[(i, j)], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn restart_at_solution_converges_in_one_iteration() {
        let (stats, noise) = setup(4, 3, 30, 2);
        for rho in [0.0, 0.1] {
            let pen = PenaltyConfig::new(0.05, rho);
            let (q, _) = dc_fit(&stats, &noise, &pen, None).unwrap();
            let (_, again) = dc_fit(&stats, &noise, &pen, Some(&q)).unwrap();
            assert_eq!(again.n_dc_iterations, 1);
            assert!(again.converged);
        }
    }

    #[test]
    fn objective_trace_is_monotone() {
        for (seed, rho) in [(3u64, 0.0), (4, 0.2), (5, 1.0)] {
            let (stats, noise) = setup(4, 4, 25, seed);
            let mut pen = PenaltyConfig::new(0.02, rho);
            pen.dc_tolerance = 1e-4;
            let (q, report) = dc_fit(&stats, &noise, &pen, None).unwrap();
            assert_eq!(report.objective_trace.len(), report.n_dc_iterations + 1);
            for w in report.objective_trace.windows(2) {
                assert!(w[1] <= w[0] + 1e-8);
            }
            assert!(report.relative_change_trace.iter().all(|c| *c >= 0.0));
            assert!(q.blocks().iter().all(linalg::is_spd));
        }
    }

    #[test]
    fn unfused_fit_separates_by_level() {
        let (stats, noise) = setup(3, 3, 40, 6);
        let mut pen = PenaltyConfig::new(0.03, 0.0);
        pen.dc_tolerance = 1e-11;
        pen.inner_tolerance = 1e-12;
        pen.max_dc_iterations = 1000;
        let (joint, _) = dc_fit(&stats, &noise, &pen, None).unwrap();
        for k in 0..3 {
            let single = stats.level(k).unwrap();
            let (q, _) = dc_fit(&single, &noise, &pen, None).unwrap();
            assert!(linalg::max_abs(&(q.block(0) - joint.block(k))) < 1e-8);
        }
    }

    #[test]
    fn mle_first_step_on_zero_data_is_two_identity() {
        let data = testutil::zero_dataset(2, 6, 3);
        let basis = testutil::orthonormal_basis(6, 2, 1);
        let noise = NoiseModel::uniform(2, 1.0).unwrap();
        let stats = compute_suffstats(&data, &basis, &noise).unwrap();
        let mut first = None;
        struct Grab<'a>(&'a mut Option<f64>);
        impl FitObserver for Grab<'_> {
            fn on_iteration(&mut self, it: usize, _: f64, change: f64) {
                if it == 1 {
                    *self.0 = Some(change);
                }
            }
        }
        let init = PrecisionBlockSet::identity(2, 2);
        let (q, _) = mle_fit_with(
            &stats,
            &noise,
            0.05,
            Some(&init),
            &Sequential,
            &mut Grab(&mut first),
        )
        .unwrap();
        // ‖2I − I‖/‖I‖ = 1 on the first step.
        assert!((first.unwrap() - 1.0).abs() < 1e-15);
        assert!(q.blocks().iter().all(linalg::is_spd));
    }

    #[test]
    fn mle_dominates_near_unpenalized_fit() {
        let (stats, noise) = setup(2, 2, 50, 7);
        let (mle, report) = mle_fit(&stats, &noise, 1e-6).unwrap();
        assert!(report.converged);
        let (pen_fit, _) = dc_fit(&stats, &noise, &PenaltyConfig::new(0.001, 0.0), None).unwrap();
        let a = likelihood::negloglik_reduced(&mle, &stats, &noise).unwrap();
        let b = likelihood::negloglik_reduced(&pen_fit, &stats, &noise).unwrap();
        assert!(a <= b + 1e-9, "{a} vs {b}");
    }

    #[test]
    fn mle_rejects_too_few_realizations() {
        let (stats, noise) = setup(4, 2, 3, 8);
        assert!(matches!(
            mle_fit(&stats, &noise, 0.05),
            Err(Error::SingularLinearization { .. })
        ));
    }

    #[test]
    fn fits_are_deterministic() {
        let (stats, noise) = setup(3, 3, 20, 9);
        let pen = PenaltyConfig::new(0.02, 0.3);
        let a = dc_fit(&stats, &noise, &pen, None).unwrap();
        let b = dc_fit(&stats, &noise, &pen, None).unwrap();
        assert_eq!(a, b);
    }
}
