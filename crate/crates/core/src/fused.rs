//! Fused multiple graphical lasso over the level sequence:
//!
//! ```text
//! minimize  Σ_ℓ [−log det Q_ℓ + tr(Ψ_ℓ Q_ℓ)]
//!           + λ Σ_ℓ Σ_{i≠j} |Q_ℓ,ij| + ρ Σ_{ℓ<L} Σ_{i≠j} |Q_ℓ,ij − Q_ℓ+1,ij|
//! ```
//!
//! Proximal Newton again, but each off-diagonal coordinate of the quadratic
//! model is now a chain across levels, minimized exactly by
//! [`crate::chain::solve_chain`]. Diagonals are unpenalized and get plain 1D
//! Newton updates. The line search runs on the full coupled objective.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::chain::solve_chain;
use crate::glasso::{self, GlassoProblem};
use crate::linalg;
use crate::{Error, PrecisionBlockSet, Result};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct FmglProblem {
    pub psi_blocks: Vec<DMatrix<f64>>,
    pub lambda: f64,
    pub rho: f64,
}

impl FmglProblem {
    pub fn new(psi_blocks: Vec<DMatrix<f64>>, lambda: f64, rho: f64) -> Self {
        Self {
            psi_blocks,
            lambda,
            rho,
        }
    }

    pub fn n_levels(&self) -> usize {
        self.psi_blocks.len()
    }

    pub fn p(&self) -> usize {
        self.psi_blocks.first().map_or(0, |b| b.nrows())
    }

    fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.psi_blocks.is_empty() || p == 0 {
            return Err(Error::invalid("need at least one nonempty block"));
        }
        for (l, b) in self.psi_blocks.iter().enumerate() {
            if b.shape() != (p, p) {
                return Err(Error::dims(format!("psi block {l} is not {p}×{p}")));
            }
            if !b.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid(format!(
                    "psi block {l} has non-finite entries"
                )));
            }
            if linalg::max_asymmetry(b) > 1e-10 * linalg::max_abs(b).max(1.0) {
                return Err(Error::invalid(format!("psi block {l} is not symmetric")));
            }
            for i in 0..p {
                if !(b[(i, i)] > 0.0) {
                    return Err(Error::UnboundedProblem(format!(
                        "psi block {l} has diagonal entry {} at {i}",
                        b[(i, i)]
                    )));
                }
            }
        }
        for (name, v) in [("lambda", self.lambda), ("rho", self.rho)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be finite and ≥ 0")));
            }
        }
        Ok(())
    }

    /// Objective value, or `None` when some block is not positive definite.
    pub fn objective(&self, q: &[DMatrix<f64>]) -> Option<f64> {
        let mut f = 0.0;
        for (psi, ql) in self.psi_blocks.iter().zip(q) {
            let ch = linalg::cholesky(ql)?;
            f += -linalg::log_det_from_cholesky(&ch) + linalg::trace_of_product(psi, ql);
        }
        Some(f + penalty_of(q, self.lambda, self.rho))
    }

    /// Largest distance from zero to the subdifferential over all
    /// coordinates, measured per matrix entry. `w` holds the block inverses.
    pub fn subgradient_residual(&self, q: &[DMatrix<f64>], w: &[DMatrix<f64>]) -> f64 {
        let p = self.p();
        let l = self.n_levels();
        let mut worst = 0.0f64;
        let mut g = vec![0.0; l];
        let mut x = vec![0.0; l];
        for i in 0..p {
            for k in 0..l {
                worst = worst.max((self.psi_blocks[k][(i, i)] - w[k][(i, i)]).abs());
            }
        }
        for j in 0..p {
            for i in 0..j {
                for k in 0..l {
                    g[k] = self.psi_blocks[k][(i, j)] - w[k][(i, j)];
                    x[k] = q[k][(i, j)];
                }
                worst = worst.max(chain_residual(&g, &x, self.lambda, self.rho));
            }
        }
        worst
    }
}

/// Penalty with both triangles counted, so a symmetric pair contributes twice.
pub fn penalty_value(q: &PrecisionBlockSet, lambda: f64, rho: f64) -> f64 {
    penalty_of(q.blocks(), lambda, rho)
}

pub(crate) fn penalty_of(q: &[DMatrix<f64>], lambda: f64, rho: f64) -> f64 {
    let mut sparse = 0.0;
    let mut fuse = 0.0;
    for (k, ql) in q.iter().enumerate() {
        let p = ql.nrows();
        for j in 0..p {
            for i in 0..p {
                if i == j {
                    continue;
                }
                sparse += ql[(i, j)].abs();
                if let Some(next) = q.get(k + 1) {
                    fuse += (ql[(i, j)] - next[(i, j)]).abs();
                }
            }
        }
    }
    let mut total = 0.0;
    if lambda != 0.0 {
        total += lambda * sparse;
    }
    if rho != 0.0 {
        total += rho * fuse;
    }
    total
}

/// Minimal r such that some subgradient choice puts every level's
/// component `g_ℓ + λs_ℓ + ρ(t_ℓ − t_ℓ−1)` within [−r, r].
fn chain_residual(g: &[f64], x: &[f64], lambda: f64, rho: f64) -> f64 {
    let l = g.len();
    let feasible = |r: f64| -> bool {
        let (mut lo, mut hi) = (0.0f64, 0.0f64);
        for k in 0..l {
            let (s_lo, s_hi) = sign_set(x[k]);
            let a = lo - g[k] - lambda * s_hi - r;
            let b = hi - g[k] - lambda * s_lo + r;
            let (t_lo, t_hi) = if k + 1 == l {
                (0.0, 0.0)
            } else {
                let (u, v) = sign_set(x[k] - x[k + 1]);
                (rho * u, rho * v)
            };
            lo = a.max(t_lo);
            hi = b.min(t_hi);
            if lo > hi {
                return false;
            }
        }
        true
    };
    if feasible(0.0) {
        return 0.0;
    }
    let mut lo = 0.0;
    let mut hi = g.iter().fold(0.0f64, |m, v| m.max(v.abs())) + lambda + 2.0 * rho;
    for _ in 0..64 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

fn sign_set(v: f64) -> (f64, f64) {
    if v > 0.0 {
        (1.0, 1.0)
    } else if v < 0.0 {
        (-1.0, -1.0)
    } else {
        (-1.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FmglOptions {
    /// Subgradient residual target (max norm).
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for FmglOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FmglSolution {
    pub q: PrecisionBlockSet,
    pub iterations: usize,
    pub residual: f64,
    pub objective: f64,
}

pub fn fmgl_solve(
    problem: &FmglProblem,
    init: &PrecisionBlockSet,
    tol: f64,
) -> Result<PrecisionBlockSet> {
    let opts = FmglOptions {
        tol,
        ..FmglOptions::default()
    };
    fmgl_solve_with(problem, Some(init), &opts).map(|s| s.q)
}

/// Without `init`, starts from the unfused per-level solutions.
pub fn fmgl_solve_with(
    problem: &FmglProblem,
    init: Option<&PrecisionBlockSet>,
    opts: &FmglOptions,
) -> Result<FmglSolution> {
    problem.validate()?;
    let p = problem.p();
    let nl = problem.n_levels();
    let (lambda, rho) = (problem.lambda, problem.rho);

    let mut q: Vec<DMatrix<f64>> = match init {
        Some(q0) => {
            if q0.p() != p || q0.n_levels() != nl {
                return Err(Error::dims(format!(
                    "init is {}×{}×{}, problem is {p}×{p}×{nl}",
                    q0.p(),
                    q0.p(),
                    q0.n_levels()
                )));
            }
            q0.blocks().to_vec()
        }
        None => unfused_start(problem, opts.tol)?,
    };

    let mut chol = Vec::with_capacity(nl);
    for (k, b) in q.iter().enumerate() {
        chol.push(linalg::cholesky(b).ok_or_else(|| {
            Error::invalid(format!("initial block {k} is not positive definite"))
        })?);
    }
    let smooth = |q: &DMatrix<f64>, ch: &nalgebra::Cholesky<f64, nalgebra::Dyn>, k: usize| {
        -linalg::log_det_from_cholesky(ch) + linalg::trace_of_product(&problem.psi_blocks[k], q)
    };
    let mut f =
        (0..nl).map(|k| smooth(&q[k], &chol[k], k)).sum::<f64>() + penalty_of(&q, lambda, rho);

    let mut residual = f64::INFINITY;
    let mut target: Vec<DMatrix<f64>> = vec![DMatrix::zeros(p, p); nl];
    let mut u: Vec<DMatrix<f64>> = vec![DMatrix::zeros(p, p); nl];
    let mut free: Vec<(usize, usize)> = Vec::new();
    let mut a = vec![0.0; nl];
    let mut z = vec![0.0; nl];

    for iter in 0..opts.max_iterations {
        let w: Vec<DMatrix<f64>> = chol
            .iter()
            .map(|ch| {
                let mut w = ch.inverse();
                linalg::symmetrize(&mut w);
                w
            })
            .collect();
        let g: Vec<DMatrix<f64>> = (0..nl).map(|k| &problem.psi_blocks[k] - &w[k]).collect();
        residual = problem.subgradient_residual(&q, &w);
        if residual <= opts.tol {
            return Ok(FmglSolution {
                q: PrecisionBlockSet::new_unchecked(q)?,
                iterations: iter,
                residual,
                objective: f,
            });
        }

        free.clear();
        for j in 0..p {
            for i in 0..j {
                if (0..nl).any(|k| q[k][(i, j)] != 0.0 || g[k][(i, j)].abs() > lambda) {
                    free.push((i, j));
                }
            }
        }

        // `target` holds Q + D per level and `u` holds D·W.
        for k in 0..nl {
            target[k].copy_from(&q[k]);
            u[k].fill(0.0);
        }
        let w_scale = w
            .iter()
            .map(linalg::max_abs)
            .fold(f64::MIN_POSITIVE, f64::max);
        for _ in 0..MAX_SWEEPS {
            let mut max_step = 0.0f64;
            for k in 0..nl {
                let (wk, gk) = (&w[k], &g[k]);
                for i in 0..p {
                    let wdw = (0..p).map(|r| wk[(i, r)] * u[k][(r, i)]).sum::<f64>();
                    let b = gk[(i, i)] + wdw;
                    let mu = -b / (wk[(i, i)] * wk[(i, i)]);
                    if mu == 0.0 || !mu.is_finite() {
                        continue;
                    }
                    max_step = max_step.max(mu.abs());
                    target[k][(i, i)] += mu;
                    for r in 0..p {
                        u[k][(i, r)] += mu * wk[(i, r)];
                    }
                }
            }
            for &(i, j) in &free {
                for k in 0..nl {
                    let (wk, uk) = (&w[k], &u[k]);
                    let wdw = (0..p).map(|r| wk[(i, r)] * uk[(r, j)]).sum::<f64>();
                    let b = g[k][(i, j)] + wdw;
                    a[k] = wk[(i, j)] * wk[(i, j)] + wk[(i, i)] * wk[(j, j)];
                    z[k] = target[k][(i, j)] - b / a[k];
                }
                let x = solve_chain(&a, &z, lambda, rho);
                for k in 0..nl {
                    let mu = x[k] - target[k][(i, j)];
                    if mu == 0.0 {
                        continue;
                    }
                    max_step = max_step.max(mu.abs());
                    target[k][(i, j)] = x[k];
                    target[k][(j, i)] = x[k];
                    let (wk, uk) = (&w[k], &mut u[k]);
                    for r in 0..p {
                        uk[(i, r)] += mu * wk[(j, r)];
                        uk[(j, r)] += mu * wk[(i, r)];
                    }
                }
            }
            if max_step == 0.0
                || max_step * w_scale * w_scale
                    <= 0.05 * residual.min(1.0) * opts.tol.max(residual * residual)
            {
                break;
            }
        }

        let d: Vec<DMatrix<f64>> = (0..nl).map(|k| &target[k] - &q[k]).collect();
        let delta = (0..nl)
            .map(|k| linalg::trace_of_product(&g[k], &d[k]))
            .sum::<f64>()
            + penalty_of(&target, lambda, rho)
            - penalty_of(&q, lambda, rho);
        let mut alpha = 1.0;
        let mut accepted = false;
        'search: for _ in 0..MAX_BACKTRACKS {
            let cand: Vec<DMatrix<f64>> = if alpha == 1.0 {
                target.clone()
            } else {
                (0..nl).map(|k| &q[k] + &d[k] * alpha).collect()
            };
            let mut cand_chol = Vec::with_capacity(nl);
            let mut fc = penalty_of(&cand, lambda, rho);
            for k in 0..nl {
                match linalg::cholesky(&cand[k]) {
                    Some(ch) => {
                        fc += smooth(&cand[k], &ch, k);
                        cand_chol.push(ch);
                    }
                    None => {
                        alpha *= 0.5;
                        continue 'search;
                    }
                }
            }
            if fc <= f + ARMIJO * alpha * delta.min(0.0) {
                q = cand;
                chol = cand_chol;
                f = fc;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }

    Err(Error::MaxIterationsExceeded {
        iterations: opts.max_iterations,
        residual,
        best: q,
    })
}

fn unfused_start(problem: &FmglProblem, tol: f64) -> Result<Vec<DMatrix<f64>>> {
    problem
        .psi_blocks
        .iter()
        .map(|psi| {
            glasso::glasso_solve(&GlassoProblem::new(psi.clone(), problem.lambda), None, tol)
                .map(|s| s.q)
        })
        .collect()
}
