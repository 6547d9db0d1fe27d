//! Single-graph ℓ1-penalized Gaussian likelihood:
//!
//! ```text
//! minimize  −log det Q + tr(ΨQ) + Σ_ij Λ_ij |Q_ij|   over Q ≻ 0
//! ```
//!
//! solved by proximal Newton. Each outer step builds the second-order model
//! at `W = Q⁻¹`, minimizes it by cyclic coordinate descent over the free set
//! (nonzero entries plus entries whose gradient exceeds the penalty), then
//! backtracks on the true objective until the step is positive definite and
//! satisfies an Armijo condition.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::linalg::{self, soft_threshold};
use crate::{Error, Result};

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;
const MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoProblem {
    /// Symmetric "sample covariance".
    pub psi: DMatrix<f64>,
    /// Off-diagonal weight.
    pub lambda: f64,
    /// Apply `lambda` to the diagonal too (off by default).
    pub penalize_diagonal: bool,
    /// Elementwise weights overriding `lambda` when set.
    pub weights: Option<DMatrix<f64>>,
}

impl GlassoProblem {
    pub fn new(psi: DMatrix<f64>, lambda: f64) -> Self {
        Self {
            psi,
            lambda,
            penalize_diagonal: false,
            weights: None,
        }
    }

    pub fn with_weights(psi: DMatrix<f64>, weights: DMatrix<f64>) -> Self {
        Self {
            psi,
            lambda: 0.0,
            penalize_diagonal: false,
            weights: Some(weights),
        }
    }

    pub fn p(&self) -> usize {
        self.psi.nrows()
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        match &self.weights {
            Some(w) => w[(i, j)],
            None if i == j && !self.penalize_diagonal => 0.0,
            None => self.lambda,
        }
    }

    fn penalty(&self, q: &DMatrix<f64>) -> f64 {
        let p = self.p();
        let mut s = 0.0;
        for j in 0..p {
            for i in 0..p {
                let w = self.weight(i, j);
                if w != 0.0 {
                    s += w * q[(i, j)].abs();
                }
            }
        }
        s
    }

    fn is_unpenalized(&self) -> bool {
        let p = self.p();
        (0..p).all(|j| (0..p).all(|i| self.weight(i, j) == 0.0))
    }

    fn validate(&self) -> Result<()> {
        let p = self.p();
        if p == 0 || self.psi.ncols() != p {
            return Err(Error::dims("psi must be square and nonempty"));
        }
        if !self.psi.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("psi has non-finite entries"));
        }
        let scale = linalg::max_abs(&self.psi).max(1.0);
        if linalg::max_asymmetry(&self.psi) > 1e-10 * scale {
            return Err(Error::invalid("psi is not symmetric"));
        }
        if let Some(w) = &self.weights {
            if w.shape() != (p, p) || w.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::invalid(
                    "penalty weights must be p×p and nonnegative",
                ));
            }
        } else if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be finite and ≥ 0"));
        }
        Ok(())
    }

    /// Objective value, or `None` when `q` is not positive definite.
    pub fn objective(&self, q: &DMatrix<f64>) -> Option<f64> {
        let ch = linalg::cholesky(q)?;
        Some(
            -linalg::log_det_from_cholesky(&ch)
                + linalg::trace_of_product(&self.psi, q)
                + self.penalty(q),
        )
    }

    /// Max-norm violation of the optimality conditions at `q`, given
    /// `w = q⁻¹`. Zero entries are allowed any gradient within the penalty.
    pub fn kkt_residual(&self, q: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
        let p = self.p();
        let mut worst = 0.0f64;
        for j in 0..p {
            for i in 0..p {
                let g = self.psi[(i, j)] - w[(i, j)];
                let lam = self.weight(i, j);
                let x = q[(i, j)];
                let r = if x > 0.0 {
                    (g + lam).abs()
                } else if x < 0.0 {
                    (g - lam).abs()
                } else {
                    (g.abs() - lam).max(0.0)
                };
                worst = worst.max(r);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlassoOptions {
    /// KKT residual target (max norm).
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for GlassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iterations: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlassoSolution {
    pub q: DMatrix<f64>,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub objective: f64,
}

pub fn glasso_solve(
    problem: &GlassoProblem,
    init: Option<&DMatrix<f64>>,
    tol: f64,
) -> Result<GlassoSolution> {
    glasso_solve_with(
        problem,
        init,
        &GlassoOptions {
            tol,
            ..GlassoOptions::default()
        },
    )
}

pub fn glasso_solve_with(
    problem: &GlassoProblem,
    init: Option<&DMatrix<f64>>,
    opts: &GlassoOptions,
) -> Result<GlassoSolution> {
    problem.validate()?;
    let p = problem.p();
    let psi = &problem.psi;

    if problem.is_unpenalized() {
        let q = linalg::spd_inverse(psi).ok_or_else(|| {
            Error::UnboundedProblem("no penalty and psi is not positive definite".into())
        })?;
        let w = psi.clone();
        return Ok(GlassoSolution {
            kkt_residual: problem.kkt_residual(&q, &w),
            objective: problem.objective(&q).unwrap_or(f64::NAN),
            q,
            iterations: 0,
        });
    }
    for i in 0..p {
        if problem.weight(i, i) == 0.0 && !(psi[(i, i)] > 0.0) {
            return Err(Error::UnboundedProblem(format!(
                "psi[{i},{i}] = {} with an unpenalized diagonal",
                psi[(i, i)]
            )));
        }
    }

    let mut q = match init {
        Some(q0) => {
            if q0.shape() != (p, p) {
                return Err(Error::dims("init has the wrong shape"));
            }
            q0.clone()
        }
        None => default_init(psi),
    };
    let mut chol = linalg::cholesky(&q)
        .ok_or_else(|| Error::invalid("initial estimate is not positive definite"))?;
    let mut f = -linalg::log_det_from_cholesky(&chol)
        + linalg::trace_of_product(psi, &q)
        + problem.penalty(&q);

    let mut residual = f64::INFINITY;
    let mut target = DMatrix::zeros(p, p);
    let mut u = DMatrix::zeros(p, p);
    let mut free: Vec<(usize, usize)> = Vec::with_capacity(p * (p + 1) / 2);

    for iter in 0..opts.max_iterations {
        let mut w = chol.inverse();
        linalg::symmetrize(&mut w);
        let g = psi - &w;
        residual = problem.kkt_residual(&q, &w);
        if residual <= opts.tol {
            return Ok(GlassoSolution {
                q,
                iterations: iter,
                kkt_residual: residual,
                objective: f,
            });
        }

        free.clear();
        for j in 0..p {
            free.push((j, j));
        }
        for j in 0..p {
            for i in 0..j {
                if q[(i, j)] != 0.0 || g[(i, j)].abs() > problem.weight(i, j) {
                    free.push((i, j));
                }
            }
        }

        // Coordinate descent on the quadratic model. `target` holds Q + D and
        // `u` holds D·W.
        target.copy_from(&q);
        u.fill(0.0);
        let w_scale = linalg::max_abs(&w).max(f64::MIN_POSITIVE);
        for _ in 0..MAX_SWEEPS {
            let mut max_step = 0.0f64;
            for &(i, j) in &free {
                let wdw = (0..p).map(|k| w[(i, k)] * u[(k, j)]).sum::<f64>();
                let b = g[(i, j)] + wdw;
                let c = target[(i, j)];
                let (a, lam) = if i == j {
                    (w[(i, i)] * w[(i, i)], problem.weight(i, i))
                } else {
                    (
                        w[(i, j)] * w[(i, j)] + w[(i, i)] * w[(j, j)],
                        problem.weight(i, j),
                    )
                };
                let x = soft_threshold(c - b / a, lam / a);
                let mu = x - c;
                if mu == 0.0 {
                    continue;
                }
                max_step = max_step.max(mu.abs());
                target[(i, j)] = x;
                if i == j {
                    for k in 0..p {
                        u[(i, k)] += mu * w[(i, k)];
                    }
                } else {
                    target[(j, i)] = x;
                    for k in 0..p {
                        u[(i, k)] += mu * w[(j, k)];
                        u[(j, k)] += mu * w[(i, k)];
                    }
                }
            }
            if max_step * w_scale * w_scale
                <= 0.05 * residual.min(1.0) * opts.tol.max(residual * residual)
                || max_step == 0.0
            {
                break;
            }
        }

        let d = &target - &q;
        let delta =
            linalg::trace_of_product(&g, &d) + problem.penalty(&target) - problem.penalty(&q);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let cand = if alpha == 1.0 {
                target.clone()
            } else {
                &q + &d * alpha
            };
            if let Some(ch) = linalg::cholesky(&cand) {
                let fc = -linalg::log_det_from_cholesky(&ch)
                    + linalg::trace_of_product(psi, &cand)
                    + problem.penalty(&cand);
                if fc <= f + ARMIJO * alpha * delta.min(0.0) {
                    q = cand;
                    chol = ch;
                    f = fc;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            // No decrease available at working precision.
            break;
        }
    }

    let mut w = chol.inverse();
    linalg::symmetrize(&mut w);
    residual = problem.kkt_residual(&q, &w).min(residual);
    Err(Error::MaxIterationsExceeded {
        iterations: opts.max_iterations,
        residual,
        best: vec![q],
    })
}

/// `diag(1/Ψ_ii)`, always feasible when the diagonal is positive.
pub fn default_init(psi: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::inverse_diagonal(psi)
}
