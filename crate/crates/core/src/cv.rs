//! k-fold cross-validation of the penalty pair.
//!
//! Realizations are shuffled with a seeded ChaCha8 stream and cut into `k`
//! contiguous folds. A candidate `(λ, ρ)` is scored by fitting on all folds
//! but one and evaluating the unpenalized negative log-likelihood on the
//! held-out fold, averaged over folds. The search runs in two stages: λ over
//! its grid with ρ = 0, then ρ over its grid at the winning λ. Ties go to the
//! larger penalty.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::dc;
use crate::exec::{Executor, Sequential};
use crate::likelihood;
use crate::suffstats::compute_suffstats_with;
use crate::{BasisMatrix, Dataset, Error, NoiseModel, PenaltyConfig, Result, SuffStats};

pub const DEFAULT_FOLDS: usize = 5;

/// Scores within this relative distance of the best count as tied.
const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CvPlan {
    pub k: usize,
    /// Fold of each realization, by position in the dataset.
    pub fold_assignment: Vec<usize>,
    pub lambda_grid: Vec<f64>,
    pub rho_grid: Vec<f64>,
    pub seed: u64,
}

impl CvPlan {
    pub fn new(
        m: usize,
        k: usize,
        lambda_grid: Vec<f64>,
        rho_grid: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if k < 2 || k > m {
            return Err(Error::invalid(format!("need 2 ≤ k ≤ m, got k={k}, m={m}")));
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let mut fold_assignment = vec![0; m];
        for (pos, &r) in order.iter().enumerate() {
            fold_assignment[r] = pos * k / m;
        }
        let plan = Self {
            k,
            fold_assignment,
            lambda_grid,
            rho_grid,
            seed,
        };
        plan.validate(m)?;
        Ok(plan)
    }

    pub fn validate(&self, m: usize) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("need at least 2 folds"));
        }
        if self.fold_assignment.len() != m {
            return Err(Error::dims(format!(
                "fold assignment covers {} realizations, data has {m}",
                self.fold_assignment.len()
            )));
        }
        if let Some(bad) = self.fold_assignment.iter().find(|f| **f >= self.k) {
            return Err(Error::invalid(format!("fold index {bad} ≥ k = {}", self.k)));
        }
        for fold in 0..self.k {
            if !self.fold_assignment.contains(&fold) {
                return Err(Error::FoldTooSmall { fold });
            }
        }
        for (name, grid) in [("lambda", &self.lambda_grid), ("rho", &self.rho_grid)] {
            if grid.is_empty() {
                return Err(Error::invalid(format!("{name} grid is empty")));
            }
            if grid.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                return Err(Error::invalid(format!(
                    "{name} grid values must be finite and ≥ 0"
                )));
            }
        }
        Ok(())
    }

    /// `(train, test)` realization positions for one fold.
    pub fn fold_split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        let (test, train): (Vec<usize>, Vec<usize>) =
            (0..self.fold_assignment.len()).partition(|&r| self.fold_assignment[r] == fold);
        (train, test)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvStage {
    Sparsity,
    Fusion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvCandidate {
    pub stage: CvStage,
    pub lambda: f64,
    pub rho: f64,
    /// Held-out score per fold; empty when the candidate failed.
    pub fold_scores: Vec<f64>,
    pub mean_score: Option<f64>,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvOutcome {
    pub selected: PenaltyConfig,
    pub selected_score: f64,
    pub table: Vec<CvCandidate>,
}

pub fn cross_validate(
    data: &Dataset,
    basis: &BasisMatrix,
    noise: &NoiseModel,
    plan: &CvPlan,
) -> Result<CvOutcome> {
    cross_validate_with(
        data,
        basis,
        noise,
        plan,
        &PenaltyConfig::default(),
        &Sequential,
    )
}

/// `base` supplies the DC-loop controls; its λ and ρ are ignored.
pub fn cross_validate_with<E: Executor>(
    data: &Dataset,
    basis: &BasisMatrix,
    noise: &NoiseModel,
    plan: &CvPlan,
    base: &PenaltyConfig,
    exec: &E,
) -> Result<CvOutcome> {
    plan.validate(data.n_realizations())?;
    let stats = compute_suffstats_with(data, basis, noise, exec)?;
    cross_validate_stats(&stats, noise, plan, base, exec)
}

pub fn cross_validate_stats<E: Executor>(
    stats: &SuffStats,
    noise: &NoiseModel,
    plan: &CvPlan,
    base: &PenaltyConfig,
    exec: &E,
) -> Result<CvOutcome> {
    plan.validate(stats.n_realizations())?;
    let folds = fold_stats(stats, plan)?;

    let stage1: Vec<(f64, f64)> = plan.lambda_grid.iter().map(|&l| (l, 0.0)).collect();
    let mut table = score_candidates(&folds, noise, base, &stage1, CvStage::Sparsity, exec);
    let (best_lambda, _) = pick(&table, |c| c.lambda).ok_or(Error::NoViableCandidate)?;

    let stage2: Vec<(f64, f64)> = plan.rho_grid.iter().map(|&r| (best_lambda, r)).collect();
    let fused = score_candidates(&folds, noise, base, &stage2, CvStage::Fusion, exec);
    let (best_rho, score) = pick(&fused, |c| c.rho).ok_or(Error::NoViableCandidate)?;
    table.extend(fused);

    Ok(CvOutcome {
        selected: PenaltyConfig {
            lambda: best_lambda,
            rho: best_rho,
            ..*base
        },
        selected_score: score,
        table,
    })
}

/// Train/test statistics per fold. Test statistics only ever contain the
/// held-out realizations.
pub(crate) fn fold_stats(stats: &SuffStats, plan: &CvPlan) -> Result<Vec<(SuffStats, SuffStats)>> {
    (0..plan.k)
        .map(|fold| {
            let (train, test) = plan.fold_split(fold);
            if train.is_empty() || test.is_empty() {
                return Err(Error::FoldTooSmall { fold });
            }
            Ok((stats.subset(&train)?, stats.subset(&test)?))
        })
        .collect()
}

fn score_candidates<E: Executor>(
    folds: &[(SuffStats, SuffStats)],
    noise: &NoiseModel,
    base: &PenaltyConfig,
    grid: &[(f64, f64)],
    stage: CvStage,
    exec: &E,
) -> Vec<CvCandidate> {
    let k = folds.len();
    let scores = exec.map(grid.len() * k, |job| {
        let (lambda, rho) = grid[job / k];
        let (train, test) = &folds[job % k];
        let penalty = PenaltyConfig {
            lambda,
            rho,
            ..*base
        };
        let (q, _) = dc::dc_fit(train, noise, &penalty, None)?;
        Ok::<f64, Error>(
            likelihood::negloglik_reduced(&q, test, noise)? + test.likelihood_constant(),
        )
    });
    let mut scores = scores.into_iter();
    grid.iter()
        .map(|&(lambda, rho)| {
            let mut fold_scores = Vec::with_capacity(k);
            let mut failure = None;
            for s in scores.by_ref().take(k) {
                match s {
                    Ok(v) if v.is_finite() => fold_scores.push(v),
                    Ok(v) => failure = failure.or(Some(format!("non-finite score {v}"))),
                    Err(e) => failure = failure.or(Some(e.to_string())),
                }
            }
            if failure.is_some() {
                fold_scores.clear();
            }
            let mean_score = failure
                .is_none()
                .then(|| fold_scores.iter().sum::<f64>() / k as f64);
            CvCandidate {
                stage,
                lambda,
                rho,
                fold_scores,
                mean_score,
                failure,
            }
        })
        .collect()
}

/// Lowest mean score; among ties, the largest penalty value.
fn pick(cands: &[CvCandidate], penalty: impl Fn(&CvCandidate) -> f64) -> Option<(f64, f64)> {
    let best = cands
        .iter()
        .filter_map(|c| c.mean_score)
        .fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return None;
    }
    let slack = TIE_TOL * best.abs().max(1.0);
    cands
        .iter()
        .filter(|c| c.mean_score.is_some_and(|s| s <= best + slack))
        .map(|c| (penalty(c), c.mean_score.unwrap_or(best)))
        .fold(None, |acc: Option<(f64, f64)>, x| match acc {
            Some(a) if a.0 >= x.0 => Some(a),
            _ => Some(x),
        })
}
