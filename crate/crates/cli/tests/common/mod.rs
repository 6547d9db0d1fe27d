//! Seeded fixtures shared by the integration and acceptance tests.
#![allow(dead_code)]

use mbgl_core::{BasisMatrix, DMatrix, Dataset, PrecisionBlockSet};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(g: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(g)
}

pub fn uniform(g: &mut ChaCha8Rng) -> f64 {
    (g.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

pub fn random_matrix(r: usize, c: usize, g: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(g))
}

/// Orthonormal n×l basis by modified Gram-Schmidt on a Gaussian matrix.
pub fn orthonormal_basis(n: usize, l: usize, seed: u64) -> BasisMatrix {
    let mut g = rng(seed);
    let mut a = random_matrix(n, l, &mut g);
    for j in 0..l {
        for k in 0..j {
            let proj = a.column(j).dot(&a.column(k));
            let ck = a.column(k).clone_owned();
            let mut cj = a.column_mut(j);
            cj -= ck * proj;
        }
        let norm = a.column(j).norm();
        a.column_mut(j).scale_mut(1.0 / norm);
    }
    BasisMatrix::new_unchecked(a, Vec::new())
}

pub fn random_spd(p: usize, g: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = random_matrix(p, p, g);
    let s = &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5;
    (&s + s.transpose()) * 0.5
}

pub fn random_blocks(p: usize, l: usize, seed: u64) -> PrecisionBlockSet {
    let mut g = rng(seed);
    PrecisionBlockSet::new((0..l).map(|_| random_spd(p, &mut g)).collect()).unwrap()
}

/// Sparse truth: each off-diagonal pair is an edge with probability
/// `density`, drawn independently per level, with magnitude in [0.3, 0.5]
/// of the diagonal and a random sign. Diagonals are scaled by
/// `scale(level)`. Rows are made diagonally dominant so every block is
/// positive definite.
pub fn sparse_blocks(
    p: usize,
    l: usize,
    density: f64,
    seed: u64,
    scale: impl Fn(usize) -> f64,
) -> PrecisionBlockSet {
    let mut g = rng(seed);
    let blocks = (0..l)
        .map(|lev| {
            let mut b = DMatrix::<f64>::zeros(p, p);
            for j in 0..p {
                for i in 0..j {
                    if uniform(&mut g) < density {
                        let mag = 0.3 + 0.2 * uniform(&mut g);
                        let sign = if uniform(&mut g) < 0.5 { -1.0 } else { 1.0 };
                        b[(i, j)] = sign * mag;
                        b[(j, i)] = sign * mag;
                    }
                }
            }
            for i in 0..p {
                let off: f64 = (0..p).filter(|&j| j != i).map(|j| b[(i, j)].abs()).sum();
                b[(i, i)] = 1.0 + off;
            }
            b * scale(lev)
        })
        .collect();
    PrecisionBlockSet::new(blocks).unwrap()
}

/// `m` realizations of Σ_ℓ φ_ℓ ⊗ w_ℓ plus white noise, with
/// `w_ℓ ~ N(0, Q_ℓ⁻¹)`. Independent of the library's simulator.
pub fn synth(
    q: &PrecisionBlockSet,
    basis: &BasisMatrix,
    m: usize,
    tau_sq: &[f64],
    seed: u64,
) -> Dataset {
    let p = q.p();
    let n = basis.n_locations();
    let mut g = rng(seed);
    let factors: Vec<DMatrix<f64>> = q
        .blocks()
        .iter()
        .map(|b| b.clone().try_inverse().unwrap().cholesky().unwrap().l())
        .collect();
    let phi = basis.phi();
    let mut values = vec![0.0; p * n * m];
    for r in 0..m {
        // p×L weights for this realization.
        let mut w = DMatrix::zeros(p, factors.len());
        for (l, f) in factors.iter().enumerate() {
            w.set_column(l, &(f * random_matrix(p, 1, &mut g)).column(0));
        }
        let field = &w * phi.transpose();
        for s in 0..n {
            for v in 0..p {
                values[v + p * (s + n * r)] = field[(v, s)] + tau_sq[v].sqrt() * normal(&mut g);
            }
        }
    }
    Dataset::from_values(p, n, m, values).unwrap()
}
