//! Fixture helpers for unit tests.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

use crate::{BasisMatrix, Dataset, PrecisionBlockSet};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

pub fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

/// Orthonormal n×l basis via modified Gram-Schmidt.
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

pub fn random_spd(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let a = random_matrix(p, p, rng);
    let mut s = &a * a.transpose() / p as f64 + DMatrix::identity(p, p) * 0.5;
    crate::linalg::symmetrize(&mut s);
    s
}

pub fn random_blocks(p: usize, l: usize, seed: u64) -> PrecisionBlockSet {
    let mut g = rng(seed);
    PrecisionBlockSet::new((0..l).map(|_| random_spd(p, &mut g)).collect()).unwrap()
}

pub fn random_dataset(p: usize, n: usize, m: usize, seed: u64) -> Dataset {
    let mut g = rng(seed);
    let values = (0..p * n * m).map(|_| normal(&mut g)).collect();
    Dataset::from_values(p, n, m, values).unwrap()
}

pub fn zero_dataset(p: usize, n: usize, m: usize) -> Dataset {
    Dataset::from_values(p, n, m, alloc::vec![0.0; p * n * m]).unwrap()
}
