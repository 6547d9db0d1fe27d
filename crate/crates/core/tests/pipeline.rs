//! The public API end to end, plus invariants of the sufficient statistics.

use mbgl_core::analysis::{edge_counts_by_level, FittedModel, ZERO_TOL};
use mbgl_core::cv::{cross_validate, CvPlan};
use mbgl_core::dc::dc_fit;
use mbgl_core::eof::build_pooled_eof_basis;
use mbgl_core::model::standardize;
use mbgl_core::noise::{estimate_all_noise, NoiseFitConfig};
use mbgl_core::simulate::simulate;
use mbgl_core::suffstats::compute_suffstats;
use mbgl_core::{BasisMatrix, DMatrix, Dataset, NoiseModel, PrecisionBlockSet};
use proptest::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

fn gaussian(p: usize, n: usize, m: usize, seed: u64) -> Dataset {
    let mut g = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..p * n * m)
        .map(|_| StandardNormal.sample(&mut g))
        .collect();
    Dataset::from_values(p, n, m, values).unwrap()
}

fn basis(n: usize, l: usize, seed: u64) -> BasisMatrix {
    let data = gaussian(1, n, 3 * l, seed);
    build_pooled_eof_basis(&data, l).unwrap()
}

#[test]
fn fit_simulate_refit() {
    // Two conditionally independent pairs per level: (0,1) coupled, 2 alone.
    let q = PrecisionBlockSet::new(
        (0..3)
            .map(|l| {
                let s = 1.0 + l as f64;
                DMatrix::from_row_slice(3, 3, &[s, -0.45 * s, 0.0, -0.45 * s, s, 0.0, 0.0, 0.0, s])
            })
            .collect(),
    )
    .unwrap();
    let phi = basis(40, 3, 1);
    let noise = NoiseModel::uniform(3, 0.05).unwrap();
    let truth = FittedModel::new(phi, q, noise, None, mbgl_core::model::default_names(3)).unwrap();
    let data = simulate(&truth, 300, 2, true, false).unwrap();

    let (z, fields) = standardize(&data).unwrap();
    assert!(fields.pixel_sd().iter().all(|v| *v > 0.0));
    let eof = build_pooled_eof_basis(&z, 3).unwrap();
    let tau = estimate_all_noise(&z, &eof, &NoiseFitConfig::default()).unwrap();
    assert!(
        tau.tau_sq().iter().all(|t| *t > 0.0 && *t < 1.0),
        "{:?}",
        tau.tau_sq()
    );

    let plan = CvPlan::new(300, 5, vec![0.01, 0.05, 0.2], vec![0.0], 3).unwrap();
    let outcome = cross_validate(&z, &eof, &tau, &plan).unwrap();
    // Three sparsity candidates, then the single fusion candidate.
    assert_eq!(outcome.table.len(), 4);

    let stats = compute_suffstats(&z, &eof, &tau).unwrap();
    let (fit, report) = dc_fit(&stats, &tau, &outcome.selected, None).unwrap();
    assert!(report.converged);
    assert!(report
        .objective_trace
        .windows(2)
        .all(|w| w[1] <= w[0] + 1e-8));
    // The strong (0,1) coupling survives at every level.
    for b in fit.blocks() {
        assert!(b[(0, 1)] < 0.0, "{b}");
    }
    assert!(edge_counts_by_level(&fit, ZERO_TOL).iter().all(|c| *c >= 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn second_moments_ignore_realization_order(seed in 0u64..1000, shift in 1usize..5) {
        let data = gaussian(2, 8, 6, seed);
        let phi = basis(8, 3, seed + 1);
        let noise = NoiseModel::new(vec![0.3, 1.7]).unwrap();
        let order: Vec<usize> = (0..6).map(|r| (r + shift) % 6).collect();
        let permuted = data.select_realizations(&order).unwrap();
        let a = compute_suffstats(&data, &phi, &noise).unwrap();
        let b = compute_suffstats(&permuted, &phi, &noise).unwrap();
        for l in 0..3 {
            let d = a.second_moment_block(l).unwrap() - b.second_moment_block(l).unwrap();
            prop_assert!(d.amax() < 1e-12);
        }
    }

    #[test]
    fn noise_scaling_is_homogeneous(seed in 0u64..1000, c in 0.1f64..10.0) {
        let data = gaussian(2, 7, 4, seed);
        let phi = basis(7, 2, seed + 1);
        let tau = [0.4, 0.9];
        let base = compute_suffstats(&data, &phi, &NoiseModel::new(tau.to_vec()).unwrap()).unwrap();
        let scaled = compute_suffstats(
            &data,
            &phi,
            &NoiseModel::new(tau.iter().map(|t| t * c).collect()).unwrap(),
        )
        .unwrap();
        for (x, y) in base.weights().iter().zip(scaled.weights()) {
            prop_assert!((x / c - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
        for l in 0..2 {
            let d = base.second_moment_block(l).unwrap() / (c * c) - scaled.second_moment_block(l).unwrap();
            prop_assert!(d.amax() <= 1e-12 * base.second_moment_block(l).unwrap().amax().max(1.0));
        }
    }
}
