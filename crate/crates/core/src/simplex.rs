//! Nelder–Mead simplex minimization for small, smooth, derivative-free
//! problems. Deterministic: fixed coefficients, fixed initial simplex.

use alloc::vec;
use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Stop when the spread of function values is below
    /// `f_tol·(1 + |f_best|)` and vertex spread is below `x_tol`.
    pub f_tol: f64,
    pub x_tol: f64,
    pub max_evals: usize,
    /// Initial edge length along each coordinate.
    pub step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        Self {
            f_tol: 1e-8,
            x_tol: 1e-6,
            max_evals: 2000,
            step: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// Minimizes `f` from `x0`. Non-finite function values are treated as +∞,
/// so the returned value never exceeds `f(x0)`.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let d = x0.len();
    let evals = core::cell::Cell::new(0usize);
    let mut eval = |x: &[f64]| -> f64 {
        evals.set(evals.get() + 1);
        let v = f(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    };

    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for k in 0..d {
        let mut x = x0.to_vec();
        x[k] += opts.step;
        pts.push(x);
    }
    let mut vals: Vec<f64> = pts.iter().map(|x| eval(x)).collect();
    let mut converged = false;

    loop {
        // Stable sort keeps ties in insertion order.
        let mut order: Vec<usize> = (0..=d).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let f_spread = vals[d] - vals[0];
        let x_spread = pts[1..]
            .iter()
            .flat_map(|x| x.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        if f_spread <= opts.f_tol * (1.0 + vals[0].abs()) && x_spread <= opts.x_tol {
            converged = true;
            break;
        }
        if evals.get() >= opts.max_evals {
            break;
        }

        let mut centroid = vec![0.0; d];
        for x in &pts[..d] {
            for k in 0..d {
                centroid[k] += x[k] / d as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            (0..d)
                .map(|k| centroid[k] + t * (pts[d][k] - centroid[k]))
                .collect()
        };

        let xr = along(-1.0);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = eval(&xe);
            if fe < fr {
                pts[d] = xe;
                vals[d] = fe;
            } else {
                pts[d] = xr;
                vals[d] = fr;
            }
            continue;
        }
        if fr < vals[d - 1] {
            pts[d] = xr;
            vals[d] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[d] {
            let xc = along(-0.5);
            let fc = eval(&xc);
            (xc, fc)
        } else {
            let xc = along(0.5);
            let fc = eval(&xc);
            (xc, fc)
        };
        if fc < vals[d].min(fr) {
            pts[d] = xc;
            vals[d] = fc;
            continue;
        }
        // Shrink towards the best vertex.
        for i in 1..=d {
            let x: Vec<f64> = (0..d)
                .map(|k| pts[0][k] + 0.5 * (pts[i][k] - pts[0][k]))
                .collect();
            vals[i] = eval(&x);
            pts[i] = x;
        }
    }

    SimplexResult {
        x: pts.swap_remove(0),
        value: vals[0],
        evaluations: evals.get(),
        converged,
    }
}
