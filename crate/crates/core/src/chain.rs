//! Exact solver for the weighted fused-lasso chain
//!
//! ```text
//! minimize  Σ_ℓ ½ a_ℓ (x_ℓ − z_ℓ)² + λ|x_ℓ| + ρ Σ_ℓ |x_ℓ − x_{ℓ+1}|
//! ```
//!
//! by forward dynamic programming on message derivatives followed by a
//! clamping backward pass. Each derivative is nondecreasing piecewise linear
//! with jumps, stored as a leftmost line, a rightmost line and a sorted set
//! of knots carrying slope/intercept increments. Cost is O(L log L).
//!
//! Solutions are exact in the sense that matters downstream: a coordinate
//! pinned at the λ-kink is returned as `0.0`, and fused neighbours are
//! returned bitwise equal.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

#[derive(Debug, Clone, Copy)]
struct Key(f64);

impl PartialEq for Key {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Key {}
impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Slope and intercept of one linear piece.
#[derive(Debug, Clone, Copy, Default)]
struct Line {
    s: f64,
    i: f64,
}

impl Line {
    #[inline]
    fn at(self, x: f64) -> f64 {
        self.s * x + self.i
    }
    #[inline]
    fn add(self, d: Line) -> Line {
        Line {
            s: self.s + d.s,
            i: self.i + d.i,
        }
    }
    #[inline]
    fn sub(self, d: Line) -> Line {
        Line {
            s: self.s - d.s,
            i: self.i - d.i,
        }
    }
    /// Point where the line reaches `c`, kept inside `[lo, hi]`.
    fn solve(self, c: f64, lo: f64, hi: f64) -> f64 {
        let x = if self.s > 0.0 {
            (c - self.i) / self.s
        } else {
            hi
        };
        x.max(lo).min(hi)
    }
}

#[derive(Debug, Default)]
struct Derivative {
    left: Line,
    right: Line,
    knots: BTreeMap<Key, Line>,
}

impl Derivative {
    fn add_knot(&mut self, at: f64, d: Line) {
        // -0.0 and 0.0 must land on the same key.
        let at = at + 0.0;
        let e = self.knots.entry(Key(at)).or_default();
        *e = e.add(d);
    }

    /// Adds `a(x − z) + λ·sign(x)`.
    fn add_term(&mut self, a: f64, z: f64, lambda: f64) {
        self.left = self.left.add(Line {
            s: a,
            i: -a * z - lambda,
        });
        self.right = self.right.add(Line {
            s: a,
            i: -a * z + lambda,
        });
        if lambda > 0.0 {
            self.add_knot(
                0.0,
                Line {
                    s: 0.0,
                    i: 2.0 * lambda,
                },
            );
        }
    }

    /// Smallest x with `f(x−) ≤ c ≤ f(x+)`; everything left of it is replaced
    /// by the constant `c`.
    fn truncate_left(&mut self, c: f64) -> f64 {
        let mut line = self.left;
        let mut prev = f64::NEG_INFINITY;
        let x = loop {
            let Some((&Key(k), &d)) = self.knots.iter().next() else {
                break line.solve(c, prev, f64::INFINITY);
            };
            if line.at(k) >= c {
                break line.solve(c, prev, k);
            }
            self.knots.remove(&Key(k));
            // Past the last knot the exact outer line beats accumulated deltas.
            line = if self.knots.is_empty() {
                self.right
            } else {
                line.add(d)
            };
            if line.at(k) >= c {
                break k;
            }
            prev = k;
        };
        self.left = Line { s: 0.0, i: c };
        self.add_knot(x, line.sub(self.left));
        x
    }

    /// Largest x with `f(x−) ≤ c ≤ f(x+)`; everything right of it is
    /// replaced by the constant `c`.
    fn truncate_right(&mut self, c: f64) -> f64 {
        let mut line = self.right;
        let mut prev = f64::INFINITY;
        let x = loop {
            let Some((&Key(k), &d)) = self.knots.iter().next_back() else {
                break line.solve(c, f64::NEG_INFINITY, prev);
            };
            if line.at(k) <= c {
                break line.solve(c, k, prev);
            }
            self.knots.remove(&Key(k));
            line = if self.knots.is_empty() {
                self.left
            } else {
                line.sub(d)
            };
            if line.at(k) <= c {
                break k;
            }
            prev = k;
        };
        self.right = Line { s: 0.0, i: c };
        self.add_knot(x, self.right.sub(line));
        x
    }
}

/// Solves the chain. `a` must be strictly positive; `lambda`, `rho` ≥ 0.
pub fn solve_chain(a: &[f64], z: &[f64], lambda: f64, rho: f64) -> Vec<f64> {
    let l = a.len();
    assert_eq!(l, z.len());
    if l == 0 {
        return Vec::new();
    }
    let mut lo = vec![0.0; l];
    let mut hi = vec![0.0; l];
    let mut d = Derivative::default();
    for k in 0..l {
        d.add_term(a[k], z[k], lambda);
        if k + 1 < l {
            lo[k] = d.truncate_left(-rho);
            hi[k] = d.truncate_right(rho);
        }
    }
    let mut x = vec![0.0; l];
    x[l - 1] = d.truncate_left(0.0) + 0.0;
    for k in (0..l - 1).rev() {
        // Rounding can invert the bounds by an ulp; never panic on that.
        x[k] = x[k + 1].max(lo[k]).min(hi[k]);
    }
    x
}

/// Chain objective, for tests and diagnostics.
pub fn chain_objective(a: &[f64], z: &[f64], lambda: f64, rho: f64, x: &[f64]) -> f64 {
    let mut f = 0.0;
    for k in 0..x.len() {
        f += 0.5 * a[k] * (x[k] - z[k]) * (x[k] - z[k]) + lambda * x[k].abs();
        if k + 1 < x.len() {
            f += rho * (x[k] - x[k + 1]).abs();
        }
    }
    f
}
