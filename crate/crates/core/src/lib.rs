//! Multivariate basis graphical lasso.
//!
//! A multivariate Gaussian process on `n` locations is written as a linear
//! combination of `L` orthonormal spatial basis functions, each weighted by an
//! independent `p`-variate Gaussian graphical vector with precision `Q_ℓ`,
//! plus per-variable white noise. This crate estimates the sparse precision
//! blocks `Q_1..Q_L` from replicated data with an ℓ1 sparsity penalty and an
//! optional sequential fusion penalty across levels, using a
//! difference-of-convex (majorization-minimization) outer loop around
//! proximal-Newton graphical lasso solvers.
//!
//! Everything here is `no_std` + `alloc`. File formats, the command line and
//! thread pools live in the companion `mbgl` crate; parallel work is routed
//! through the [`Executor`] trait.
//!
//! Indexing is zero-based throughout, with one exception:
//! [`analysis::independence_level`] reports levels counted from 1.

#![no_std]
// NaN-rejecting `!(x > 0.0)` checks and index loops over matrices are deliberate.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod analysis;
pub mod chain;
pub mod cv;
pub mod dc;
pub mod eof;
mod error;
pub mod exec;
pub mod fused;
pub mod glasso;
pub mod likelihood;
pub mod linalg;
pub mod model;
pub mod noise;
pub mod oracle;
pub mod simplex;
pub mod simulate;
pub mod suffstats;
#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use exec::{Executor, Sequential};
pub use model::{
    BasisMatrix, Dataset, NoiseModel, PenaltyConfig, PrecisionBlockSet, StandardizationFields,
};
pub use suffstats::SuffStats;

pub use nalgebra::{DMatrix, DVector};
