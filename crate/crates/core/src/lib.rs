//! Numerical laboratory for passive scalars stirred by randomly shifted
//! alternating shears.
//!
//! * [`torus`]: geometry of T² and reproducible random streams.
//! * [`flow`]: exact flow maps, Jacobians and two-point / projective chains.
//! * [`stochastic`]: diffusive Lagrangian dynamics (SDE and pulsed kicks).
//! * [`spectral`]: spectrally exact advection-diffusion on an n×n grid.
//! * [`harris`]: drift, minorization, Ulam contraction and correlation
//!   decay estimators for the two-point chain.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod flow;
pub mod harris;
pub mod spectral;
pub mod stats;
pub mod stochastic;
pub mod torus;

pub use error::{Error, Result};
