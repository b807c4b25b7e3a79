//! Numerical laboratory for the Euler–Maruyama chain of a one-dimensional SDE
//!
//! ```text
//! θ_{k+1} = θ_k + η g(θ_k) + √η σ ε_{k+1},   ε_k ~ N(0, 1) i.i.d.
//! ```
//!
//! The crate is organised around the objects needed to study how fast this
//! chain forgets its starting point in total variation:
//!
//! - [`drift`]: drift families, their dissipativity constants and the
//!   Lyapunov drift inequality for `V(x) = 1 + x²`.
//! - [`kernel`]: a quadrature representation of the transition kernel acting
//!   on densities, invariant measures, TV distances and minorization constants.
//! - [`simulate`]: seeded Monte Carlo paths, return times and exponential
//!   return-time moments.
//! - [`split`]: the split chain with an atom, regeneration blocks and
//!   regenerative estimators.
//! - [`rate`]: TV decay curves, geometric rate fits and uniform bounds.
//! - [`cli`]: configuration-driven experiments writing CSV and text reports.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod drift;
pub mod error;
pub mod kernel;
pub mod numerics;
pub mod rate;
pub mod simulate;
pub mod split;

pub use drift::{DerivedConstants, DriftKind, DriftSpec};
pub use error::{Error, Result};
pub use kernel::{Grid, GridMeasure, KernelOperator, SmallSetSpec};
pub use simulate::Interval;
pub use split::SplitState;
