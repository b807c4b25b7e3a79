//! Deterministic quadrature representation of the EM transition kernel
//!
//! ```text
//! p_η(x, y) = (2πησ²)^{-1/2} exp(−(y − x − ηg(x))² / (2ησ²))
//! ```
//!
//! acting on densities tabulated on a truncated uniform grid. Mass that the
//! kernel pushes off the grid is tracked as an additive tail bound.

mod grid;
mod measure;
mod minorization;
mod operator;

pub use grid::Grid;
pub use measure::{GridMeasure, GridSampler};
pub use minorization::{
    check_minorization, doeblin_rate, kernel_doeblin_mass, minorization_epsilon, whole_space_minorization,
    SmallSetSpec, WholeSpaceMinorization,
};
pub use operator::{InvariantMeasure, KernelOperator};

use crate::drift::{check_eta, derive_constants, DriftSpec};
use crate::error::{Error, Result};
use crate::numerics::normal_pdf;

/// Quadrature tolerance on total mass.
pub const Q_TOL: f64 = 1e-8;
/// Largest one-step mass allowed to leave the grid.
pub const LEAK_TOL: f64 = 1e-8;
pub const INVARIANT_TOL: f64 = 1e-9;
pub const MAX_ITERS: usize = 100_000;
pub const DEFAULT_NODES: usize = 4097;
/// Largest grid for which the kernel matrix is stored.
pub const DENSE_LIMIT: usize = 8192;

/// `p_η(x, y)`.
pub fn transition_density(spec: &DriftSpec, eta: f64, x: f64, y: f64) -> Result<f64> {
    check_eta(eta)?;
    if !(x.is_finite() && y.is_finite()) {
        return Err(Error::Domain(format!("transition density at non-finite ({x}, {y})")));
    }
    Ok(normal_pdf(y, spec.step_mean(eta, x), eta * spec.sigma * spec.sigma))
}

/// One application of the kernel, building the operator for this call.
/// Reuse a [`KernelOperator`] when applying repeatedly.
pub fn apply_kernel(spec: &DriftSpec, eta: f64, xi: &GridMeasure) -> Result<GridMeasure> {
    KernelOperator::new(spec, eta, *xi.grid())?.apply(xi)
}

pub fn n_step_from_point(spec: &DriftSpec, eta: f64, x0: f64, n: usize, grid: Grid) -> Result<GridMeasure> {
    KernelOperator::new(spec, eta, grid)?.n_step_from_point(x0, n)
}

pub fn invariant_measure(spec: &DriftSpec, eta: f64, grid: Grid, tol: f64) -> Result<InvariantMeasure> {
    KernelOperator::new(spec, eta, grid)?.invariant_measure(tol, MAX_ITERS)
}

/// `d_TV = ½∫|a − b|` on a shared grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TvDistance {
    pub value: f64,
    /// `½(tail_a + tail_b)`: mass unaccounted for on the grid.
    pub uncertainty: f64,
}

impl TvDistance {
    /// `‖a − b‖_TV = 2 d_TV`.
    pub fn norm(&self) -> f64 {
        2.0 * self.value
    }
}

pub fn tv_distance(a: &GridMeasure, b: &GridMeasure) -> Result<TvDistance> {
    if a.grid() != b.grid() {
        return Err(Error::Argument("TV distance needs measures on the same grid".into()));
    }
    let g = a.grid();
    let s: f64 = a
        .density()
        .iter()
        .zip(b.density())
        .enumerate()
        .map(|(i, (x, y))| g.weight(i) * (x - y).abs())
        .sum();
    Ok(TvDistance {
        value: (0.5 * s).clamp(0.0, 1.0),
        uncertainty: 0.5 * (a.tail_bound() + b.tail_bound()),
    })
}

/// Symmetric grid `[−B, B]` with `B = max(4·radius, 10·std)` and 4097 nodes.
///
/// The standard deviation is the linearised AR(1) estimate
/// `sqrt(ησ² / (1 − (1 − K₁η)²))`; the radius term is dropped when `b_η ≤ 0`.
pub fn default_grid(spec: &DriftSpec, eta: f64) -> Result<Grid> {
    let c = derive_constants(spec, eta)?;
    let rho = (1.0 - spec.k1 * eta).abs().min(0.99);
    let std = (eta * spec.sigma * spec.sigma / (1.0 - rho * rho)).sqrt();
    let radius = if c.radius.is_finite() && c.radius > 0.0 { c.radius } else { 0.0 };
    Grid::symmetric((4.0 * radius).max(10.0 * std), DEFAULT_NODES)
}
