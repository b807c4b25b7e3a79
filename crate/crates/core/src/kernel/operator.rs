use rayon::prelude::*;

use super::grid::Grid;
use super::measure::GridMeasure;
use super::{tv_distance, DENSE_LIMIT, LEAK_TOL};
use crate::drift::{check_eta, derive_constants, DriftSpec};
use crate::error::{Error, Result};
use crate::numerics::{normal_mass_outside, simpson};

/// Quadrature form of `P_η` acting on densities tabulated on a grid:
///
/// ```text
/// (ξP)(y_j) = Σ_i w_i ξ(x_i) p_η(x_i, y_j)
/// ```
///
/// with trapezoid weights `w_i`. The `n × n` matrix of `w_i p_η(x_i, y_j)` is
/// materialized when `n ≤ 8192` and recomputed on the fly otherwise; both
/// paths evaluate each entry with the same expression and sum each output
/// node in input order, so results do not depend on the thread count.
pub struct KernelOperator {
    spec: DriftSpec,
    eta: f64,
    grid: Grid,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    means: Vec<f64>,
    var: f64,
    norm: f64,
    /// Exact mass of `p_η(x_i, ·)` outside the grid.
    leak: Vec<f64>,
    matrix: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct InvariantMeasure {
    pub measure: GridMeasure,
    pub iterations: usize,
    pub last_increment: f64,
}

impl KernelOperator {
    pub fn new(spec: &DriftSpec, eta: f64, grid: Grid) -> Result<Self> {
        let dense = grid.n_nodes() <= DENSE_LIMIT;
        Self::build(spec, eta, grid, dense)
    }

    /// Never materializes the matrix.
    pub fn matrix_free(spec: &DriftSpec, eta: f64, grid: Grid) -> Result<Self> {
        Self::build(spec, eta, grid, false)
    }

    fn build(spec: &DriftSpec, eta: f64, grid: Grid, dense: bool) -> Result<Self> {
        check_eta(eta)?;
        let nodes = grid.nodes();
        let weights = grid.weights();
        let means: Vec<f64> = nodes.iter().map(|&x| spec.step_mean(eta, x)).collect();
        let var = eta * spec.sigma * spec.sigma;
        let sd = var.sqrt();
        let leak = means
            .iter()
            .map(|&m| normal_mass_outside(m, sd, grid.lower(), grid.upper()))
            .collect();
        let mut op = Self {
            spec: spec.clone(),
            eta,
            grid,
            nodes,
            weights,
            means,
            var,
            norm: 1.0 / (2.0 * std::f64::consts::PI * var).sqrt(),
            leak,
            matrix: None,
        };
        if dense {
            let n = grid.n_nodes();
            let mut m = vec![0.0; n * n];
            m.par_chunks_mut(n).enumerate().for_each(|(j, row)| {
                for (i, v) in row.iter_mut().enumerate() {
                    *v = op.entry(j, i);
                }
            });
            op.matrix = Some(m);
        }
        Ok(op)
    }

    /// `w_i p_η(x_i, y_j)`.
    #[inline]
    fn entry(&self, j: usize, i: usize) -> f64 {
        let d = self.nodes[j] - self.means[i];
        self.weights[i] * self.norm * (-(d * d) / (2.0 * self.var)).exp()
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn spec(&self) -> &DriftSpec {
        &self.spec
    }

    pub fn is_materialized(&self) -> bool {
        self.matrix.is_some()
    }

    /// Exact one-step mass leaving the grid for a density on the nodes.
    pub fn leakage(&self, density: &[f64]) -> f64 {
        density
            .iter()
            .zip(&self.weights)
            .zip(&self.leak)
            .map(|((d, w), l)| d * w * l)
            .sum()
    }

    fn grid_too_small(&self, density: &[f64], leakage: f64) -> Error {
        let sd = self.var.sqrt();
        let (mut lo, mut hi) = (self.grid.lower(), self.grid.upper());
        for (i, &d) in density.iter().enumerate() {
            if d > 0.0 && d * self.weights[i] * self.leak[i] > LEAK_TOL / density.len() as f64 {
                lo = lo.min(self.means[i] - 8.0 * sd);
                hi = hi.max(self.means[i] + 8.0 * sd);
            }
        }
        Error::GridTooSmall {
            leakage,
            tolerance: LEAK_TOL,
            required_lower: lo,
            required_upper: hi,
        }
    }

    /// Raw nodal action; returns the output values and the one-step leakage.
    pub fn apply_density(&self, density: &[f64]) -> (Vec<f64>, f64) {
        let n = self.grid.n_nodes();
        assert_eq!(density.len(), n, "density length must match the grid");
        let mut out = vec![0.0; n];
        match &self.matrix {
            Some(m) => out.par_iter_mut().enumerate().for_each(|(j, o)| {
                let row = &m[j * n..(j + 1) * n];
                *o = row.iter().zip(density).map(|(a, b)| a * b).sum();
            }),
            None => out.par_iter_mut().enumerate().for_each(|(j, o)| {
                *o = (0..n).map(|i| self.entry(j, i) * density[i]).sum();
            }),
        }
        (out, self.leakage(density))
    }

    /// `ξ ↦ ξP_η`; the one-step leakage is added to the tail bound.
    pub fn apply(&self, xi: &GridMeasure) -> Result<GridMeasure> {
        if xi.grid() != &self.grid {
            return Err(Error::Argument("measure and kernel live on different grids".into()));
        }
        let (out, leakage) = self.apply_density(xi.density());
        if leakage > LEAK_TOL {
            return Err(self.grid_too_small(xi.density(), leakage));
        }
        GridMeasure::new(self.grid, out, xi.tail_bound() + leakage)
    }

    /// Applies the kernel to `n_cols` column-major densities at once.
    ///
    /// Columns are processed in fixed chunks of 16, each by one sequential
    /// GEMM, so the output does not depend on the worker count.
    pub fn apply_batch(&self, input: &[f64], n_cols: usize) -> (Vec<f64>, Vec<f64>) {
        const CHUNK: usize = 16;
        let n = self.grid.n_nodes();
        assert_eq!(input.len(), n * n_cols);
        let mut out = vec![0.0; n * n_cols];
        match &self.matrix {
            Some(m) => {
                out.par_chunks_mut(n * CHUNK)
                    .zip(input.par_chunks(n * CHUNK))
                    .for_each(|(o, x)| {
                        let cols = x.len() / n;
                        // SAFETY: `m` is n×n row-major, `x` and `o` are n×cols
                        // column-major slices of exactly that size.
                        unsafe {
                            matrixmultiply::dgemm(
                                n,
                                n,
                                cols,
                                1.0,
                                m.as_ptr(),
                                n as isize,
                                1,
                                x.as_ptr(),
                                1,
                                n as isize,
                                0.0,
                                o.as_mut_ptr(),
                                1,
                                n as isize,
                            );
                        }
                    });
            }
            None => {
                out.par_chunks_mut(n).zip(input.par_chunks(n)).for_each(|(o, x)| {
                    for (j, v) in o.iter_mut().enumerate() {
                        *v = (0..n).map(|i| self.entry(j, i) * x[i]).sum();
                    }
                });
            }
        }
        let leaks = input.chunks(n).map(|c| self.leakage(c)).collect();
        (out, leaks)
    }

    /// Exact one-step law `N(x₀ + ηg(x₀), ησ²)` sampled on the grid.
    pub fn one_step_from_point(&self, x0: f64) -> Result<GridMeasure> {
        if !x0.is_finite() {
            return Err(Error::Domain(format!("initial point {x0} is not finite")));
        }
        let m = self.spec.step_mean(self.eta, x0);
        let sd = self.var.sqrt();
        let leakage = normal_mass_outside(m, sd, self.grid.lower(), self.grid.upper());
        if leakage > LEAK_TOL {
            return Err(Error::GridTooSmall {
                leakage,
                tolerance: LEAK_TOL,
                required_lower: self.grid.lower().min(m - 8.0 * sd),
                required_upper: self.grid.upper().max(m + 8.0 * sd),
            });
        }
        GridMeasure::gaussian(self.grid, m, self.var)
    }

    /// `P_η^n(x₀, ·)`: first step analytic, the rest by quadrature.
    pub fn n_step_from_point(&self, x0: f64, n: usize) -> Result<GridMeasure> {
        if n == 0 {
            return Err(Error::Argument("n_step_from_point needs n >= 1".into()));
        }
        let mut cur = self.one_step_from_point(x0)?;
        for _ in 1..n {
            cur = self.apply(&cur)?;
        }
        Ok(cur)
    }

    /// One step from the uniform law on `[a, b]`, integrating the start
    /// variable with a composite Simpson rule aligned to `[a, b]`.
    pub fn one_step_from_uniform(&self, a: f64, b: f64) -> Result<GridMeasure> {
        if !(a < b) {
            return Err(Error::Argument(format!("degenerate interval [{a}, {b}]")));
        }
        const HALF_PANELS: usize = 400;
        let len = b - a;
        let sd = self.var.sqrt();
        let density: Vec<f64> = self
            .nodes
            .par_iter()
            .map(|&y| {
                simpson(
                    |x| {
                        let d = y - self.spec.step_mean(self.eta, x);
                        self.norm * (-(d * d) / (2.0 * self.var)).exp()
                    },
                    a,
                    b,
                    HALF_PANELS,
                ) / len
            })
            .collect();
        let leakage = simpson(
            |x| normal_mass_outside(self.spec.step_mean(self.eta, x), sd, self.grid.lower(), self.grid.upper()),
            a,
            b,
            HALF_PANELS,
        ) / len;
        if leakage > LEAK_TOL {
            return Err(self.grid_too_small(&vec![1.0; self.nodes.len()], leakage));
        }
        GridMeasure::new(self.grid, density, leakage)
    }

    pub fn invariant_measure(&self, tol: f64, max_iters: usize) -> Result<InvariantMeasure> {
        let seed = GridMeasure::gaussian(self.grid, 0.0, 1.0)?;
        self.invariant_measure_from(seed, tol, max_iters)
    }

    /// Power iteration `ξ_{k+1} = ξ_k P_η / mass` until the TV increment
    /// drops below `tol`.
    pub fn invariant_measure_from(&self, seed: GridMeasure, tol: f64, max_iters: usize) -> Result<InvariantMeasure> {
        if !(tol > 0.0) {
            return Err(Error::Argument(format!("tolerance must be positive, got {tol}")));
        }
        if seed.grid() != &self.grid {
            return Err(Error::Argument("seed and kernel live on different grids".into()));
        }
        if let Ok(c) = derive_constants(&self.spec, self.eta) {
            if !c.beta_valid {
                log::warn!(
                    "lambda(eta)={} outside (0,1) at eta={}; the drift inequality does not certify pi_eta here",
                    c.lambda_eta,
                    self.eta
                );
            }
        }
        let mut cur = seed;
        let mut last_increment = f64::INFINITY;
        for it in 1..=max_iters {
            let (mut next, leakage) = self.apply_density(cur.density());
            if leakage > LEAK_TOL {
                return Err(self.grid_too_small(cur.density(), leakage));
            }
            let mass = self.grid.integrate(&next);
            next.iter_mut().for_each(|v| *v /= mass);
            let next = GridMeasure::from_parts_unchecked(self.grid, next, leakage);
            last_increment = tv_distance(&cur, &next)?.value;
            cur = next;
            if last_increment < tol {
                return Ok(InvariantMeasure {
                    measure: cur,
                    iterations: it,
                    last_increment,
                });
            }
        }
        Err(Error::Convergence {
            iterations: max_iters,
            last_increment,
        })
    }
}
