use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use super::grid::Grid;
use super::Q_TOL;
use crate::error::{Error, Result};
use crate::numerics::{normal_mass_outside, normal_pdf};

/// A probability density tabulated on a [`Grid`], with a bound on the mass
/// that lives outside the grid. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    grid: Grid,
    density: Vec<f64>,
    tail_bound: f64,
}

impl GridMeasure {
    /// Validates nonnegativity and the trapezoid mass
    /// `∈ [1 − tail_bound − q_tol, 1 + q_tol]`.
    pub fn new(grid: Grid, density: Vec<f64>, tail_bound: f64) -> Result<Self> {
        if density.len() != grid.n_nodes() {
            return Err(Error::Argument(format!(
                "density has {} values for a grid of {} nodes",
                density.len(),
                grid.n_nodes()
            )));
        }
        if let Some((i, v)) = density.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Argument(format!("density value {v} at node {i} is negative or non-finite")));
        }
        if !(tail_bound.is_finite() && tail_bound >= 0.0) {
            return Err(Error::Argument(format!("tail bound must be nonnegative, got {tail_bound}")));
        }
        let mass = grid.integrate(&density);
        if mass < 1.0 - tail_bound - Q_TOL || mass > 1.0 + Q_TOL {
            return Err(Error::Argument(format!(
                "density integrates to {mass}, outside [1 - {tail_bound:.3e} - q_tol, 1 + q_tol]"
            )));
        }
        Ok(Self {
            grid,
            density,
            tail_bound,
        })
    }

    pub(crate) fn from_parts_unchecked(grid: Grid, density: Vec<f64>, tail_bound: f64) -> Self {
        Self {
            grid,
            density,
            tail_bound,
        }
    }

    /// Rescales arbitrary nonnegative nodal values to unit trapezoid mass.
    pub fn normalized(grid: Grid, mut density: Vec<f64>) -> Result<Self> {
        let mass = grid.integrate(&density);
        if !(mass.is_finite() && mass > 0.0) {
            return Err(Error::Argument(format!("cannot normalize density with mass {mass}")));
        }
        density.iter_mut().for_each(|v| *v /= mass);
        Self::new(grid, density, 0.0)
    }

    pub fn from_fn<F: Fn(f64) -> f64>(grid: Grid, f: F, tail_bound: f64) -> Result<Self> {
        let density = grid.nodes().into_iter().map(f).collect();
        Self::new(grid, density, tail_bound)
    }

    /// `N(mean, var)` sampled on the grid; the exact outside mass becomes the
    /// tail bound.
    pub fn gaussian(grid: Grid, mean: f64, var: f64) -> Result<Self> {
        if !(var.is_finite() && var > 0.0 && mean.is_finite()) {
            return Err(Error::Argument(format!("invalid Gaussian N({mean}, {var})")));
        }
        let tail = normal_mass_outside(mean, var.sqrt(), grid.lower(), grid.upper());
        Self::from_fn(grid, |y| normal_pdf(y, mean, var), tail)
    }

    /// Uniform law on `[a, b]`, rescaled to unit trapezoid mass.
    pub fn uniform(grid: Grid, a: f64, b: f64) -> Result<Self> {
        if !(a < b) {
            return Err(Error::Argument(format!("degenerate interval [{a}, {b}]")));
        }
        let density: Vec<f64> = grid
            .nodes()
            .into_iter()
            .map(|x| if x >= a && x <= b { 1.0 / (b - a) } else { 0.0 })
            .collect();
        Self::normalized(grid, density)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn mass(&self) -> f64 {
        self.grid.integrate(&self.density)
    }

    pub fn mean(&self) -> f64 {
        let m: f64 = (0..self.density.len())
            .map(|i| self.grid.weight(i) * self.grid.node(i) * self.density[i])
            .sum();
        m / self.mass()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        let s: f64 = (0..self.density.len())
            .map(|i| {
                let d = self.grid.node(i) - mu;
                self.grid.weight(i) * d * d * self.density[i]
            })
            .sum();
        s / self.mass()
    }

    /// Mass of `[a, b]` under the piecewise-linear interpolant of the density.
    /// Agrees with the trapezoid rule when `a` and `b` are nodes.
    pub fn mass_in(&self, a: f64, b: f64) -> f64 {
        let lo = a.max(self.grid.lower());
        let hi = b.min(self.grid.upper());
        if !(lo < hi) {
            return 0.0;
        }
        self.cdf(hi) - self.cdf(lo)
    }

    /// Interpolant density at `x`; zero off the grid.
    pub fn density_at(&self, x: f64) -> f64 {
        if !self.grid.contains(x) {
            return 0.0;
        }
        let (c, t) = self.grid.locate(x);
        self.density[c] * (1.0 - t) + self.density[c + 1] * t
    }

    /// Unnormalized CDF of the interpolant from the lower grid bound.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.grid.lower() {
            return 0.0;
        }
        let h = self.grid.spacing();
        let (c, t) = self.grid.locate(x);
        let mut acc = 0.0;
        for i in 0..c {
            acc += 0.5 * h * (self.density[i] + self.density[i + 1]);
        }
        let f0 = self.density[c];
        let f1 = self.density[c + 1];
        acc + h * (f0 * t + 0.5 * (f1 - f0) * t * t)
    }

    /// Draws from the normalized interpolant by exact inversion.
    pub fn sampler(&self) -> GridSampler<'_> {
        let h = self.grid.spacing();
        let mut cumulative = Vec::with_capacity(self.density.len());
        let mut acc = 0.0;
        cumulative.push(0.0);
        for w in self.density.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            cumulative.push(acc);
        }
        GridSampler {
            measure: self,
            cumulative,
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(self.density.len() * 32);
        let _ = writeln!(
            s,
            "# lower={} upper={} n={} tail_bound={}",
            self.grid.lower(),
            self.grid.upper(),
            self.grid.n_nodes(),
            self.tail_bound
        );
        s.push_str("x,density\n");
        for (i, d) in self.density.iter().enumerate() {
            let _ = writeln!(s, "{},{}", self.grid.node(i), d);
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut meta: Option<(f64, f64, usize, f64)> = None;
        let mut density = Vec::new();
        let mut header_seen = false;
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut lower = None;
                let mut upper = None;
                let mut n = None;
                let mut tail = None;
                for kv in rest.split_whitespace() {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| Error::Parse(format!("line {}: bad metadata `{kv}`", lineno + 1)))?;
                    let parse = |v: &str| {
                        v.parse::<f64>()
                            .map_err(|_| Error::Parse(format!("line {}: bad number `{v}`", lineno + 1)))
                    };
                    match k {
                        "lower" => lower = Some(parse(v)?),
                        "upper" => upper = Some(parse(v)?),
                        "tail_bound" => tail = Some(parse(v)?),
                        "n" => {
                            n = Some(v.parse::<usize>().map_err(|_| {
                                Error::Parse(format!("line {}: bad node count `{v}`", lineno + 1))
                            })?)
                        }
                        _ => {}
                    }
                }
                if let (Some(l), Some(u), Some(n), Some(t)) = (lower, upper, n, tail) {
                    meta = Some((l, u, n, t));
                }
                continue;
            }
            if !header_seen {
                if line != "x,density" {
                    return Err(Error::Parse(format!("line {}: expected header `x,density`", lineno + 1)));
                }
                header_seen = true;
                continue;
            }
            let (_, d) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `x,density`", lineno + 1)))?;
            density.push(
                d.parse::<f64>()
                    .map_err(|_| Error::Parse(format!("line {}: bad density `{d}`", lineno + 1)))?,
            );
        }
        let (lower, upper, n, tail) =
            meta.ok_or_else(|| Error::Parse("missing `# lower=… upper=… n=… tail_bound=…` line".into()))?;
        if density.len() != n {
            return Err(Error::Parse(format!("metadata says n={n} but {} rows found", density.len())));
        }
        Self::new(Grid::new(lower, upper, n)?, density, tail)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::from_csv_str(&std::fs::read_to_string(path)?)
    }
}

/// Inverse-CDF sampler for a [`GridMeasure`].
pub struct GridSampler<'a> {
    measure: &'a GridMeasure,
    cumulative: Vec<f64>,
}

impl GridSampler<'_> {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        let cell = match self.cumulative.partition_point(|&c| c <= u) {
            0 => 0,
            k => (k - 1).min(self.cumulative.len() - 2),
        };
        let grid = self.measure.grid();
        let h = grid.spacing();
        let f0 = self.measure.density()[cell];
        let f1 = self.measure.density()[cell + 1];
        let r = u - self.cumulative[cell];
        // solve h (f0 t + (f1 − f0) t²/2) = r for t in [0, 1]
        let a = 0.5 * (f1 - f0) * h;
        let b = f0 * h;
        let t = if a.abs() < 1e-14 * b.abs().max(1e-300) {
            if b > 0.0 {
                r / b
            } else {
                0.5
            }
        } else {
            let disc = (b * b + 4.0 * a * r).max(0.0);
            2.0 * r / (b + disc.sqrt())
        };
        grid.node(cell) + t.clamp(0.0, 1.0) * h
    }
}
