use crate::error::{Error, Result};

/// Uniform grid on `[lower, upper]` used for trapezoid quadrature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    lower: f64,
    upper: f64,
    n_nodes: usize,
    spacing: f64,
}

pub const MIN_NODES: usize = 16;

impl Grid {
    pub fn new(lower: f64, upper: f64, n_nodes: usize) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite() && lower < upper) {
            return Err(Error::Argument(format!(
                "grid bounds must be finite with lower < upper, got [{lower}, {upper}]"
            )));
        }
        if n_nodes < MIN_NODES {
            return Err(Error::Argument(format!("grid needs at least {MIN_NODES} nodes, got {n_nodes}")));
        }
        Ok(Self {
            lower,
            upper,
            n_nodes,
            spacing: (upper - lower) / (n_nodes - 1) as f64,
        })
    }

    pub fn symmetric(half_width: f64, n_nodes: usize) -> Result<Self> {
        Self::new(-half_width, half_width, n_nodes)
    }

    pub fn lower(&self) -> f64 {
        self.lower
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    #[inline]
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n_nodes {
            self.upper
        } else {
            self.lower + i as f64 * self.spacing
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.node(i)).collect()
    }

    /// Trapezoid weight of node `i`.
    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        if i == 0 || i + 1 == self.n_nodes {
            0.5 * self.spacing
        } else {
            self.spacing
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n_nodes).map(|i| self.weight(i)).collect()
    }

    /// Trapezoid integral of nodal values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n_nodes);
        values.iter().enumerate().map(|(i, v)| self.weight(i) * v).sum()
    }

    /// Cell index and fractional position of `x`, clamped to the grid.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        if x <= self.lower {
            return (0, 0.0);
        }
        if x >= self.upper {
            return (self.n_nodes - 2, 1.0);
        }
        let t = (x - self.lower) / self.spacing;
        let cell = (t.floor() as usize).min(self.n_nodes - 2);
        (cell, t - cell as f64)
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}
