//! Sectioned `key = value` experiment configuration (TOML syntax).
//!
//! ```toml
//! seed = 7
//!
//! [drift]
//! kind = "bounded_perturbation"
//! kappa = 1.0
//! a = 0.5
//! sigma = 1.0
//!
//! [step]
//! eta = 0.5
//!
//! [grid]
//! lower = -12.0
//! upper = 12.0
//! n_nodes = 4097
//! ```
//!
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::drift::{BEtaVariant, DriftSpec};
use crate::error::{Error, Result};
use crate::kernel::{default_grid, Grid, DEFAULT_NODES, INVARIANT_TOL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub drift: DriftConfig,
    #[serde(default)]
    pub step: StepConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub run: RunConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKindName {
    Ou,
    BoundedPerturbation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BEtaName {
    AsWritten,
    HalfK1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftConfig {
    pub kind: DriftKindName,
    #[serde(default = "one")]
    pub kappa: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_eta_variant: Option<BEtaName>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_list: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_nodes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invariant_tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitModeName {
    Halved,
    Direct,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Curve length, or number of split-chain steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<f64>,
    /// Monte Carlo replicates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_rep: Option<usize>,
    /// Return-time censoring horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small_set: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_mode: Option<SplitModeName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_list: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_list: Option<Vec<usize>>,
    /// Bounds of the start-point grid for `uniform-sup`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_range: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_points: Option<usize>,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Parse(msg.into())
}

fn check_eta_field(field: &str, eta: f64) -> Result<()> {
    if eta.is_finite() && eta > 0.0 && eta < 1.0 {
        Ok(())
    } else {
        Err(config_error(format!("{field} must lie in the open interval (0,1), got {eta}")))
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_error(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse(msg) => config_error(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(eta) = self.step.eta {
            check_eta_field("step.eta", eta)?;
        }
        if let Some(list) = &self.step.eta_list {
            if list.is_empty() {
                return Err(config_error("step.eta_list must not be empty"));
            }
            for (i, &eta) in list.iter().enumerate() {
                check_eta_field(&format!("step.eta_list[{i}]"), eta)?;
            }
        }
        if self.drift.kind == DriftKindName::BoundedPerturbation && self.drift.a.is_none() {
            return Err(config_error("drift.a is required for kind = \"bounded_perturbation\""));
        }
        if self.drift.kind == DriftKindName::Ou && self.drift.a.is_some() {
            return Err(config_error("drift.a is only meaningful for kind = \"bounded_perturbation\""));
        }
        match (self.grid.lower, self.grid.upper) {
            (Some(lo), Some(hi)) if !(lo < hi) => {
                return Err(config_error(format!("grid.lower must be below grid.upper, got [{lo}, {hi}]")))
            }
            (Some(_), None) | (None, Some(_)) => {
                return Err(config_error("grid.lower and grid.upper must be given together"))
            }
            _ => {}
        }
        if let Some(tol) = self.grid.invariant_tol {
            if !(tol > 0.0) {
                return Err(config_error(format!("grid.invariant_tol must be positive, got {tol}")));
            }
        }
        if let Some([lo, hi]) = self.run.small_set {
            if !(lo < hi) {
                return Err(config_error(format!("run.small_set must be [lower, upper] with lower < upper, got [{lo}, {hi}]")));
            }
        }
        self.drift_spec().map_err(|e| config_error(format!("drift: {e}")))?;
        Ok(())
    }

    pub fn drift_spec(&self) -> Result<DriftSpec> {
        let d = &self.drift;
        let mut spec = match d.kind {
            DriftKindName::Ou => DriftSpec::ornstein_uhlenbeck(d.kappa, d.sigma)?,
            DriftKindName::BoundedPerturbation => DriftSpec::bounded_perturbation(d.kappa, d.a.unwrap_or(0.0), d.sigma)?,
        };
        if d.lipschitz.is_some() || d.k1.is_some() || d.k2.is_some() || d.c_offset.is_some() {
            let (l, k1, k2, c) = (spec.lipschitz, spec.k1, spec.k2, spec.c_offset);
            spec = spec.with_constants(
                d.lipschitz.unwrap_or(l),
                d.k1.unwrap_or(k1),
                d.k2.unwrap_or(k2),
                d.c_offset.unwrap_or(c),
            )?;
        }
        if let Some(v) = d.b_eta_variant {
            spec = spec.with_b_eta_variant(match v {
                BEtaName::AsWritten => BEtaVariant::AsWritten,
                BEtaName::HalfK1 => BEtaVariant::HalfK1,
            });
        }
        Ok(spec)
    }

    pub fn eta(&self) -> Result<f64> {
        self.step
            .eta
            .or_else(|| self.step.eta_list.as_ref().and_then(|l| l.first().copied()))
            .ok_or_else(|| config_error("step.eta is required for this experiment"))
    }

    pub fn eta_list(&self) -> Result<Vec<f64>> {
        match (&self.step.eta_list, self.step.eta) {
            (Some(l), _) => Ok(l.clone()),
            (None, Some(e)) => Ok(vec![e]),
            _ => Err(config_error("step.eta_list is required for this experiment")),
        }
    }

    /// Configured grid, or the default grid for `eta`.
    pub fn grid_for(&self, spec: &DriftSpec, eta: f64) -> Result<Grid> {
        match (self.grid.lower, self.grid.upper) {
            (Some(lo), Some(hi)) => Grid::new(lo, hi, self.grid.n_nodes.unwrap_or(DEFAULT_NODES)),
            _ => {
                let g = default_grid(spec, eta)?;
                match self.grid.n_nodes {
                    Some(n) => Grid::new(g.lower(), g.upper(), n),
                    None => Ok(g),
                }
            }
        }
    }

    pub fn invariant_tol(&self) -> f64 {
        self.grid.invariant_tol.unwrap_or(INVARIANT_TOL)
    }

    /// Whether every step size shares one configured grid.
    pub fn has_fixed_grid(&self) -> bool {
        self.grid.lower.is_some()
    }
}
