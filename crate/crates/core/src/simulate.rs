//! Seeded Monte Carlo for the EM recursion.
//!
//! Every replicate draws from its own ChaCha stream `(seed, replicate)`, so an
//! ensemble is bit-reproducible regardless of how replicates are scheduled
//! across threads. Reductions run sequentially over replicate order.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::drift::{check_eta, DriftSpec};
use crate::error::{Error, Result};
use crate::kernel::GridMeasure;
use crate::numerics::Z_95;

/// Closed interval; infinite bounds allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn new(lower: f64, upper: f64) -> Result<Self> {
        if lower.is_nan() || upper.is_nan() || lower > upper {
            return Err(Error::Argument(format!("invalid interval [{lower}, {upper}]")));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(radius: f64) -> Result<Self> {
        Self::new(-radius, radius)
    }

    /// Every real number.
    pub fn whole() -> Self {
        Self {
            lower: f64::NEG_INFINITY,
            upper: f64::INFINITY,
        }
    }

    #[inline]
    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }
}

/// Independent, reproducible stream number `stream` under `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `x + ηg(x) + √η σ·noise`.
#[inline]
pub fn em_step(spec: &DriftSpec, eta: f64, x: f64, noise: f64) -> f64 {
    x + eta * spec.g(x) + eta.sqrt() * spec.sigma * noise
}

/// Initial law of a chain.
#[derive(Debug, Clone)]
pub enum Start {
    Point(f64),
    Measure(GridMeasure),
}

impl Start {
    pub(crate) fn validate(&self) -> Result<()> {
        match self {
            Start::Point(x) if !x.is_finite() => Err(Error::Domain(format!("initial point {x} is not finite"))),
            _ => Ok(()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Start::Point(x) => format!("point({x})"),
            Start::Measure(m) => format!("measure(mean={:.6})", m.mean()),
        }
    }
}

/// Draws initial points from a [`Start`].
pub(crate) enum StartSampler<'a> {
    Point(f64),
    Grid(crate::kernel::GridSampler<'a>),
}

impl<'a> StartSampler<'a> {
    pub(crate) fn new(start: &'a Start) -> Self {
        match start {
            Start::Point(x) => Self::Point(*x),
            Start::Measure(m) => Self::Grid(m.sampler()),
        }
    }

    pub(crate) fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Point(x) => *x,
            Self::Grid(s) => s.sample(rng),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PathConfig {
    pub eta: f64,
    pub n_steps: usize,
    pub seed: u64,
    pub start: Start,
}

impl PathConfig {
    pub(crate) fn validate(&self) -> Result<()> {
        check_eta(self.eta)?;
        if self.n_steps == 0 {
            return Err(Error::Argument("n_steps must be at least 1".into()));
        }
        self.start.validate()
    }
}

/// `paths[r][k]` is `θ_k` of replicate `r`, `k = 0..=n_steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub paths: Vec<Vec<f64>>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn column(&self, step: usize) -> Vec<f64> {
        self.paths.iter().map(|p| p[step]).collect()
    }

    /// Sample mean at `step` and its standard error.
    pub fn mean_at(&self, step: usize) -> (f64, f64) {
        let col = self.column(step);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    /// Unbiased sample variance at `step` and its large-sample standard error
    /// `sqrt((m₄ − s⁴)/n)`.
    pub fn variance_at(&self, step: usize) -> (f64, f64) {
        let col = self.column(step);
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let m2 = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        let m4 = col.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
        (m2 * n / (n - 1.0), ((m4 - m2 * m2).max(0.0) / n).sqrt())
    }

    /// `replicate,step,x` rows.
    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("replicate,step,x\n");
        for (r, path) in self.paths.iter().enumerate() {
            for (k, x) in path.iter().enumerate() {
                let _ = writeln!(s, "{r},{k},{x}");
            }
        }
        s
    }
}

pub fn sample_paths(spec: &DriftSpec, config: &PathConfig, n_paths: usize) -> Result<PathEnsemble> {
    config.validate()?;
    let sampler = StartSampler::new(&config.start);
    let paths = (0..n_paths)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(config.seed, r as u64);
            let mut x = sampler.draw(&mut rng);
            let mut path = Vec::with_capacity(config.n_steps + 1);
            path.push(x);
            for _ in 0..config.n_steps {
                let z: f64 = rng.sample(StandardNormal);
                x = em_step(spec, config.eta, x, z);
                path.push(x);
            }
            path
        })
        .collect();
    Ok(PathEnsemble { paths })
}

/// First return time `σ_D = inf{n ≥ 1 : θ_n ∈ D}`, censored at `horizon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReturnTimeSample {
    pub x0: f64,
    pub interval: Interval,
    /// Return time, or `horizon` when censored.
    pub sigma: u64,
    pub censored: bool,
    pub horizon: u64,
}

pub fn return_time<R: Rng + ?Sized>(
    spec: &DriftSpec,
    eta: f64,
    x0: f64,
    d: Interval,
    horizon: u64,
    rng: &mut R,
) -> Result<ReturnTimeSample> {
    check_eta(eta)?;
    if horizon == 0 {
        return Err(Error::Argument("horizon must be at least 1".into()));
    }
    if !x0.is_finite() {
        return Err(Error::Domain(format!("initial point {x0} is not finite")));
    }
    let mut x = x0;
    for n in 1..=horizon {
        let z: f64 = rng.sample(StandardNormal);
        x = em_step(spec, eta, x, z);
        if d.contains(x) {
            return Ok(ReturnTimeSample {
                x0,
                interval: d,
                sigma: n,
                censored: false,
                horizon,
            });
        }
    }
    Ok(ReturnTimeSample {
        x0,
        interval: d,
        sigma: horizon,
        censored: true,
        horizon,
    })
}

/// `n_rep` independent return times, replicate `r` on stream `r`.
pub fn return_times(
    spec: &DriftSpec,
    eta: f64,
    start: &Start,
    d: Interval,
    horizon: u64,
    n_rep: usize,
    seed: u64,
) -> Result<Vec<ReturnTimeSample>> {
    check_eta(eta)?;
    start.validate()?;
    let sampler = StartSampler::new(start);
    (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let x0 = sampler.draw(&mut rng);
            return_time(spec, eta, x0, d, horizon, &mut rng)
        })
        .collect()
}

/// `replicate,x0,sigma,censored` rows.
pub fn return_times_csv(samples: &[ReturnTimeSample]) -> String {
    let mut s = String::from("replicate,x0,sigma,censored\n");
    for (r, t) in samples.iter().enumerate() {
        let _ = writeln!(s, "{r},{},{},{}", t.x0, t.sigma, t.censored as u8);
    }
    s
}

/// Monte Carlo estimate of `E[β^{σ_D}]`.
///
/// Censored replicates contribute zero to `estimate`; the missing mass is
/// reported as `censor_bias_bound = β^horizon · (censored fraction)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpMomentEstimate {
    pub beta: f64,
    pub n_rep: usize,
    pub estimate: f64,
    pub std_err: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub censored: usize,
    pub censor_bias_bound: f64,
    /// False when every replicate was censored.
    pub usable: bool,
}

pub fn exp_moment_from_samples(samples: &[ReturnTimeSample], beta: f64) -> Result<ExpMomentEstimate> {
    if !(beta > 1.0 && beta.is_finite()) {
        return Err(Error::Argument(format!("beta must be a finite real > 1, got {beta}")));
    }
    let n = samples.len();
    if n < 2 {
        return Err(Error::InsufficientData("need at least 2 replicates".into()));
    }
    let values: Vec<f64> = samples
        .iter()
        .map(|s| if s.censored { 0.0 } else { beta.powf(s.sigma as f64) })
        .collect();
    let nf = n as f64;
    // shifted sum: exact when every replicate returns at the same time
    let mean = values[0] + values.iter().map(|v| v - values[0]).sum::<f64>() / nf;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (nf - 1.0);
    let std_err = (var / nf).sqrt();
    let censored = samples.iter().filter(|s| s.censored).count();
    let censor_bias_bound = if censored == 0 {
        0.0
    } else {
        beta.powf(samples[0].horizon as f64) * censored as f64 / nf
    };
    Ok(ExpMomentEstimate {
        beta,
        n_rep: n,
        estimate: mean,
        std_err,
        ci_lower: mean - Z_95 * std_err,
        ci_upper: mean + Z_95 * std_err,
        censored,
        censor_bias_bound,
        usable: censored < n,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn exp_beta_sigma(
    spec: &DriftSpec,
    eta: f64,
    start: &Start,
    beta: f64,
    d: Interval,
    n_rep: usize,
    horizon: u64,
    seed: u64,
) -> Result<ExpMomentEstimate> {
    if !(beta > 1.0) {
        return Err(Error::Argument(format!("beta must exceed 1, got {beta}")));
    }
    let samples = return_times(spec, eta, start, d, horizon, n_rep, seed)?;
    exp_moment_from_samples(&samples, beta)
}

/// Kolmogorov distance between the empirical CDF of `samples` and the
/// normalized CDF of `measure`.
pub fn ks_to_measure(samples: &[f64], measure: &GridMeasure) -> f64 {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len() as f64;
    let total = measure.mass();
    let mut worst = 0.0_f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = measure.cdf(x) / total;
        worst = worst.max((f - i as f64 / n).abs()).max(((i + 1) as f64 / n - f).abs());
    }
    worst
}

/// Dvoretzky–Kiefer–Wolfowitz radius `sqrt(ln(2/α) / (2n))`.
pub fn dkw_bound(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}
