//! Split chain on `ℝ × {0, 1}` with the atom `α̌ = C × {1}`.
//!
//! Given a small set `C` with `p_η(x, ·) ≥ 2εν` on `C` and `ν` uniform on `C`,
//! one step from `(x, d)` draws
//!
//! - `x' ~ ν` if `x ∈ C` and `d = 1`,
//! - `x' ~ R_η(x, ·) = (P_η(x, ·) − εν)/(1 − ε)` if `x ∈ C` and `d = 0`,
//! - `x' ~ P_η(x, ·)` if `x ∉ C`,
//!
//! and then a fresh bit `d' ~ Bernoulli(ε)` independent of everything else.
//! The `x`-coordinate of the split chain started from `ξ ⊗ b_ε` is the EM chain
//! started from `ξ`, and the chain regenerates at every visit to `α̌`.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::drift::{check_eta, DriftSpec};
use crate::error::{Error, Result};
use crate::kernel::{check_minorization, minorization_epsilon, KernelOperator, SmallSetSpec};
use crate::numerics::{linear_fit, normal_pdf, Z_95};
use crate::simulate::{em_step, stream_rng, Start, StartSampler};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitState {
    pub x: f64,
    pub d: bool,
}

/// How the Bernoulli parameter of the split is obtained from the small-set
/// constant `ε_C` of [`minorization_epsilon`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitEpsilon {
    /// `ε = ε_C / 2`, so that `p_η ≥ 2εν` on `C` holds by construction.
    #[default]
    Halved,
    /// `ε = ε_C`; `p_η ≥ 2εν` is then checked and usually fails unless the
    /// supplied constant is already conservative.
    Direct,
}

#[derive(Debug, Clone)]
pub struct SplitKernel {
    spec: DriftSpec,
    eta: f64,
    /// Small set carrying the splitting constant `ε`.
    set: SmallSetSpec,
}

impl SplitKernel {
    pub fn new(spec: &DriftSpec, eta: f64, small_set: SmallSetSpec, mode: SplitEpsilon) -> Result<Self> {
        check_eta(eta)?;
        let epsilon = match mode {
            SplitEpsilon::Halved => small_set.epsilon / 2.0,
            SplitEpsilon::Direct => small_set.epsilon,
        };
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Precondition(format!("splitting constant must lie in (0,1), got {epsilon}")));
        }
        let set = small_set.with_epsilon(epsilon)?;
        if mode == SplitEpsilon::Direct {
            check_minorization(spec, eta, &set, 100, 2.0)?;
        }
        Ok(Self {
            spec: spec.clone(),
            eta,
            set,
        })
    }

    /// Small set `[lower, upper]` with its computed constant, split per `mode`.
    pub fn from_interval(spec: &DriftSpec, eta: f64, lower: f64, upper: f64, mode: SplitEpsilon) -> Result<Self> {
        let small = minorization_epsilon(spec, eta, lower, upper)?;
        Self::new(spec, eta, small, mode)
    }

    pub fn epsilon(&self) -> f64 {
        self.set.epsilon
    }

    pub fn small_set(&self) -> &SmallSetSpec {
        &self.set
    }

    pub fn spec(&self) -> &DriftSpec {
        &self.spec
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn in_atom(&self, s: &SplitState) -> bool {
        s.d && self.set.contains(s.x)
    }
}

/// Uniform draw on `C`.
pub fn sample_nu<R: Rng + ?Sized>(set: &SmallSetSpec, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    (set.c_lower + u * set.length()).clamp(set.c_lower, set.c_upper)
}

/// Draw from the residual kernel with the number of proposals used.
///
/// Proposes `y ~ p_η(x, ·)` and accepts with probability
/// `1 − εν(y)/p_η(x, y)`; the overall acceptance probability is `1 − ε`.
pub fn sample_residual_counted<R: Rng + ?Sized>(
    spec: &DriftSpec,
    eta: f64,
    x: f64,
    set: &SmallSetSpec,
    rng: &mut R,
) -> Result<(f64, u64)> {
    if !set.contains(x) {
        return Err(Error::Precondition(format!(
            "residual kernel is defined on C=[{}, {}], got x={x}",
            set.c_lower, set.c_upper
        )));
    }
    if !(set.epsilon < 1.0) {
        return Err(Error::Precondition("residual kernel needs epsilon < 1".into()));
    }
    let var = eta * spec.sigma * spec.sigma;
    let mean = spec.step_mean(eta, x);
    let mut attempts = 0;
    loop {
        attempts += 1;
        let z: f64 = rng.sample(StandardNormal);
        let y = em_step(spec, eta, x, z);
        let floor = set.epsilon * set.nu_density(y);
        if floor == 0.0 {
            return Ok((y, attempts));
        }
        let p = normal_pdf(y, mean, var);
        if p < floor {
            return Err(Error::MinorizationViolation {
                x,
                y,
                density: p,
                floor,
            });
        }
        if rng.random::<f64>() >= floor / p {
            return Ok((y, attempts));
        }
    }
}

pub fn sample_residual<R: Rng + ?Sized>(
    spec: &DriftSpec,
    eta: f64,
    x: f64,
    set: &SmallSetSpec,
    rng: &mut R,
) -> Result<f64> {
    sample_residual_counted(spec, eta, x, set, rng).map(|(y, _)| y)
}

pub fn step_split<R: Rng + ?Sized>(kernel: &SplitKernel, state: SplitState, rng: &mut R) -> Result<SplitState> {
    let set = &kernel.set;
    let x = if set.contains(state.x) {
        if state.d {
            sample_nu(set, rng)
        } else {
            sample_residual(&kernel.spec, kernel.eta, state.x, set, rng)?
        }
    } else {
        let z: f64 = rng.sample(StandardNormal);
        em_step(&kernel.spec, kernel.eta, state.x, z)
    };
    let d = rng.random::<f64>() < set.epsilon;
    Ok(SplitState { x, d })
}

/// A split-chain trajectory cut into regeneration blocks.
///
/// A block runs from the step after one atom visit up to and including the
/// next visit, so block lengths are return times to `α̌`.
#[derive(Debug, Clone)]
pub struct RegenerationBlocks {
    set: SmallSetSpec,
    trace: Vec<SplitState>,
    atom_visit_times: Vec<usize>,
}

impl RegenerationBlocks {
    pub fn from_trace(set: SmallSetSpec, trace: Vec<SplitState>) -> Self {
        let atom_visit_times = trace
            .iter()
            .enumerate()
            .filter(|(_, s)| s.d && set.contains(s.x))
            .map(|(t, _)| t)
            .collect();
        Self {
            set,
            trace,
            atom_visit_times,
        }
    }

    pub fn trace(&self) -> &[SplitState] {
        &self.trace
    }

    pub fn atom_visit_times(&self) -> &[usize] {
        &self.atom_visit_times
    }

    /// Number of complete blocks.
    pub fn n_blocks(&self) -> usize {
        self.atom_visit_times.len().saturating_sub(1)
    }

    /// The trajectory cut at the end of the `n`-th complete block, or `None`
    /// when fewer blocks were observed.
    pub fn first_blocks(&self, n: usize) -> Option<Self> {
        let end = *self.atom_visit_times.get(n)?;
        Some(Self {
            set: self.set,
            trace: self.trace[..=end].to_vec(),
            atom_visit_times: self.atom_visit_times[..=n].to_vec(),
        })
    }

    /// Inclusive trace index ranges of complete blocks.
    pub fn block_ranges(&self) -> impl Iterator<Item = std::ops::RangeInclusive<usize>> + '_ {
        self.atom_visit_times.windows(2).map(|w| (w[0] + 1)..=w[1])
    }

    pub fn block_lengths(&self) -> Vec<u64> {
        self.atom_visit_times.windows(2).map(|w| (w[1] - w[0]) as u64).collect()
    }

    pub fn block_sums<F: Fn(&SplitState) -> f64>(&self, f: F) -> Vec<f64> {
        self.block_ranges()
            .map(|r| self.trace[r].iter().map(&f).sum())
            .collect()
    }

    /// `step,x,d,in_C,atom_visit` rows.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("step,x,d,in_C,atom_visit\n");
        for (t, st) in self.trace.iter().enumerate() {
            let in_c = self.set.contains(st.x);
            let _ = writeln!(s, "{t},{},{},{},{}", st.x, st.d as u8, in_c as u8, (in_c && st.d) as u8);
        }
        s
    }

    /// `block,length,sum` rows for test function `f`.
    pub fn blocks_csv<F: Fn(&SplitState) -> f64>(&self, f: F) -> String {
        let mut s = String::from("block,length,sum\n");
        for (b, (len, sum)) in self.block_lengths().into_iter().zip(self.block_sums(f)).enumerate() {
            let _ = writeln!(s, "{b},{len},{sum}");
        }
        s
    }
}

/// Runs `n_steps` steps from `ξ ⊗ b_ε`; the trace has `n_steps + 1` states.
pub fn run_split<R: Rng + ?Sized>(
    kernel: &SplitKernel,
    start: &Start,
    n_steps: usize,
    rng: &mut R,
) -> Result<RegenerationBlocks> {
    let sampler = StartSampler::new(start);
    let mut state = SplitState {
        x: sampler.draw(rng),
        d: rng.random::<f64>() < kernel.epsilon(),
    };
    let mut trace = Vec::with_capacity(n_steps + 1);
    trace.push(state);
    for _ in 0..n_steps {
        state = step_split(kernel, state, rng)?;
        trace.push(state);
    }
    Ok(RegenerationBlocks::from_trace(kernel.set, trace))
}

/// `x`-coordinates after exactly `n_steps` steps of `n_rep` independent split
/// chains started from `ξ ⊗ b_ε`.
pub fn split_marginal(kernel: &SplitKernel, start: &Start, n_steps: usize, n_rep: usize, seed: u64) -> Result<Vec<f64>> {
    let sampler = StartSampler::new(start);
    (0..n_rep)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let mut s = SplitState {
                x: sampler.draw(&mut rng),
                d: rng.random::<f64>() < kernel.epsilon(),
            };
            for _ in 0..n_steps {
                s = step_split(kernel, s, &mut rng)?;
            }
            Ok(s.x)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AtomReturnCheck {
    pub k: usize,
    pub empirical: f64,
    pub std_err: f64,
    /// `ε · (νP_η^{k−1})(C)` by quadrature.
    pub exact: f64,
}

/// Compares the frequency of `(x_k, d_k) ∈ α̌` for chains started in `α̌`
/// with `ε νP_η^{k−1}(C)`. `op` must be built for the same drift and step.
pub fn atom_return_check(
    kernel: &SplitKernel,
    k: usize,
    n_mc: usize,
    seed: u64,
    op: &KernelOperator,
) -> Result<AtomReturnCheck> {
    if k == 0 {
        return Err(Error::Argument("k must be at least 1".into()));
    }
    if n_mc < 2 {
        return Err(Error::Argument("need at least 2 Monte Carlo runs".into()));
    }
    if op.eta() != kernel.eta {
        return Err(Error::Argument("kernel operator step size differs from the split kernel".into()));
    }
    let set = kernel.set;
    let hits: Vec<bool> = (0..n_mc)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let mut s = SplitState {
                x: sample_nu(&set, &mut rng),
                d: true,
            };
            for _ in 0..k {
                s = step_split(kernel, s, &mut rng)?;
            }
            Ok(kernel.in_atom(&s))
        })
        .collect::<Result<_>>()?;
    let p = hits.iter().filter(|h| **h).count() as f64 / n_mc as f64;
    let exact = if k == 1 {
        set.epsilon
    } else {
        let mut m = op.one_step_from_uniform(set.c_lower, set.c_upper)?;
        for _ in 2..k {
            m = op.apply(&m)?;
        }
        set.epsilon * m.mass_in(set.c_lower, set.c_upper)
    };
    Ok(AtomReturnCheck {
        k,
        empirical: p,
        std_err: (p * (1.0 - p) / n_mc as f64).sqrt(),
        exact,
    })
}

/// Ratio estimate `Σ block sums / Σ block lengths` with the classical
/// regenerative variance estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegenerativeEstimate {
    pub estimate: f64,
    pub std_err: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub n_blocks: usize,
}

pub const MIN_BLOCKS: usize = 30;

pub fn regenerative_pi_estimate<F: Fn(&SplitState) -> f64>(
    blocks: &RegenerationBlocks,
    test_function: F,
) -> Result<RegenerativeEstimate> {
    let n = blocks.n_blocks();
    if n < MIN_BLOCKS {
        return Err(Error::InsufficientData(format!(
            "{n} complete regeneration blocks, need at least {MIN_BLOCKS}; run the chain longer"
        )));
    }
    let sums = blocks.block_sums(test_function);
    let lens: Vec<f64> = blocks.block_lengths().into_iter().map(|l| l as f64).collect();
    let total_len: f64 = lens.iter().sum();
    let r = sums.iter().sum::<f64>() / total_len;
    let nf = n as f64;
    let s2 = sums
        .iter()
        .zip(&lens)
        .map(|(y, t)| (y - r * t).powi(2))
        .sum::<f64>()
        / (nf - 1.0);
    let mean_len = total_len / nf;
    let std_err = s2.sqrt() / (mean_len * nf.sqrt());
    Ok(RegenerativeEstimate {
        estimate: r,
        std_err,
        ci_lower: r - Z_95 * std_err,
        ci_upper: r + Z_95 * std_err,
        n_blocks: n,
    })
}

/// Geometric tail fit of the atom return time `σ_α̌`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailFit {
    /// Least-squares slope of `log P(σ > n)` against `n`.
    pub slope: f64,
    /// `exp(slope)`, the per-step survival factor.
    pub decay_factor: f64,
    /// Bootstrap standard error of the slope.
    pub slope_std_err: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    /// Largest tested `γ` whose empirical `E[γ^σ]` has a tight CI.
    pub gamma_hat: Option<f64>,
    pub n_blocks: usize,
    pub tail_points: usize,
    pub low_confidence: bool,
}

const MIN_TAIL_COUNT: usize = 20;
const BOOTSTRAP_REPS: usize = 200;
const BOOTSTRAP_SEED: u64 = 0xb007;

fn survival_slope(lengths: &[u64]) -> Option<(f64, usize)> {
    let mut sorted = lengths.to_vec();
    sorted.sort_unstable();
    let n = sorted.len() as f64;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut step = 1u64;
    loop {
        let above = sorted.len() - sorted.partition_point(|&l| l <= step);
        if above < MIN_TAIL_COUNT {
            break;
        }
        xs.push(step as f64);
        ys.push((above as f64 / n).ln());
        step += 1;
    }
    if xs.len() < 2 {
        return None;
    }
    Some((linear_fit(&xs, &ys).0, xs.len()))
}

pub fn atom_return_tail(blocks: &RegenerationBlocks) -> Result<TailFit> {
    let lengths = blocks.block_lengths();
    tail_fit_from_lengths(&lengths)
}

/// Tail fit from a list of return times; needs at least 100 of them.
pub fn tail_fit_from_lengths(lengths: &[u64]) -> Result<TailFit> {
    let n = lengths.len();
    if n < 100 {
        return Err(Error::InsufficientData(format!("{n} blocks, need at least 100 for a tail fit")));
    }
    let (slope, tail_points) = survival_slope(lengths)
        .ok_or_else(|| Error::InsufficientData("fewer than 2 tail points with enough survivors".into()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(BOOTSTRAP_SEED);
    let mut boot = Vec::with_capacity(BOOTSTRAP_REPS);
    let mut resample = vec![0u64; n];
    for _ in 0..BOOTSTRAP_REPS {
        for v in resample.iter_mut() {
            *v = lengths[rng.random_range(0..n)];
        }
        if let Some((s, _)) = survival_slope(&resample) {
            boot.push(s);
        }
    }
    let bm = boot.iter().sum::<f64>() / boot.len() as f64;
    let slope_std_err = (boot.iter().map(|s| (s - bm).powi(2)).sum::<f64>() / (boot.len() as f64 - 1.0)).sqrt();

    let gamma_max = (-slope).exp();
    let mut gamma_hat = None;
    for k in 1..20 {
        let gamma = 1.0 + (gamma_max - 1.0) * k as f64 / 20.0;
        let vals: Vec<f64> = lengths.iter().map(|&l| gamma.powf(l as f64)).collect();
        let mean = vals.iter().sum::<f64>() / n as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let half = Z_95 * (var / n as f64).sqrt();
        if mean.is_finite() && half <= 0.1 * mean {
            gamma_hat = Some(gamma);
        } else {
            break;
        }
    }

    Ok(TailFit {
        slope,
        decay_factor: slope.exp(),
        slope_std_err,
        ci_lower: slope - Z_95 * slope_std_err,
        ci_upper: slope + Z_95 * slope_std_err,
        gamma_hat,
        n_blocks: n,
        tail_points,
        low_confidence: tail_points < 5,
    })
}
