use crate::drift::{check_eta, linspace, DriftSpec};
use crate::error::{Error, Result};
use crate::numerics::{normal_pdf, simpson, std_normal_pdf};

/// An interval `C = [c_lower, c_upper]` with a minorization pair `(ε, ν)`,
/// `ν` uniform on `C`: `p_η(x, y) ≥ ε ν(y)` for `x, y ∈ C`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmallSetSpec {
    pub c_lower: f64,
    pub c_upper: f64,
    pub epsilon: f64,
}

impl SmallSetSpec {
    pub fn length(&self) -> f64 {
        self.c_upper - self.c_lower
    }

    /// Closed membership.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.c_lower && x <= self.c_upper
    }

    /// Density of `ν` at `y`.
    pub fn nu_density(&self, y: f64) -> f64 {
        if self.contains(y) {
            1.0 / self.length()
        } else {
            0.0
        }
    }

    /// Same set with a different constant, e.g. the halved splitting constant.
    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::Argument(format!("epsilon must lie in (0,1], got {epsilon}")));
        }
        Ok(Self { epsilon, ..self })
    }
}

fn check_interval(lower: f64, upper: f64) -> Result<()> {
    if lower.is_finite() && upper.is_finite() && lower < upper {
        Ok(())
    } else {
        Err(Error::Argument(format!("small set must be a nondegenerate compact interval, got [{lower}, {upper}]")))
    }
}

/// Largest `|y − x − ηg(x)|` over `y ∈ C` for fixed `x`; exact because the
/// distance is convex in `y`.
fn worst_offset(spec: &DriftSpec, eta: f64, lower: f64, upper: f64, x: f64) -> f64 {
    let m = spec.step_mean(eta, x);
    (lower - m).abs().max((upper - m).abs())
}

/// `ε = Leb(C)/(√η σ) · inf_{C²} φ((y − x − ηg(x))/(√η σ))`.
///
/// The infimum over `x` is found by a coarse scan of `C` followed by nested
/// zooming around the worst point, until `ε` is stable to `1e-6` relative.
pub fn minorization_epsilon(spec: &DriftSpec, eta: f64, lower: f64, upper: f64) -> Result<SmallSetSpec> {
    check_eta(eta)?;
    check_interval(lower, upper)?;
    let sd = eta.sqrt() * spec.sigma;
    let len = upper - lower;
    let eps_of = |d: f64| len / sd * std_normal_pdf(d / sd);

    let mut best_x = lower;
    let mut best = f64::NEG_INFINITY;
    for x in linspace(lower, upper, 1025) {
        let d = worst_offset(spec, eta, lower, upper, x);
        if d > best {
            best = d;
            best_x = x;
        }
    }
    let mut h = len / 1024.0;
    let mut eps = eps_of(best);
    for _ in 0..60 {
        let lo = (best_x - h).max(lower);
        let hi = (best_x + h).min(upper);
        for x in linspace(lo, hi, 65) {
            let d = worst_offset(spec, eta, lower, upper, x);
            if d > best {
                best = d;
                best_x = x;
            }
        }
        let next = eps_of(best);
        let stable = (eps - next).abs() <= 1e-6 * next;
        eps = next;
        h = (hi - lo) / 64.0;
        if stable {
            break;
        }
    }
    if eps >= 1.0 {
        log::warn!("epsilon={eps} >= 1 on [{lower}, {upper}]: C behaves as an atom; clamped to 1");
        eps = 1.0;
    }
    Ok(SmallSetSpec {
        c_lower: lower,
        c_upper: upper,
        epsilon: eps,
    })
}

/// Spot-checks `p_η(x, y) ≥ factor · ε ν(y)` on an `n × n` grid over `C²`.
pub fn check_minorization(spec: &DriftSpec, eta: f64, set: &SmallSetSpec, n_per_axis: usize, factor: f64) -> Result<()> {
    check_eta(eta)?;
    let var = eta * spec.sigma * spec.sigma;
    let pts = linspace(set.c_lower, set.c_upper, n_per_axis.max(2));
    for &x in &pts {
        let m = spec.step_mean(eta, x);
        for &y in &pts {
            let p = normal_pdf(y, m, var);
            let floor = factor * set.epsilon * set.nu_density(y);
            // allow round-off at the attained infimum
            if p < floor * (1.0 - 1e-12) {
                return Err(Error::MinorizationViolation {
                    x,
                    y,
                    density: p,
                    floor,
                });
            }
        }
    }
    Ok(())
}

/// Whole-space minorizing mass built from the range `[i, s]` of a shift map:
///
/// ```text
/// f(y) = (2πησ²)^{-1/2} exp(−max((y − i)², (y − s)²) / (2ησ²)),   m = ∫ f
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WholeSpaceMinorization {
    pub inf_shift: f64,
    pub sup_shift: f64,
    pub mass: f64,
}

impl WholeSpaceMinorization {
    /// The minorizing density `f(y)`.
    pub fn density(&self, y: f64, eta: f64, sigma: f64) -> f64 {
        let d = (y - self.inf_shift).abs().max((y - self.sup_shift).abs());
        normal_pdf(d, 0.0, eta * sigma * sigma)
    }
}

fn shift_range<F: Fn(f64) -> f64>(shift: F) -> Option<(f64, f64)> {
    let near = linspace(-100.0, 100.0, 200_001);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut near_sup = 0.0_f64;
    for &x in &near {
        let h = shift(x);
        if !h.is_finite() {
            return None;
        }
        lo = lo.min(h);
        hi = hi.max(h);
        near_sup = near_sup.max(h.abs());
    }
    let mut all_sup = near_sup;
    for k in 0..=600 {
        let r = 10f64.powf(2.0 + k as f64 / 100.0);
        for x in [-r, r] {
            let h = shift(x);
            if !h.is_finite() {
                return None;
            }
            lo = lo.min(h);
            hi = hi.max(h);
            all_sup = all_sup.max(h.abs());
        }
    }
    (all_sup <= 1.5 * near_sup + 1e-6).then_some((lo, hi))
}

fn doeblin_from_range(lo: f64, hi: f64, eta: f64, sigma: f64) -> WholeSpaceMinorization {
    let sd = eta.sqrt() * sigma;
    let mass = if lo == hi {
        1.0
    } else {
        let w = WholeSpaceMinorization {
            inf_shift: lo,
            sup_shift: hi,
            mass: f64::NAN,
        };
        let f = |y: f64| w.density(y, eta, sigma);
        let mid = 0.5 * (lo + hi);
        let m = simpson(f, lo - 10.0 * sd, mid, 4000) + simpson(f, mid, hi + 10.0 * sd, 4000);
        m.min(1.0)
    };
    WholeSpaceMinorization {
        inf_shift: lo,
        sup_shift: hi,
        mass,
    }
}

/// Whole-space minorization built from the range of `x + g(x)`, the map
/// appearing in the uniform-ergodicity hypothesis `|x + g(x)| < c`.
///
/// Note that the kernel mean is `x + ηg(x)`; the two coincide only at `η = 1`.
/// [`kernel_doeblin_mass`] gives the common mass of the actual kernel rows.
pub fn whole_space_minorization(spec: &DriftSpec, eta: f64) -> Result<WholeSpaceMinorization> {
    check_eta(eta)?;
    let (lo, hi) = shift_range(|x| x + spec.g(x)).ok_or_else(|| {
        Error::Applicability("x + g(x) is unbounded; uniform ergodicity needs sup |x + g(x)| < c".into())
    })?;
    Ok(doeblin_from_range(lo, hi, eta, spec.sigma))
}

/// Common mass `∫ inf_x p_η(x, y) dy` of the EM kernel rows, from the range
/// of the kernel mean `x + ηg(x)`.
pub fn kernel_doeblin_mass(spec: &DriftSpec, eta: f64) -> Result<WholeSpaceMinorization> {
    check_eta(eta)?;
    let (lo, hi) = shift_range(|x| spec.step_mean(eta, x)).ok_or_else(|| {
        Error::Applicability("x + eta*g(x) is unbounded; the kernel rows share no common mass".into())
    })?;
    Ok(doeblin_from_range(lo, hi, eta, spec.sigma))
}

/// `δ = 1/(1 − m)`, infinite at `m = 1`.
pub fn doeblin_rate(m: f64) -> Result<f64> {
    if !(m > 0.0 && m <= 1.0) {
        return Err(Error::Argument(format!("Doeblin mass must lie in (0,1], got {m}")));
    }
    Ok(if m == 1.0 { f64::INFINITY } else { 1.0 / (1.0 - m) })
}
