//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

pub fn phi(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

pub fn gauss_pdf(x: f64, mean: f64, var: f64) -> f64 {
    phi((x - mean) / var.sqrt()) / var.sqrt()
}

/// Composite Simpson rule with `2 * half` panels.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, half: usize) -> f64 {
    let n = 2 * half;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Standard normal CDF by quadrature of the density.
pub fn norm_cdf(z: f64) -> f64 {
    if z >= 0.0 {
        0.5 + simpson(phi, 0.0, z, 20_000)
    } else {
        0.5 - simpson(phi, 0.0, -z, 20_000)
    }
}

/// `d_TV(N(m1, v1), N(m2, v2))` by numeric integration.
pub fn gaussian_tv(m1: f64, v1: f64, m2: f64, v2: f64) -> f64 {
    let s = v1.sqrt().max(v2.sqrt());
    let lo = m1.min(m2) - 14.0 * s;
    let hi = m1.max(m2) + 14.0 * s;
    0.5 * simpson(|x| (gauss_pdf(x, m1, v1) - gauss_pdf(x, m2, v2)).abs(), lo, hi, 200_000)
}

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}
