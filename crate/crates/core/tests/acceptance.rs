//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{gauss_pdf, linspace, norm_cdf, phi};
use emergolab::drift::{derive_constants, eta1, eta2, lambda, radius, verify_drift_condition};
use emergolab::kernel::{
    check_minorization, minorization_epsilon, whole_space_minorization, Grid, GridMeasure, KernelOperator,
    INVARIANT_TOL, MAX_ITERS,
};
use emergolab::rate::{fit_geometric_rate, summability_check, tv_decay_curve, uniform_sup_tv, DecayCurve, NUMERIC_FLOOR};
use emergolab::simulate::{exp_beta_sigma, stream_rng, Interval, Start};
use emergolab::split::{atom_return_check, regenerative_pi_estimate, run_split, split_marginal, SplitEpsilon, SplitKernel};
use emergolab::DriftSpec;
use rand::Rng;

type Outcome = (bool, String);
type Criterion = (u32, &'static str, fn() -> Outcome);

fn ou() -> DriftSpec {
    DriftSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap()
}

fn bp() -> DriftSpec {
    DriftSpec::bounded_perturbation(1.0, 0.5, 1.0).unwrap()
}

fn grid12() -> Grid {
    Grid::new(-12.0, 12.0, 4097).unwrap()
}

fn pi_for(op: &KernelOperator) -> GridMeasure {
    op.invariant_measure(INVARIANT_TOL, MAX_ITERS).unwrap().measure
}

fn c01_ou_invariant() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for eta in [0.1, 0.5] {
        let t = Instant::now();
        let op = KernelOperator::new(&ou(), eta, grid12()).unwrap();
        let pi = pi_for(&op);
        let secs = t.elapsed().as_secs_f64();
        let v = eta / (1.0 - (1.0 - eta) * (1.0 - eta));
        let g = pi.grid();
        let n = g.n_nodes();
        let h = g.spacing();
        // trapezoid on the nodes against the exact density, plus the exact
        // mass outside the grid
        let mut s = 0.0;
        for i in 0..n {
            let w = if i == 0 || i == n - 1 { 0.5 * h } else { h };
            s += w * (pi.density()[i] - gauss_pdf(g.node(i), 0.0, v)).abs();
        }
        let outside = 2.0 * (1.0 - norm_cdf(12.0 / v.sqrt()));
        let tv = 0.5 * (s + outside);
        ok &= tv <= 1e-6 && secs <= 60.0;
        detail.push(format!("eta={eta}: d_TV={tv:.2e} in {secs:.1}s"));
    }
    (ok, detail.join("; "))
}

fn c02_drift_condition() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, spec) in [("ou", ou()), ("bounded", bp())] {
        let eta0 = derive_constants(&spec, 0.01).unwrap().eta0;
        for eta in [eta0 / 4.0, eta0 / 2.0, eta0] {
            let r = radius(&spec, eta);
            let half = (5.0 * r).max(10.0);
            let rep = verify_drift_condition(&spec, eta, &linspace(-half, half, 10_000)).unwrap();
            ok &= rep.violations == 0 && rep.n_points == 10_000;
            detail.push(format!("{name} eta={eta:.5}: {} violations", rep.violations));
        }
    }
    (ok, detail.join("; "))
}

fn c03_minorization() -> Outcome {
    let spec = ou();
    let eta: f64 = 0.5;
    let s = minorization_epsilon(&spec, eta, -1.0, 1.0).unwrap();
    // corner oracle: x = -1 maps to mean -0.5, farthest y is 1
    let sd = eta.sqrt();
    let oracle = 2.0 / sd * phi(1.5 / sd);
    let mut rng = stream_rng(3, 0);
    let mut violations = 0;
    for _ in 0..10_000 {
        let x = rng.random_range(-1.0..=1.0);
        let y = rng.random_range(-1.0..=1.0);
        let p = gauss_pdf(y, x - eta * x, eta);
        if p < s.epsilon * 0.5 * (1.0 - 1e-12) {
            violations += 1;
        }
    }
    let grid_check = check_minorization(&spec, eta, &s, 100, 1.0).is_ok();
    let ok = (s.epsilon - 0.1189).abs() <= 1e-4 && (s.epsilon - oracle).abs() <= 1e-6 && violations == 0 && grid_check;
    (ok, format!("epsilon={:.6} (corner oracle {oracle:.6}), {violations} violations in 10^4 samples", s.epsilon))
}

fn c04_return_moment() -> Outcome {
    let spec = ou();
    let eta = 0.1;
    let c = derive_constants(&spec, eta).unwrap();
    let bound = 1.0 + c.b_eta * c.beta_eta;
    let d = Interval::symmetric(c.radius).unwrap();
    let est = exp_beta_sigma(&spec, eta, &Start::Point(0.0), c.beta_eta, d, 100_000, 10_000, 404).unwrap();
    let ok = est.estimate < bound && est.ci_upper < bound && est.censor_bias_bound < 1e-6 && (bound - 1.598).abs() < 1e-3;
    (
        ok,
        format!(
            "E0[beta^sigma]={:.5} CI [{:.5}, {:.5}] bound={bound:.5} censor_bias={:.1e}",
            est.estimate, est.ci_lower, est.ci_upper, est.censor_bias_bound
        ),
    )
}

fn c05_split_marginal() -> Outcome {
    let spec = ou();
    let eta = 0.5;
    let x0 = 1.5;
    let n_rep = 100_000;
    let kernel = SplitKernel::from_interval(&spec, eta, -1.0, 1.0, SplitEpsilon::Halved).unwrap();
    let xs = split_marginal(&kernel, &Start::Point(x0), 5, n_rep, 505).unwrap();
    let op = KernelOperator::new(&spec, eta, grid12()).unwrap();
    let exact = op.n_step_from_point(x0, 5).unwrap();
    let edges = linspace(-4.0, 4.0, 61);
    let mut q: Vec<f64> = edges.windows(2).map(|w| exact.mass_in(w[0], w[1])).collect();
    let inner: f64 = q.iter().sum();
    let lower_tail = exact.mass_in(-12.0, -4.0);
    q.push(lower_tail);
    q.push((1.0 - inner - lower_tail).max(0.0));
    let mut counts = vec![0usize; q.len()];
    for &x in &xs {
        let b = if x < -4.0 {
            q.len() - 2
        } else if x >= 4.0 {
            q.len() - 1
        } else {
            (((x + 4.0) / 8.0 * 60.0) as usize).min(59)
        };
        counts[b] += 1;
    }
    let n = n_rep as f64;
    let tv: f64 = 0.5 * counts.iter().zip(&q).map(|(&c, &p)| (c as f64 / n - p).abs()).sum::<f64>();
    let envelope: f64 = 0.5 * q.iter().map(|&p| 4.0 * (p * (1.0 - p) / n).sqrt()).sum::<f64>();
    (tv < envelope, format!("binned TV={tv:.5}, 4-SE envelope={envelope:.5}"))
}

fn c06_atom_identity() -> Outcome {
    let spec = ou();
    let eta = 0.5;
    let kernel = SplitKernel::from_interval(&spec, eta, -1.0, 1.0, SplitEpsilon::Halved).unwrap();
    let op = KernelOperator::new(&spec, eta, grid12()).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for k in [1, 2, 3, 5] {
        let c = atom_return_check(&kernel, k, 100_000, 606 + k as u64, &op).unwrap();
        let z = (c.empirical - c.exact).abs() / c.std_err;
        ok &= z <= 3.0;
        if k == 1 {
            ok &= c.exact == kernel.epsilon();
        }
        detail.push(format!("k={k}: {:.5} vs {:.5} ({z:.2} SE)", c.empirical, c.exact));
    }
    (ok, detail.join("; "))
}

fn c07_regenerative() -> Outcome {
    let spec = ou();
    let kernel = SplitKernel::from_interval(&spec, 0.5, -1.0, 1.0, SplitEpsilon::Halved).unwrap();
    let mut rng = stream_rng(707, 0);
    let run = run_split(&kernel, &Start::Point(0.0), 60_000, &mut rng).unwrap();
    let blocks = match run.first_blocks(1000) {
        Some(b) => b,
        None => return (false, format!("only {} blocks in 60000 steps", run.n_blocks())),
    };
    let est = regenerative_pi_estimate(&blocks, |s| if s.x.abs() <= 1.0 { 1.0 } else { 0.0 }).unwrap();
    let oracle = 2.0 * norm_cdf(1.0 / (2.0f64 / 3.0).sqrt()) - 1.0;
    let ok = est.ci_lower <= oracle && oracle <= est.ci_upper && (oracle - 0.77934).abs() < 5e-5 && est.n_blocks == 1000;
    (
        ok,
        format!("estimate={:.5} CI [{:.5}, {:.5}] oracle={oracle:.5}", est.estimate, est.ci_lower, est.ci_upper),
    )
}

fn c08_uniform_ergodicity() -> Outcome {
    let eta: f64 = 0.5;
    let n_list: Vec<usize> = (1..=20).collect();
    let mut ok = true;
    let mut detail = Vec::new();

    let spec = bp();
    let m = whole_space_minorization(&spec, eta).unwrap().mass;
    let oracle_m = 2.0 * (1.0 - norm_cdf(0.5 / eta.sqrt()));
    ok &= (m - 0.4795).abs() <= 1e-3 && (m - oracle_m).abs() <= 1e-6;
    detail.push(format!("bounded: m={m:.5} (oracle {oracle_m:.5})"));
    let r = radius(&spec, eta);
    let x_grid = linspace(-5.0 * r.abs(), 5.0 * r.abs(), 201);
    let op = KernelOperator::new(&spec, eta, grid12()).unwrap();
    let pi = pi_for(&op);
    let table = uniform_sup_tv(&op, &pi, &x_grid, &n_list, Some(m)).unwrap();
    let worst = table
        .rows
        .iter()
        .map(|row| (row.sup - row.envelope.unwrap(), row.n, row.sup, row.argsup))
        .fold((f64::NEG_INFINITY, 0, 0.0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    let envelope_ok = worst.0 <= 1e-6;
    ok &= envelope_ok;
    detail.push(format!(
        "x-grid [{:.1}, {:.1}]: worst sup-envelope={:.3e} at n={} (sup={:.4} from x={:.2})",
        x_grid[0], x_grid[200], worst.0, worst.1, worst.2, worst.3
    ));

    let spec = ou();
    let m_ou = whole_space_minorization(&spec, eta).unwrap().mass;
    ok &= m_ou == 1.0;
    let r = radius(&spec, eta);
    let x_grid = linspace(-5.0 * r, 5.0 * r, 201);
    let op = KernelOperator::new(&spec, eta, grid12()).unwrap();
    let pi = pi_for(&op);
    let table = uniform_sup_tv(&op, &pi, &x_grid, &n_list, Some(m_ou)).unwrap();
    let spread = table.rows.iter().map(|row| row.spread()).fold(0.0, f64::max);
    ok &= spread < 1e-8;
    detail.push(format!("ou: m={m_ou}, max sup-inf spread={spread:.3e} over x in [{:.1}, {:.1}]", x_grid[0], x_grid[200]));
    (ok, detail.join("; "))
}

fn c09_rate_fit() -> Outcome {
    let spec = ou();
    let op = KernelOperator::new(&spec, 0.5, grid12()).unwrap();
    let pi = pi_for(&op);
    let curve = tv_decay_curve(&op, &pi, &Start::Point(3.0), 40).unwrap();
    let fit = fit_geometric_rate(&curve).unwrap();
    let synthetic = DecayCurve::from_values("synthetic", 1.0, (1..=30).map(|n| 0.7f64.powi(n)).collect(), NUMERIC_FLOOR);
    let syn = fit_geometric_rate(&synthetic).unwrap();
    let below = summability_check(&curve, 0.5 * (1.0 + fit.delta_hat), None).unwrap();
    let above = summability_check(&curve, 2.0 * fit.delta_hat, None).unwrap();
    let ok = (1.8..=2.2).contains(&fit.delta_hat)
        && (syn.delta_hat - 1.0 / 0.7).abs() <= 1e-6
        && below.consistent
        && !above.consistent;
    (
        ok,
        format!(
            "delta_hat={:.4} window {:?}; synthetic {:.8}; ratio below={:.3} above={:.3}",
            fit.delta_hat, fit.fit_window, syn.delta_hat, below.tail_ratio, above.tail_ratio
        ),
    )
}

fn c10_monotonicity() -> Outcome {
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, spec) in [("ou", ou()), ("bounded", bp())] {
        let e1 = eta1(&spec);
        let e2 = eta2(&spec);
        let lam: Vec<f64> = (1..=1000).map(|i| lambda(&spec, e1 * i as f64 / 1000.0)).collect();
        let f1: Vec<f64> = (1..=1000).map(|i| radius(&spec, e2 * i as f64 / 1000.0)).collect();
        let lam_ok = lam.windows(2).all(|w| w[1] <= w[0]);
        let f1_ok = f1.windows(2).all(|w| w[1] <= w[0]);
        ok &= lam_ok && f1_ok;
        detail.push(format!("{name}: lambda nonincreasing={lam_ok}, f1 nonincreasing={f1_ok}"));
    }
    let eta0 = derive_constants(&ou(), 0.1).unwrap().eta0;
    ok &= (eta0 - 0.125).abs() < 1e-12;
    detail.push(format!("ou eta0={eta0}"));
    (ok, detail.join("; "))
}

fn run_cli(args: &[&str], out: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_emergolab"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn read_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .filter_map(|e| {
            let p = e.ok()?.path();
            let name = p.file_name()?.to_string_lossy().to_string();
            (name != "config.resolved.toml").then(|| (name, std::fs::read(&p).unwrap()))
        })
        .collect()
}

fn c11_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let base = "[drift]\nkind = \"ou\"\n[grid]\nlower = -12.0\nupper = 12.0\nn_nodes = 1025\n";
    let configs = [
        ("tv-decay", format!("seed = 1\n{base}[step]\neta = 0.5\n[run]\nx0 = 3.0\n")),
        ("uniform-sup", format!("seed = 1\n{base}[step]\neta = 0.5\n[run]\nn_list = [0, 1, 2, 5]\n")),
        ("split-sim", format!("seed = 2\n{base}[step]\neta = 0.5\n[run]\nn_steps = 20000\nsmall_set = [-1.0, 1.0]\n")),
        ("atom-check", format!("seed = 3\n{base}[step]\neta = 0.5\n[run]\nn_rep = 20000\nsmall_set = [-1.0, 1.0]\n")),
        ("return-times", format!("seed = 4\n{base}[step]\neta = 0.1\n[run]\nn_rep = 20000\n")),
        ("study", format!("seed = 5\n{base}[step]\neta_list = [0.3, 0.5]\n")),
    ];
    let mut ok = true;
    let mut detail = Vec::new();
    for (cmd, text) in &configs {
        let cfg = tmp.path().join(format!("{cmd}.toml"));
        std::fs::write(&cfg, text).unwrap();
        let cfg = cfg.to_string_lossy().to_string();
        let mut outs = Vec::new();
        for (tag, workers) in [("w1a", "1"), ("w8", "8"), ("w1b", "1")] {
            let out = tmp.path().join(format!("{cmd}-{tag}"));
            let code = run_cli(&[cmd, "--config", &cfg, "--workers", workers], &out);
            if code > 1 {
                ok = false;
                detail.push(format!("{cmd}: exit {code}"));
            }
            outs.push(read_outputs(&out));
        }
        let same = outs[0] == outs[1] && outs[0] == outs[2] && !outs[0].is_empty();
        ok &= same;
        detail.push(format!("{cmd}: {} files identical={same}", outs[0].len()));
    }
    (ok, detail.join("; "))
}

fn main() {
    let criteria: [Criterion; 11] = [
        (1, "OU invariant measure oracle", c01_ou_invariant),
        (2, "drift condition at 10^4 points", c02_drift_condition),
        (3, "small-set minorization constant", c03_minorization),
        (4, "exponential return-time moment", c04_return_moment),
        (5, "split-chain marginal consistency", c05_split_marginal),
        (6, "atom identity", c06_atom_identity),
        (7, "regenerative invariance", c07_regenerative),
        (8, "uniform ergodicity and Doeblin envelope", c08_uniform_ergodicity),
        (9, "geometric rate fit and summability", c09_rate_fit),
        (10, "monotonicity of lambda and f1", c10_monotonicity),
        (11, "determinism across worker counts", c11_determinism),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        let t = Instant::now();
        let (ok, detail) = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(o) => o,
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} ({name}) [{:.1}s]: {detail}",
            if ok { "PASS" } else { "FAIL" },
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", 11 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
