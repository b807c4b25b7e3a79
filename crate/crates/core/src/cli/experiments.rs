use std::fmt::Write as _;

use super::config::{ExperimentConfig, SplitModeName};
use super::{Command, Report};
use crate::drift::{check_assumption1, derive_constants, linspace, lyapunov, verify_drift_condition, DriftSpec};
use crate::error::{Error, Result};
use crate::kernel::{
    kernel_doeblin_mass, minorization_epsilon, tv_distance, GridMeasure, KernelOperator, MAX_ITERS,
};
use crate::rate::{
    default_x_grid, doeblin_mass_or_warn, fit_geometric_rate, step_size_study, summability_check, tv_decay_curve,
    uniform_sup_tv, ENVELOPE_SLACK, NUMERIC_FLOOR,
};
use crate::simulate::{exp_moment_from_samples, return_times, return_times_csv, stream_rng, Interval, Start};
use crate::split::{
    atom_return_check, atom_return_tail, regenerative_pi_estimate, run_split, SplitEpsilon, SplitKernel,
};

const DEFAULT_CURVE_LEN: usize = 40;
const DEFAULT_SPLIT_STEPS: usize = 100_000;
const DEFAULT_REPLICATES: usize = 100_000;
const DEFAULT_HORIZON: u64 = 10_000;

pub fn run_experiment(command: Command, cfg: &ExperimentConfig) -> Result<Report> {
    let spec = cfg.drift_spec()?;
    match command {
        Command::VerifyAssumptions => verify_assumptions(cfg, &spec),
        Command::Constants => constants(cfg, &spec),
        Command::Invariant => invariant(cfg, &spec),
        Command::TvDecay => tv_decay(cfg, &spec),
        Command::UniformSup => uniform_sup(cfg, &spec),
        Command::SplitSim => split_sim(cfg, &spec),
        Command::AtomCheck => atom_check(cfg, &spec),
        Command::ReturnTimes => return_time_moment(cfg, &spec),
        Command::Study => study(cfg, &spec),
        Command::EmitPlotdata => Err(Error::Argument("emit-plotdata is not an experiment".into())),
    }
}

fn operator_and_pi(cfg: &ExperimentConfig, spec: &DriftSpec, eta: f64) -> Result<(KernelOperator, GridMeasure, usize)> {
    let grid = cfg.grid_for(spec, eta)?;
    let op = KernelOperator::new(spec, eta, grid)?;
    let inv = op.invariant_measure(cfg.invariant_tol(), MAX_ITERS)?;
    Ok((op, inv.measure, inv.iterations))
}

/// Configured small set, else `D_η` when its radius is positive, else `[−1, 1]`.
fn small_set(cfg: &ExperimentConfig, spec: &DriftSpec, eta: f64) -> Result<(f64, f64)> {
    if let Some([lo, hi]) = cfg.run.small_set {
        return Ok((lo, hi));
    }
    let r = derive_constants(spec, eta)?.radius;
    Ok(if r.is_finite() && r > 0.0 { (-r, r) } else { (-1.0, 1.0) })
}

fn split_kernel(cfg: &ExperimentConfig, spec: &DriftSpec, eta: f64) -> Result<SplitKernel> {
    let (lo, hi) = small_set(cfg, spec, eta)?;
    let mode = match cfg.run.split_mode {
        Some(SplitModeName::Direct) => SplitEpsilon::Direct,
        _ => SplitEpsilon::Halved,
    };
    SplitKernel::from_interval(spec, eta, lo, hi, mode)
}

fn push_constants(r: &mut Report, spec: &DriftSpec, eta: f64) -> Result<()> {
    let c = derive_constants(spec, eta)?;
    r.value("eta", eta);
    r.value("lambda_eta", format!("{:.6}", c.lambda_eta));
    r.value("b_eta", format!("{:.6}", c.b_eta));
    if c.beta_valid {
        r.value("beta_eta", format!("{:.6}", c.beta_eta));
    } else {
        r.value("beta_eta", "undefined (lambda outside (0,1))");
    }
    r.value("radius", format!("{:.6}", c.radius));
    r.value("eta1", format!("{:.6}", c.eta1));
    r.value("eta2", format!("{:.6}", c.eta2));
    r.value("eta0", format!("{:.6}", c.eta0));
    Ok(())
}

fn push_doeblin(r: &mut Report, spec: &DriftSpec, eta: f64) -> Result<Option<f64>> {
    let m = doeblin_mass_or_warn(spec, eta)?;
    match m {
        Some(m) => r.value("m", format!("{m:.6}")),
        None => r.value("m", "not applicable (x + g(x) unbounded)"),
    }
    match kernel_doeblin_mass(spec, eta) {
        Ok(k) => r.value("m_kernel_rows", format!("{:.6}", k.mass)),
        Err(Error::Applicability(_)) => r.value("m_kernel_rows", "not applicable (x + eta*g(x) unbounded)"),
        Err(e) => return Err(e),
    }
    Ok(m)
}

fn constants(cfg: &ExperimentConfig, spec: &DriftSpec) -> Result<Report> {
    let eta = cfg.eta()?;
    let mut r = Report::default();
    push_constants(&mut r, spec, eta)?;
    let (lo, hi) = small_set(cfg, spec, eta)?;
    let eps = minorization_epsilon(spec, eta, lo, hi)?;
    r.value("small_set", format!("[{lo:.6}, {hi:.6}]"));
    r.value("epsilon", format!("{:.6}", eps.epsilon));
    push_doeblin(&mut r, spec, eta)?;

    let c = derive_constants(spec, eta)?;
    let mut csv = String::from("key,value\n");
    for (k, v) in [
        ("eta", eta),
        ("lambda_eta", c.lambda_eta),
        ("b_eta", c.b_eta),
        ("beta_eta", c.beta_eta),
        ("radius", c.radius),
        ("eta1", c.eta1),
        ("eta2", c.eta2),
        ("eta0", c.eta0),
        ("epsilon", eps.epsilon),
    ] {
        let _ = writeln!(csv, "{k},{v}");
    }
    r.file("constants.csv", csv);
    Ok(r)
}

fn verify_assumptions(cfg: &ExperimentConfig, spec: &DriftSpec) -> Result<Report> {
    let mut r = Report::default();
    let a = check_assumption1(spec, &linspace(-10.0, 10.0, 201), 2000)?;
    r.value("lipschitz_max", a.lipschitz_max);
    r.value("monotonicity_max", a.monotonicity_max);
    r.value("offset_max", a.offset_max);
    r.value("second_derivative_max", a.second_derivative_max);
    r.check("lipschitz", a.lipschitz_ok);
    r.check("monotonicity", a.monotonicity_ok);
    r.check("offset", a.offset_ok);
    r.check("bounded_second_derivative", a.second_derivative_ok);
    r.file("assumptions.txt", a.to_kv());

    if let Some(eta) = cfg.step.eta {
        push_constants(&mut r, spec, eta)?;
        let c = derive_constants(spec, eta)?;
        if eta <= c.eta0 {
            let half = (5.0 * c.radius).max(10.0);
            let d = verify_drift_condition(spec, eta, &linspace(-half, half, 10_000))?;
            r.value("drift_points", d.n_points);
            r.value("drift_violations", d.violations);
            r.value("drift_worst_margin", d.worst_margin);
            r.check("drift_condition", d.passed());
        } else {
            r.value("drift_condition", format!("skipped: eta={eta} exceeds eta0={:.6}", c.eta0));
        }
    }
    Ok(r)
}

fn invariant(cfg: &ExperimentConfig, spec: &DriftSpec) -> Result<Report> {
    let eta = cfg.eta()?;
    let mut r = Report::default();
    let grid = cfg.grid_for(spec, eta)?;
    let op = KernelOperator::new(spec, eta, grid)?;
    let tol = cfg.invariant_tol();
    let inv = op.invariant_measure(tol, MAX_ITERS)?;
    let pi = &inv.measure;
    r.value("eta", eta);
    r.value("grid", format!("[{}, {}] n={}", grid.lower(), grid.upper(), grid.n_nodes()));
    r.value("iterations", inv.iterations);
    r.value("last_increment", format!("{:.3e}", inv.last_increment));
    r.value("mass", format!("{:.12}", pi.mass()));
    r.value("mean", format!("{:.9}", pi.mean()));
    r.value("variance", format!("{:.9}", pi.variance()));
    r.value("tail_bound", format!("{:.3e}", pi.tail_bound()));
    let residual = tv_distance(&op.apply(pi)?, pi)?.value;
    r.value("invariance_residual", format!("{residual:.3e}"));
    r.check("invariance_residual", residual <= 10.0 * tol);
    r.file("invariant.csv", pi.to_csv_string());
    Ok(r)
}

fn monotone(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] + NUMERIC_FLOOR)
}

fn tv_decay(cfg: &ExperimentConfig, spec: &DriftSpec) -> Result<Report> {
    let eta = cfg.eta()?;
    let x0 = cfg.run.x0.unwrap_or(0.0);
    let n_max = cfg.run.n_steps.unwrap_or(DEFAULT_CURVE_LEN);
    let mut r = Report::default();
    push_constants(&mut r, spec, eta)?;
    let m = push_doeblin(&mut r, spec, eta)?;
    let (op, pi, _) = operator_and_pi(cfg, spec, eta)?;
    let curve = tv_decay_curve(&op, &pi, &Start::Point(x0), n_max)?;
    r.value("x0", x0);
    r.value("first_below_floor", curve.first_below_floor.map_or("none".into(), |n| n.to_string()));
    r.value("tail_uncertainty", format!("{:.3e}", curve.tail_uncertainty));
    r.check("monotone_decay", monotone(&curve.values));
    if let Some(m) = m {
        let ok = curve
            .values
            .iter()
            .enumerate()
            .all(|(i, d)| *d <= (1.0 - m).powi(i as i32 + 1) + ENVELOPE_SLACK);
        r.check("doeblin_envelope", ok);
    }
    match fit_geometric_rate(&curve) {
        Ok(fit) => {
            r.value("delta_hat", format!("{:.6}", fit.delta_hat));
            r.value("fit_window", format!("{}..{}", fit.fit_window.0, fit.fit_window.1));
            r.value("fit_residual_rms", format!("{:.3e}", fit.residual_rms));
            let below = summability_check(&curve, 0.5 * (1.0 + fit.delta_hat), None)?;
            r.value("summability_below_rate_ratio", format!("{:.6}", below.tail_ratio));
            r.value("summability_below_rate_sum", format!("{:.6}", below.final_sum()));
            r.check("summable_below_rate", below.consistent);
            // three decades of (δ′/δ̂)ⁿ must fit in the points above the floor
            let reach = (below.delta / fit.delta_hat).powi(curve.usable_len() as i32 - 1);
            if reach < 1e-3 {
                r.check("weighted_terms_vanish", below.last_term < 1e-3 * below.first_term);
            } else {
                r.value(
                    "weighted_terms_vanish",
                    format!("unobservable (floor reached at n={})", curve.usable_len() + 1),
                );
            }
            let above = summability_check(&curve, 2.0 * fit.delta_hat, None)?;
            r.value("summability_above_rate_ratio", format!("{:.6}", above.tail_ratio));
            r.check("divergent_above_rate", !above.consistent);
        }
        Err(Error::InsufficientData(msg)) => r.value("delta_hat", format!("undefined ({msg})")),
        Err(e) => return Err(e),
    }
    r.file("tv_decay.csv", curve.to_csv_string("tv-decay", m));
    Ok(r)
}

fn uniform_sup(cfg: &ExperimentConfig, spec: &DriftSpec) -> Result<Report> {
    let eta = cfg.eta()?;
    let mut r = Report::default();
    push_constants(&mut r, spec, eta)?;
    let m = push_doeblin(&mut r, spec, eta)?;
    let (op, pi, _) = operator_and_pi(cfg, spec, eta)?;
    let x_grid = match cfg.run.x_range {
        Some([lo, hi]) => linspace(lo, hi, cfg.run.x_points.unwrap_or(201)),
        None => default_x_grid(spec, eta, op.grid())?,
    };
    let n_list = cfg.run.n_list.clone().unwrap_or_else(|| (0..=20).collect());
    let table = uniform_sup_tv(&op, &pi, &x_grid, &n_list, m)?;
    r.value("x_grid", format!("[{}, {}] points={}", x_grid[0], x_grid[x_grid.len() - 1], x_grid.len()));
    let mut csv = String::from("n,sup,inf,argsup,envelope\n");
    for row in &table.rows {
        let env = row.envelope.map(|e| e.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{},{}", row.n, row.sup, row.inf, row.argsup, env);
    }
    r.check("sup_monotone", monotone(&table.rows.iter().map(|row| row.sup).collect::<Vec<_>>()));
    if let Some(ok) = table.envelope_holds(ENVELOPE_SLACK) {
        r.check("doeblin_envelope", ok);
    }
    r.file("uniform_sup_table.csv", csv);
    r.file("uniform_sup.csv", table.to_csv_string("uniform-sup"));
    Ok(r)
}

fn split_sim(cfg: &ExperimentConfig, spec: &DriftSpec) -> Result<Report> {
    let eta = cfg.eta()?;
    let mut r = Report::default();
    let kernel = split_kernel(cfg, spec, eta)?;
    let set = *kernel.small_set();
    let n_steps = cfg.run.n_steps.unwrap_or(DEFAULT_SPLIT_STEPS);
    let x0 = cfg.run.x0.unwrap_or(0.0);
    let mut rng = stream_rng(cfg.seed, 0);
    let blocks = run_split(&kernel, &Start::Point(x0), n_steps, &mut rng)?;
    r.value("small_set", format!("[{:.6}, {:.6}]", set.c_lower, set.c_upper));
    r.value("epsilon_split", format!("{:.6}", set.epsilon));
    r.value("n_steps", n_steps);
    r.value("n_blocks", blocks.n_blocks());

    let in_c = |s: &crate::split::SplitState| if set.contains(s.x) { 1.0 } else { 0.0 };
    let est = regenerative_pi_estimate(&blocks, in_c)?;
    let (_, pi, _) = operator_and_pi(cfg, spec, eta)?;
    let oracle = pi.mass_in(set.c_lower, set.c_upper);
    r.value("pi_C_regenerative", format!("{:.6}", est.estimate));
    r.value("pi_C_ci", format!("[{:.6}, {:.6}]", est.ci_lower, est.ci_upper));
    r.value("pi_C_quadrature", format!("{oracle:.6}"));
    r.check("regenerative_ci_covers_quadrature", est.ci_lower <= oracle && oracle <= est.ci_upper);
    match atom_return_tail(&blocks) {
        Ok(t) => {
            r.value("return_tail_slope", format!("{:.6}", t.slope));
            r.value("return_tail_slope_ci", format!("[{:.6}, {:.6}]", t.ci_lower, t.ci_upper));
            r.value("return_tail_low_confidence", t.low_confidence);
            r.value("gamma_hat", t.gamma_hat.map_or("none".into(), |g| format!("{g:.6}")));
        }
        Err(Error::InsufficientData(msg)) => r.value("return_tail_slope", format!("undefined ({msg})")),
        Err(e) => return Err(e),
    }
    r.file("split_trace.csv", blocks.trace_csv());
    r.file("split_blocks.csv", blocks.blocks_csv(in_c));
    Ok(r)
}

fn atom_check(cfg: &ExperimentConfig, spec: &DriftSpec) -> Result<Report> {
    let eta = cfg.eta()?;
    let mut r = Report::default();
    let kernel = split_kernel(cfg, spec, eta)?;
    let (op, _, _) = operator_and_pi(cfg, spec, eta)?;
    let n_mc = cfg.run.n_rep.unwrap_or(DEFAULT_REPLICATES);
    let k_list = cfg.run.k_list.clone().unwrap_or_else(|| vec![1, 2, 3, 5]);
    r.value("epsilon_split", format!("{:.6}", kernel.epsilon()));
    let mut csv = String::from("k,empirical,std_err,exact\n");
    for &k in &k_list {
        let c = atom_return_check(&kernel, k, n_mc, cfg.seed, &op)?;
        let _ = writeln!(csv, "{},{},{},{}", c.k, c.empirical, c.std_err, c.exact);
        r.value(&format!("atom_k{k}"), format!("{:.6} +- {:.6} (exact {:.6})", c.empirical, c.std_err, c.exact));
        r.check(&format!("atom_identity_k{k}"), (c.empirical - c.exact).abs() <= 3.0 * c.std_err);
    }
    r.file("atom_check.csv", csv);
    Ok(r)
}

fn return_time_moment(cfg: &ExperimentConfig, spec: &DriftSpec) -> Result<Report> {
    let eta = cfg.eta()?;
    let mut r = Report::default();
    push_constants(&mut r, spec, eta)?;
    let c = derive_constants(spec, eta)?;
    if !c.beta_valid {
        return Err(Error::Precondition(format!(
            "lambda(eta)={} is not in (0,1); choose eta in (0, eta0] with eta0={}",
            c.lambda_eta, c.eta0
        )));
    }
    if !(c.radius > 0.0) {
        return Err(Error::Precondition(format!("D_eta is empty (radius {})", c.radius)));
    }
    let x0 = cfg.run.x0.unwrap_or(0.0);
    let n_rep = cfg.run.n_rep.unwrap_or(DEFAULT_REPLICATES);
    let horizon = cfg.run.horizon.unwrap_or(DEFAULT_HORIZON);
    let d = Interval::symmetric(c.radius)?;
    let samples = return_times(spec, eta, &Start::Point(x0), d, horizon, n_rep, cfg.seed)?;
    let est = exp_moment_from_samples(&samples, c.beta_eta)?;
    let bound = lyapunov(x0) + c.b_eta * c.beta_eta;
    r.value("x0", x0);
    r.value("n_rep", n_rep);
    r.value("estimate", format!("{:.6}", est.estimate));
    r.value("ci", format!("[{:.6}, {:.6}]", est.ci_lower, est.ci_upper));
    r.value("bound", format!("{bound:.6}"));
    r.value("censored", est.censored);
    r.value("censor_bias_bound", format!("{:.3e}", est.censor_bias_bound));
    r.check("moment_below_bound", est.estimate < bound);
    r.check("ci_upper_below_bound", est.ci_upper < bound);
    r.check("censoring_negligible", est.censor_bias_bound < 1e-6);
    r.file("return_times.csv", return_times_csv(&samples));
    Ok(r)
}

fn study(cfg: &ExperimentConfig, spec: &DriftSpec) -> Result<Report> {
    let etas = cfg.eta_list()?;
    let x0 = cfg.run.x0.unwrap_or(0.0);
    let n_max = cfg.run.n_steps.unwrap_or(DEFAULT_CURVE_LEN);
    let mut r = Report::default();
    let grid = if cfg.has_fixed_grid() {
        Some(cfg.grid_for(spec, etas[0])?)
    } else {
        None
    };
    let table = step_size_study(spec, &etas, &Start::Point(x0), n_max, grid)?;
    for row in &table.rows {
        let label = |v: Option<f64>| v.map_or("undefined".to_string(), |v| format!("{v:.6}"));
        r.value(&format!("delta_hat[eta={}]", row.eta), label(row.delta_hat()));
        r.value(&format!("delta_per_unit_time[eta={}]", row.eta), label(row.delta_per_unit_time()));
        r.check(&format!("monotone_decay[eta={}]", row.eta), monotone(&row.curve.values));
        r.file(&format!("study_curve_eta_{}.csv", row.eta), row.curve.to_csv_string("study", row.m));
    }
    r.file("study.csv", table.to_csv_string("study"));
    Ok(r)
}
