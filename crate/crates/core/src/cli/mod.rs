//! Command-line front end: one subcommand per experiment, each writing CSV
//! files, a `report.txt` and a resolved-config echo into the output directory.
//!
//! Exit status is 0 when every exercised check passes, 1 when a check fails,
//! 2 on configuration errors and 3 on numerical failures.

pub mod config;
mod experiments;
mod plotdata;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::Error;

pub use config::ExperimentConfig;
pub use experiments::run_experiment;
pub use plotdata::emit_plotdata;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ASSERTION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Environment variable naming the default output root.
pub const OUT_ENV: &str = "EMERGOLAB_OUT";

#[derive(Debug, Parser)]
#[command(name = "emergolab", version, about = "Euler-Maruyama chain convergence experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides the config and $EMERGOLAB_OUT).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed override.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for module-level parallelism.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    VerifyAssumptions,
    Constants,
    Invariant,
    TvDecay,
    UniformSup,
    SplitSim,
    AtomCheck,
    ReturnTimes,
    Study,
    /// Consolidate the decay curves of a run directory into `curves.csv`.
    EmitPlotdata,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::VerifyAssumptions => "verify-assumptions",
            Command::Constants => "constants",
            Command::Invariant => "invariant",
            Command::TvDecay => "tv-decay",
            Command::UniformSup => "uniform-sup",
            Command::SplitSim => "split-sim",
            Command::AtomCheck => "atom-check",
            Command::ReturnTimes => "return-times",
            Command::Study => "study",
            Command::EmitPlotdata => "emit-plotdata",
        }
    }
}

/// Computed values, pass/fail checks and files produced by one experiment.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Report {
    pub values: Vec<(String, String)>,
    pub checks: Vec<(String, bool)>,
    pub files: Vec<(String, String)>,
}

impl Report {
    pub fn value(&mut self, key: &str, v: impl std::fmt::Display) {
        self.values.push((key.to_string(), v.to_string()));
    }

    pub fn check(&mut self, name: &str, ok: bool) {
        self.checks.push((name.to_string(), ok));
    }

    pub fn file(&mut self, name: &str, content: String) {
        self.files.push((name.to_string(), content));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|(_, ok)| *ok)
    }

    pub fn render(&self, header: &[(String, String)]) -> String {
        let mut s = String::new();
        for (k, v) in header {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("\n[values]\n");
        for (k, v) in &self.values {
            let _ = writeln!(s, "{k} = {v}");
        }
        s.push_str("\n[checks]\n");
        for (k, ok) in &self.checks {
            let _ = writeln!(s, "{} {k}", if *ok { "PASS" } else { "FAIL" });
        }
        let _ = writeln!(s, "\nstatus = {}", if self.passed() { "pass" } else { "fail" });
        s
    }
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Parse(_) | Error::Argument(_) | Error::Domain(_) | Error::Precondition(_) => EXIT_CONFIG,
        Error::MinorizationViolation { .. } => EXIT_ASSERTION,
        Error::GridTooSmall { .. }
        | Error::Convergence { .. }
        | Error::Applicability(_)
        | Error::InsufficientData(_)
        | Error::Io(_) => EXIT_NUMERIC,
    }
}

fn remediation(err: &Error) -> Option<&'static str> {
    match err {
        Error::GridTooSmall { .. } => Some("widen [grid] lower/upper or reduce the start points"),
        Error::Convergence { .. } => Some("raise grid.invariant_tol or check that eta lies in (0, eta0]"),
        Error::InsufficientData(_) => Some("increase run.n_steps or run.n_rep"),
        Error::Precondition(msg) if msg.contains("splitting constant") => {
            Some("epsilon vanishes on this small set; choose a narrower run.small_set")
        }
        _ => None,
    }
}

fn resolve_out(cli_out: Option<&Path>, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli_out
        .map(Path::to_path_buf)
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("emergolab_out"))
}

/// Parses `args` (including the program name) and runs; returns the exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be at least 1");
            return EXIT_CONFIG;
        }
        // a second initialisation in the same process keeps the first pool
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::debug!("global thread pool already initialised");
        }
    }
    match run_cli(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(hint) = remediation(&e) {
                eprintln!("hint: {hint}");
            }
            exit_code_for(&e)
        }
    }
}

fn run_cli(cli: &Cli) -> crate::Result<i32> {
    if cli.command == Command::EmitPlotdata {
        let cfg = match &cli.config {
            Some(p) => Some(ExperimentConfig::read(p)?),
            None => None,
        };
        let out = resolve_out(cli.out.as_deref(), cfg.as_ref());
        let path = emit_plotdata(&out)?;
        println!("wrote {}", path.display());
        return Ok(EXIT_OK);
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Parse(format!("{} needs --config PATH", cli.command.name())))?;
    let mut cfg = ExperimentConfig::read(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = resolve_out(cli.out.as_deref(), Some(&cfg));
    cfg.experiment = Some(cli.command.name().to_string());
    cfg.output_dir = Some(out.clone());

    let report = run_experiment(cli.command, &cfg)?;
    write_run(&out, cli.command, &cfg, &report)?;
    for (name, ok) in &report.checks {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    println!("wrote {}", out.join("report.txt").display());
    Ok(if report.passed() { EXIT_OK } else { EXIT_ASSERTION })
}

/// Writes the experiment files, `report.txt` and `config.resolved.toml`.
pub fn write_run(out: &Path, command: Command, cfg: &ExperimentConfig, report: &Report) -> crate::Result<()> {
    std::fs::create_dir_all(out)?;
    for (name, content) in &report.files {
        std::fs::write(out.join(name), content)?;
    }
    std::fs::write(out.join("config.resolved.toml"), cfg.to_toml_string())?;
    let spec_label = cfg.drift_spec().map(|s| s.label()).unwrap_or_default();
    let header = vec![
        ("experiment".to_string(), command.name().to_string()),
        ("drift".to_string(), spec_label),
        ("sigma".to_string(), cfg.drift.sigma.to_string()),
        ("seed".to_string(), cfg.seed.to_string()),
    ];
    std::fs::write(out.join("report.txt"), report.render(&header))?;
    Ok(())
}
