use std::path::Path;
use std::process::{Command, Output};

use emergolab::cli::ExperimentConfig;
use tempfile::TempDir;

fn emergolab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_emergolab"))
        .args(args)
        .current_dir(dir)
        .env_remove("EMERGOLAB_OUT")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

fn report(dir: &Path) -> String {
    std::fs::read_to_string(dir.join("report.txt")).unwrap()
}

const OU_01: &str = "seed = 1\n[drift]\nkind = \"ou\"\n[step]\neta = 0.1\n";

#[test]
fn constants_report() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), OU_01);
    let out = tmp.path().join("out");
    let o = emergolab(&["constants", "--config", &cfg, "--out", out.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rep = report(&out);
    for line in ["lambda_eta = 0.970000", "radius = 11.600000", "eta0 = 0.125000", "status = pass"] {
        assert!(rep.contains(line), "missing {line} in\n{rep}");
    }
    assert!(out.join("constants.csv").exists());
}

#[test]
fn invariant_variance() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "seed = 1\n[drift]\nkind = \"ou\"\n[step]\neta = 0.5\n");
    let out = tmp.path().join("out");
    let o = emergolab(&["invariant", "--config", &cfg, "--out", out.to_str().unwrap()], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let rep = report(&out);
    let v: f64 = rep
        .lines()
        .find_map(|l| l.strip_prefix("variance = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((v - 2.0 / 3.0).abs() < 1e-6, "{v}");
    assert!(std::fs::read_to_string(out.join("invariant.csv")).unwrap().lines().count() > 1000);
}

#[test]
fn configuration_errors_exit_two() {
    let tmp = TempDir::new().unwrap();
    let bad_eta = write_config(tmp.path(), "seed = 1\n[drift]\nkind = \"ou\"\n[step]\neta = 1.5\n");
    let o = emergolab(&["constants", "--config", &bad_eta, "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("(0,1)"));

    let unknown = write_config(tmp.path(), "seed = 1\nbogus = 3\n[drift]\nkind = \"ou\"\n[step]\neta = 0.1\n");
    let o = emergolab(&["constants", "--config", &unknown, "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("bogus"));

    assert_eq!(emergolab(&["constants"], tmp.path()).status.code(), Some(2));
    assert_eq!(emergolab(&["no-such-command"], tmp.path()).status.code(), Some(2));
}

#[test]
fn vanishing_split_constant_has_a_hint() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), OU_01);
    let o = emergolab(&["split-sim", "--config", &cfg, "--out", "o"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("run.small_set"));
}

#[test]
fn plotdata_from_tv_decay_and_study() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "seed = 1\n[drift]\nkind = \"bounded_perturbation\"\nkappa = 2.0\na = 0.5\n[step]\neta_list = [0.05, 0.1, 0.2]\neta = 0.5\n\
         [grid]\nlower = -12.0\nupper = 12.0\nn_nodes = 1025\n[run]\nx0 = 3.0\nn_steps = 30\n",
    );
    let run = tmp.path().join("run");
    let run_s = run.to_str().unwrap();
    assert_eq!(emergolab(&["tv-decay", "--config", &cfg, "--out", run_s], tmp.path()).status.code(), Some(0));
    let o = emergolab(&["emit-plotdata", "--out", run_s], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let curves = std::fs::read_to_string(run.join("curves.csv")).unwrap();
    assert!(curves.starts_with("experiment,eta,n,d_tv,envelope\n"));
    assert_eq!(curves.lines().count(), 1 + 30);

    let study = tmp.path().join("study");
    let study_s = study.to_str().unwrap();
    let o = emergolab(&["study", "--config", &cfg, "--out", study_s], tmp.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(emergolab(&["emit-plotdata", "--out", study_s], tmp.path()).status.code(), Some(0));
    let first = std::fs::read(study.join("curves.csv")).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    let etas: std::collections::BTreeSet<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(etas.len(), 3);
    assert_eq!(text.lines().count(), 1 + 3 * 30);
    assert_eq!(emergolab(&["emit-plotdata", "--out", study_s], tmp.path()).status.code(), Some(0));
    assert_eq!(std::fs::read(study.join("curves.csv")).unwrap(), first);

    let o = emergolab(&["emit-plotdata", "--out", "missing"], tmp.path());
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn resolved_config_round_trips() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), OU_01);
    let out = tmp.path().join("out");
    let o = emergolab(&["constants", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "9"], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    let resolved = ExperimentConfig::read(&out.join("config.resolved.toml")).unwrap();
    assert_eq!(resolved.seed, 9);
    assert_eq!(resolved.experiment.as_deref(), Some("constants"));
    assert_eq!(ExperimentConfig::from_toml_str(&resolved.to_toml_string()).unwrap(), resolved);

    let again = tmp.path().join("again");
    let o = emergolab(
        &[
            "constants",
            "--config",
            out.join("config.resolved.toml").to_str().unwrap(),
            "--out",
            again.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(report(&again), report(&out));
}

#[test]
fn output_root_from_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), OU_01);
    let root = tmp.path().join("env_out");
    let o = Command::new(env!("CARGO_BIN_EXE_emergolab"))
        .args(["constants", "--config", &cfg])
        .current_dir(tmp.path())
        .env("EMERGOLAB_OUT", &root)
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(root.join("report.txt").exists());

    let o = emergolab(&["constants", "--config", &cfg], tmp.path());
    assert_eq!(o.status.code(), Some(0));
    assert!(tmp.path().join("emergolab_out").join("report.txt").exists());
}
