use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Parses a curve CSV (`# experiment=… eta=…` header, then `n,d_tv,envelope`).
fn read_curve(text: &str) -> Option<(String, String, Vec<&str>)> {
    let mut lines = text.lines();
    let meta = lines.next()?.strip_prefix("# ")?;
    let mut experiment = None;
    let mut eta = None;
    for kv in meta.split_whitespace() {
        if let Some(v) = kv.strip_prefix("experiment=") {
            experiment = Some(v.to_string());
        } else if let Some(v) = kv.strip_prefix("eta=") {
            eta = Some(v.to_string());
        }
    }
    if lines.next()? != "n,d_tv,envelope" {
        return None;
    }
    Some((experiment?, eta?, lines.filter(|l| !l.is_empty()).collect()))
}

/// Collects every decay-curve CSV in `dir` into `dir/curves.csv` with columns
/// `experiment,eta,n,d_tv,envelope`, files taken in name order.
pub fn emit_plotdata(dir: &Path) -> Result<PathBuf> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::InsufficientData(format!("cannot read run directory {}: {e}", dir.display())))?;
    let mut names: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv") && p.file_name().is_some_and(|n| n != "curves.csv"))
        .collect();
    names.sort();
    let mut out = String::from("experiment,eta,n,d_tv,envelope\n");
    let mut found = 0;
    for p in &names {
        let text = std::fs::read_to_string(p)?;
        if let Some((experiment, eta, rows)) = read_curve(&text) {
            found += 1;
            for r in rows {
                let _ = writeln!(out, "{experiment},{eta},{r}");
            }
        }
    }
    if found == 0 {
        return Err(Error::InsufficientData(format!("no decay-curve CSVs found in {}", dir.display())));
    }
    let path = dir.join("curves.csv");
    std::fs::write(&path, out)?;
    Ok(path)
}
