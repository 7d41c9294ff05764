//! Writes the manifest, history table and certificate of a run.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::runner::{HistoryRow, RunReport};

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const HISTORY_FILE: &str = "history.csv";
pub const CERTIFICATE_FILE: &str = "certificate.toml";

/// Comma-separated history with one row per iteration. Floats use the
/// shortest representation that round-trips.
pub fn history_csv(rows: &[HistoryRow], m: usize) -> String {
    let mut out = String::from("n,step_norm_sq,cum_step_sum,primal_residual_norm");
    for i in 1..=m {
        write!(out, ",dual_residual_norm_{i}").unwrap();
    }
    out.push_str(",wall_time_ns\n");
    for r in rows {
        write!(out, "{},{:e},{:e},{:e}", r.n, r.step_norm_sq, r.cum_step_sum, r.primal_residual_norm).unwrap();
        for q in &r.dual_residual_norms {
            write!(out, ",{q:e}").unwrap();
        }
        writeln!(out, ",{}", r.wall_time_ns).unwrap();
    }
    out
}

pub fn certificate_toml(report: &RunReport) -> String {
    toml::to_string(&report.certificate).expect("certificates serialize")
}

/// Writes the three artifacts into `dir`, creating it if needed, and returns
/// their paths.
pub fn write_artifacts(report: &RunReport, dir: &Path) -> Result<[PathBuf; 3]> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let m = report.manifest.resolved.as_ref().map_or(0, |r| r.dual_blocks);
    let files = [
        (dir.join(MANIFEST_FILE), report.manifest.to_toml()),
        (dir.join(HISTORY_FILE), history_csv(&report.history, m)),
        (dir.join(CERTIFICATE_FILE), certificate_toml(report)),
    ];
    for (path, text) in &files {
        fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(files.map(|(p, _)| p))
}
