//! CSV emission. Rows are written by hand so the byte layout is fixed:
//! LF endings, reals with six decimals, id and value lists joined by `;`.
//! Wall-clock time is not written, which keeps reruns byte-identical.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::experiment::{RoundRecord, SummaryRow};

pub const RECORD_HEADER: &str = "round,method,selected_ids,total_cost,global_accuracy,sv,reputation";

pub const SUMMARY_HEADER: &str = "method,seeds,final_accuracy_mean,final_accuracy_variance,\
last20_accuracy_mean,last20_accuracy_variance,mean_round_cost";

fn join<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(";")
}

fn real(x: f64) -> String {
    format!("{x:.6}")
}

/// Renders records as CSV text.
pub fn records_to_csv(records: &[RoundRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(RECORD_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round,
            r.method,
            join(&r.selected_ids, |i| i.to_string()),
            real(r.total_cost),
            real(r.global_accuracy),
            join(&r.sv, |v| real(*v)),
            join(&r.reputation_snapshot, |v| real(*v)),
        );
    }
    out
}

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.method,
            r.seeds,
            real(r.final_accuracy_mean),
            real(r.final_accuracy_variance),
            real(r.last20_accuracy_mean),
            real(r.last20_accuracy_variance),
            real(r.mean_round_cost),
        );
    }
    out
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn emit_csv(records: &[RoundRecord], path: &Path) -> Result<()> {
    write(path, &records_to_csv(records))
}

pub fn emit_summary(rows: &[SummaryRow], path: &Path) -> Result<()> {
    write(path, &summary_to_csv(rows))
}

/// Path of the resolved-config file written next to an output file.
pub fn config_sidecar_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".config.toml");
    PathBuf::from(s)
}

/// Writes the fully resolved configuration (all parameters, defaults
/// included) next to `output`.
pub fn emit_config_sidecar(cfg: &ExperimentConfig, output: &Path) -> Result<PathBuf> {
    let path = config_sidecar_path(output);
    write(&path, &cfg.to_toml()?)?;
    Ok(path)
}
