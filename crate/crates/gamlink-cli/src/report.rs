//! Output formatting shared by the subcommands.
//!
//! All numbers are written with 17 significant digits so that parsing them
//! back reproduces the exact `f64`, making byte-level output comparisons
//! meaningful.

use std::path::Path;

use crate::CliError;

/// Round-trip decimal representation (17 significant digits).
pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

/// An optional value becomes an empty CSV cell.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let body = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Data(format!("cannot serialize {}: {e}", path.display())))?;
    std::fs::write(path, body + "\n")
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn write_csv(
    path: &Path,
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
    let io_err = |e: csv::Error| CliError::Data(format!("cannot write {}: {e}", path.display()));
    w.write_record(header).map_err(io_err)?;
    for row in rows {
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush()
        .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

/// Evenly spaced grid of `points >= 2` values covering `[lo, hi]`.
pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Parses a comma-separated list of numbers.
pub fn parse_f64_list(s: &str, flag: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("{flag}: '{t}' is not a number")))
        })
        .collect()
}

/// Parses a comma-separated list of positive integers.
pub fn parse_usize_list(s: &str, flag: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Usage(format!("{flag}: '{t}' is not a positive integer")))
        })
        .collect()
}

/// Expands a scalar to `d` copies, or validates that a list has length `d`.
pub fn expand_per_coordinate<T: Clone>(
    values: Vec<T>,
    d: usize,
    flag: &str,
) -> Result<Vec<T>, CliError> {
    match values.len() {
        1 => Ok(vec![values[0].clone(); d]),
        len if len == d => Ok(values),
        len => Err(CliError::Usage(format!(
            "{flag}: expected 1 or {d} values, got {len}"
        ))),
    }
}
