//! Deterministic CSV rendering.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::experiments::{CltResult, ExperimentResult};
use crate::points::Points;
use crate::stats::Summary;

/// `%g`-style rendering with `digits` significant digits: fixed notation for
/// decimal exponents in `[-4, digits)`, scientific otherwise, trailing zeros
/// trimmed.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if exp < -4 || exp >= digits as i32 {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn sig(x: f64) -> String {
    format_sig(x, 6)
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .flexible(true)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

fn write_rows(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let mut w = writer(path)?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub const SUMMARY_ROWS: [&str; 7] = ["mean", "sd", "min", "q1", "median", "q3", "max"];

fn summary_values(s: &Summary) -> [f64; 7] {
    [s.mean, s.sd(), s.min, s.q1, s.median, s.q3, s.max]
}

/// Rows of the experiment table: header, one row per replicate, then the
/// summary block.
pub fn experiment_rows(result: &ExperimentResult) -> Vec<Vec<String>> {
    let mut rows = Vec::with_capacity(result.rows.len() + 8);
    let mut header = vec!["replicate".to_string(), "epsilon".into(), "degenerate".into()];
    header.extend(result.labels.iter().cloned());
    rows.push(header);
    for r in &result.rows {
        let mut row = vec![r.replicate.to_string(), sig(r.epsilon), r.degenerate.to_string()];
        row.extend(r.errors.iter().map(|&e| sig(e)));
        rows.push(row);
    }
    let mut columns: Vec<Vec<f64>> = vec![
        result.rows.iter().map(|r| r.epsilon).collect(),
        result.rows.iter().map(|r| r.degenerate as f64).collect(),
    ];
    columns.extend((0..result.labels.len()).map(|j| result.column(j)));
    let summaries: Vec<[f64; 7]> = columns.iter().map(|c| summary_values(&Summary::of(c))).collect();
    for (i, name) in SUMMARY_ROWS.iter().enumerate() {
        let mut row = vec![name.to_string()];
        row.extend(summaries.iter().map(|s| sig(s[i])));
        rows.push(row);
    }
    rows
}

pub fn emit_experiment_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    write_rows(path, &experiment_rows(result))
}

pub const CLT_SUMMARY_HEADER: [&str; 7] = ["Min", "1stQu", "Median", "Mean", "Var", "3rdQu", "Max"];

pub fn clt_rows(result: &CltResult) -> Vec<Vec<String>> {
    let mut rows = vec![vec!["replicate".to_string(), "statistic".into()]];
    rows.extend(result.statistics.iter().enumerate().map(|(i, s)| vec![i.to_string(), sig(*s)]));
    let s = &result.summary;
    rows.push(CLT_SUMMARY_HEADER.iter().map(|h| h.to_string()).collect());
    rows.push([s.min, s.q1, s.median, s.mean, s.var, s.q3, s.max].iter().map(|v| sig(*v)).collect());
    rows.push(["TargetVar", "StarVolume", "Bandwidth", "KsD", "KsPValue"].iter().map(|h| h.to_string()).collect());
    rows.push(
        [result.target_variance, result.star_volume, result.hcv, result.ks.statistic, result.ks.p_value]
            .iter()
            .map(|v| sig(*v))
            .collect(),
    );
    rows
}

/// Writes the statistics table to `path` and the KDE curve of the statistics
/// next to it (`<stem>_density.csv`).
pub fn emit_clt_csv(result: &CltResult, path: &Path) -> Result<()> {
    write_rows(path, &clt_rows(result))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("clt");
    let curve_path = path.with_file_name(format!("{stem}_density.csv"));
    let mut rows = vec![vec!["t".to_string(), "density".into()]];
    rows.extend(result.curve.iter().map(|(t, y)| vec![sig(*t), sig(*y)]));
    write_rows(&curve_path, &rows)
}

pub fn emit_rows(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    write_rows(path, rows)
}

/// Reads numeric rows from a comma-separated file; a non-numeric first line
/// is taken as a header and skipped.
pub fn read_points(path: &Path) -> Result<Points> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(Error::config(
                    path.display().to_string(),
                    format!("line {}: expected numeric fields", i + 1),
                ))
            }
        }
    }
    Points::from_rows(&rows).map_err(|e| Error::config(path.display().to_string(), e.to_string()))
}
