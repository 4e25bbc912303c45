//! Delimited-text formats.
//!
//! Tables are comma-separated with a header row; lines starting with `#` are
//! comments. Numbers are written with Rust's shortest round-trip formatting,
//! so a table written here parses back to the same `f64` values.

use std::fmt::Write as _;

use thiserror::Error;

use crate::estimator::{EstimatorError, MeasuredStats, SecurityBounds};

pub const MEASURED_COLUMNS: [&str; 5] = ["length_km", "s_mu", "e_mu", "s_nu", "e_nu"];
pub const BOUNDS_COLUMNS: [&str; 7] = ["length_km", "s_nu_lower", "s1_lower", "e1_upper", "r_lower", "secure", "status"];

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}: {message}")]
pub struct TableError {
    pub line: u64,
    pub message: String,
}

impl TableError {
    pub fn new(line: u64, message: impl Into<String>) -> Self {
        Self { line, message: message.into() }
    }
}

/// Blanks comment lines in place so line numbers survive; the csv reader
/// skips empty lines.
fn strip_comments(text: &str) -> String {
    text.lines()
        .map(|l| if l.trim_start().starts_with('#') { "" } else { l })
        .collect::<Vec<_>>()
        .join("\n")
}

fn reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(text.as_bytes())
}

/// Line of a record's byte offset. Records start at the blank lines that
/// precede them, so those are skipped first.
fn line_at(text: &str, pos: Option<&csv::Position>) -> u64 {
    let Some(pos) = pos else { return 0 };
    let bytes = text.as_bytes();
    let mut at = (pos.byte() as usize).min(bytes.len());
    while at < bytes.len() && matches!(bytes[at], b'\n' | b'\r') {
        at += 1;
    }
    bytes[..at].iter().filter(|&&b| b == b'\n').count() as u64 + 1
}

fn csv_error(text: &str, e: csv::Error) -> TableError {
    TableError::new(line_at(text, e.position()), e.to_string())
}

fn check_header(headers: &csv::StringRecord, expected: &[&str]) -> Result<(), TableError> {
    let got: Vec<&str> = headers.iter().collect();
    if got != expected {
        return Err(TableError::new(1, format!("expected header {}, got {}", expected.join(","), got.join(","))));
    }
    Ok(())
}

fn parse_f64(field: &str, column: &str, line: u64) -> Result<f64, TableError> {
    field
        .parse::<f64>()
        .map_err(|_| TableError::new(line, format!("column {column}: cannot parse {field:?} as a number")))
}

/// Parses a measured-statistics table, validating every row.
pub fn parse_measured_table(text: &str) -> Result<Vec<MeasuredStats>, TableError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    let text = &strip_comments(text);
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(|e| csv_error(text, e))?.clone();
    check_header(&headers, &MEASURED_COLUMNS)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(text, e))?;
        let line = line_at(text, record.position());
        let mut v = [0.0; 5];
        for (i, column) in MEASURED_COLUMNS.iter().enumerate() {
            v[i] = parse_f64(&record[i], column, line)?;
        }
        let stats = MeasuredStats { length_km: v[0], s_mu: v[1], e_mu: v[2], s_nu: v[3], e_nu: v[4] };
        stats.validate().map_err(|e| TableError::new(line, e.to_string()))?;
        rows.push(stats);
    }
    Ok(rows)
}

pub fn write_measured_table(rows: &[MeasuredStats]) -> String {
    let mut out = MEASURED_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{},{:e},{:e},{:e},{:e}", r.length_km, r.s_mu, r.e_mu, r.s_nu, r.e_nu);
    }
    out
}

/// One output row: either bounds or the reason the row failed.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsRow {
    pub length_km: f64,
    pub outcome: Result<SecurityBounds, String>,
    /// Non-fatal notes such as a decoy rate above the signal rate.
    pub diagnostics: Vec<String>,
}

impl BoundsRow {
    pub fn from_analysis(stats: &MeasuredStats, result: Result<SecurityBounds, EstimatorError>) -> Self {
        let mut diagnostics = Vec::new();
        if stats.rate_order_suspect() {
            diagnostics.push("decoy rate not below signal rate".to_string());
        }
        Self {
            length_km: stats.length_km,
            outcome: result.map_err(|e| e.root_cause().to_string()),
            diagnostics,
        }
    }

    fn status(&self) -> String {
        match &self.outcome {
            Ok(_) if self.diagnostics.is_empty() => "ok".to_string(),
            Ok(_) => format!("ok; {}", self.diagnostics.join("; ")),
            Err(e) => format!("error: {e}"),
        }
    }
}

fn quote(field: &str) -> String {
    if field.contains([',', '"', '\n']) {
        format!("\"{}\"", field.replace('"', "\"\""))
    } else {
        field.to_string()
    }
}

pub fn write_bounds_table(rows: &[BoundsRow]) -> String {
    let mut out = BOUNDS_COLUMNS.join(",");
    out.push('\n');
    for row in rows {
        match &row.outcome {
            Ok(b) => {
                let e1 = b.e1_upper.map(|e| format!("{e:e}")).unwrap_or_default();
                let _ = writeln!(
                    out,
                    "{},{:e},{:e},{},{:e},{},{}",
                    row.length_km,
                    b.s_nu_lower,
                    b.s1_lower,
                    e1,
                    b.r_lower,
                    b.secure,
                    quote(&row.status())
                );
            }
            Err(_) => {
                let _ = writeln!(out, "{},,,,,false,{}", row.length_km, quote(&row.status()));
            }
        }
    }
    out
}

/// Reads back a table produced by [`write_bounds_table`].
pub fn parse_bounds_table(text: &str) -> Result<Vec<BoundsRow>, TableError> {
    let text = &strip_comments(text);
    let mut rdr = reader(text);
    let headers = rdr.headers().map_err(|e| csv_error(text, e))?.clone();
    check_header(&headers, &BOUNDS_COLUMNS)?;
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_error(text, e))?;
        let line = line_at(text, record.position());
        let length_km = parse_f64(&record[0], "length_km", line)?;
        let status = &record[6];
        if let Some(msg) = status.strip_prefix("error: ") {
            rows.push(BoundsRow { length_km, outcome: Err(msg.to_string()), diagnostics: Vec::new() });
            continue;
        }
        let diagnostics = status
            .strip_prefix("ok")
            .ok_or_else(|| TableError::new(line, format!("unknown status {status:?}")))?
            .split("; ")
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        let e1_upper = match &record[3] {
            "" => None,
            s => Some(parse_f64(s, "e1_upper", line)?),
        };
        let secure = record[5]
            .parse::<bool>()
            .map_err(|_| TableError::new(line, format!("column secure: {:?}", &record[5])))?;
        rows.push(BoundsRow {
            length_km,
            outcome: Ok(SecurityBounds {
                s_nu_lower: parse_f64(&record[1], "s_nu_lower", line)?,
                s1_lower: parse_f64(&record[2], "s1_lower", line)?,
                e1_upper,
                r_lower: parse_f64(&record[4], "r_lower", line)?,
                secure,
            }),
            diagnostics,
        });
    }
    Ok(rows)
}

/// Parses flat `key=value` text. Blank lines and `#` comments are skipped;
/// keys must be unique.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, TableError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = (i + 1) as u64;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let (k, v) = trimmed
            .split_once('=')
            .ok_or_else(|| TableError::new(line, format!("expected key=value, got {trimmed:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(TableError::new(line, "empty key"));
        }
        if out.iter().any(|(existing, _)| existing == k) {
            return Err(TableError::new(line, format!("duplicate key {k:?}")));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}
