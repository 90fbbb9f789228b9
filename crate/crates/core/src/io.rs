//! Small file-format helpers shared by the CSV writers and manifests.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

/// Formats `v` with `digits` significant digits, like C's `%.*g`.
pub fn format_sig(v: f64, digits: usize) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return format!("{v}");
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("exponent is an integer");
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{}", trim_fraction(mantissa), exp)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_fraction(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Nine significant digits, the precision used by every numeric CSV column.
pub fn f9(v: f64) -> String {
    format_sig(v, 9)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Writes `contents` to `path`, creating parent directories.
pub fn write_file(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut f = fs::File::create(path)?;
    f.write_all(contents)?;
    f.flush()
}

/// Splits a CSV line of numbers, reporting the 1-based line number on failure.
pub fn parse_numeric_row(line: &str, expected: usize, line_no: usize) -> Result<Vec<f64>, String> {
    let vals: Vec<&str> = line.split(',').map(str::trim).collect();
    if vals.len() != expected {
        return Err(format!("line {line_no}: expected {expected} columns, got {}", vals.len()));
    }
    vals.iter()
        .map(|s| s.parse::<f64>().map_err(|e| format!("line {line_no}: bad number {s:?}: {e}")))
        .collect()
}
