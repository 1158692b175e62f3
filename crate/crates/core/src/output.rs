//! CSV and JSON persistence.
//!
//! Node sets are CSV with a header row `x1,...,xd`, comma separators and LF
//! line endings; floats use Rust's shortest round-trip formatting, so a
//! written file reads back bit-exactly. JSON is written with sorted keys.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::energy::ParticleConfiguration;
use crate::error::{Error, Result};

pub fn points_to_csv(points: &ParticleConfiguration) -> String {
    let d = points.dim();
    let mut out = String::with_capacity(points.coords().len() * 22 + 8 * d);
    let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for p in points.points() {
        for (j, v) in p.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v:?}").expect("writing to a String");
        }
        out.push('\n');
    }
    out
}

pub fn write_points_csv(points: &ParticleConfiguration, path: &Path) -> Result<()> {
    write_file(path, points_to_csv(points).as_bytes())
}

pub fn parse_points_csv(text: &str, path: &Path) -> Result<ParticleConfiguration> {
    let bad = |reason: String| Error::Parse {
        path: path.to_path_buf(),
        reason,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let dim = header.split(',').count();
    let mut coords = Vec::new();
    for (no, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim {
            return Err(bad(format!("line {}: expected {dim} fields, found {}", no + 1, fields.len())));
        }
        for f in fields {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| bad(format!("line {}: `{f}` is not a number", no + 1)))?;
            coords.push(v);
        }
    }
    if coords.is_empty() {
        return Err(bad("no data rows".into()));
    }
    ParticleConfiguration::new(dim, coords)
}

pub fn read_points_csv(path: &Path) -> Result<ParticleConfiguration> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points_csv(&text, path)
}

/// Pretty JSON with sorted keys and a trailing newline.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let value = serde_json::to_value(value)?;
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    write_file(path, to_json_string(value)?.as_bytes())
}

/// Writes `series` as a two-column CSV with the given header.
pub fn write_series_csv(header: (&str, &str), series: &[(f64, f64)], path: &Path) -> Result<()> {
    let mut out = format!("{},{}\n", header.0, header.1);
    for (a, b) in series {
        writeln!(out, "{a:?},{b:?}").expect("writing to a String");
    }
    write_file(path, out.as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
