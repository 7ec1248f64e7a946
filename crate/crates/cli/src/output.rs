//! CSV/JSON output with deterministic formatting and atomic writes.

use serde::Serialize;
use std::fs;
use std::io::Write;
use std::path::Path;

/// Floats print at 17 significant digits so doubles round-trip exactly
/// and reruns are byte-identical.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone)]
pub enum Cell {
    U(u64),
    I(i64),
    F(f64),
    S(String),
    B(bool),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::U(v) => v.to_string(),
            Cell::I(v) => v.to_string(),
            Cell::F(v) => fmt_f64(*v),
            Cell::S(v) => v.clone(),
            Cell::B(v) => v.to_string(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for row in &self.rows {
            let line: Vec<String> = row.iter().map(Cell::render).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }
}

/// One named assertion of a run; failures flip the exit code.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }

    /// Numeric bound check with a uniform detail string.
    pub fn bound(name: &str, value: f64, bound: f64) -> Self {
        Check::new(
            name,
            value <= bound,
            format!("{} <= {}", fmt_f64(value), fmt_f64(bound)),
        )
    }
}

/// Everything an experiment produces.
pub struct ExperimentOutput {
    pub table: Table,
    pub json: serde_json::Value,
    pub checks: Vec<Check>,
}

/// Write a file atomically (temp file in the same directory + rename).
pub fn write_atomic(path: &Path, contents: &str) -> std::io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}
