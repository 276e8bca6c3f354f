//! CSV artifacts with a `#` metadata header.
//!
//! Every file starts with the tool version, the subcommand, the master seed
//! and the full resolved scenario, each line prefixed with `# `. Numbers are
//! written in Rust's shortest round-trip form, so identical runs give
//! identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::config::Scenario;
use crate::error::AppError;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:?}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

/// One output file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// File stem; the file is `<name>.csv`.
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| c == name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[k] {
                    Cell::Num(v) => *v,
                    Cell::Int(v) => *v as f64,
                    Cell::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }
}

/// Metadata block for `subcommand` run on `scenario`.
pub fn header(subcommand: &str, scenario: &Scenario) -> String {
    let mut out = String::new();
    writeln!(out, "# adaptest {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(out, "# subcommand = {subcommand}").unwrap();
    writeln!(out, "# master_seed = {}", scenario.seed).unwrap();
    for line in scenario.config.to_toml().lines() {
        if line.is_empty() {
            out.push_str("#\n");
        } else {
            writeln!(out, "# {line}").unwrap();
        }
    }
    out
}

/// Renders a table with its header block.
pub fn render(table: &Table, header: &str) -> Result<Vec<u8>, AppError> {
    let mut buf = header.as_bytes().to_vec();
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(&table.columns)?;
        for row in &table.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush()?;
    }
    Ok(buf)
}

/// Writes every table into `dir` and returns the paths in order.
pub fn write_all(dir: &Path, tables: &[Table], header: &str) -> Result<Vec<PathBuf>, AppError> {
    fs::create_dir_all(dir)?;
    let mut paths = Vec::with_capacity(tables.len());
    for t in tables {
        let path = dir.join(format!("{}.csv", t.name));
        let mut f = fs::File::create(&path)?;
        f.write_all(&render(t, header)?)?;
        paths.push(path);
    }
    Ok(paths)
}
