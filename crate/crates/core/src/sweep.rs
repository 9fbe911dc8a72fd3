//! Tabular protocol output with deterministic CSV and JSON metadata.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Bool(bool),
    Int(i64),
    Num(f64),
    Text(String),
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Num(v) => write!(f, "{v}"),
            Cell::Int(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
            Cell::Bool(b) => write!(f, "{b}"),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub subcommand: String,
    pub spec_hash: String,
    pub seed: u64,
    pub version: String,
    #[serde(default)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub metadata: Metadata,
}

impl SweepResult {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            metadata: Metadata::default(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.columns.len(), "row width must match the schema");
        self.rows.push(row);
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Numeric column; non-numeric cells become NaN.
    pub fn column_f64(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.column_index(name)?;
        Some(
            self.rows
                .iter()
                .map(|r| match &r[k] {
                    Cell::Num(v) => *v,
                    Cell::Int(v) => *v as f64,
                    Cell::Bool(b) => f64::from(u8::from(*b)),
                    Cell::Text(_) => f64::NAN,
                })
                .collect(),
        )
    }

    pub fn column_text(&self, name: &str) -> Option<Vec<String>> {
        let k = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[k].to_string()).collect())
    }

    /// Rows whose `column` equals `value` (text comparison).
    pub fn filter(&self, column: &str, value: &str) -> SweepResult {
        let k = self.column_index(column);
        SweepResult {
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| k.is_some_and(|k| r[k].to_string() == value))
                .cloned()
                .collect(),
            metadata: self.metadata.clone(),
        }
    }

    /// CSV with a `spec_hash` column prepended to every row.
    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let mut header = vec!["spec_hash".to_string()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![self.metadata.spec_hash.clone()];
            rec.extend(row.iter().map(Cell::to_string));
            w.write_record(&rec)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn metadata_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.metadata).expect("metadata serializes");
        s.push('\n');
        s
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let csv = self.to_csv().map_err(std::io::Error::other)?;
        std::fs::File::create(dir.join(format!("{stem}.csv")))?.write_all(csv.as_bytes())?;
        std::fs::File::create(dir.join(format!("{stem}.json")))?.write_all(self.metadata_json().as_bytes())?;
        Ok(())
    }
}
