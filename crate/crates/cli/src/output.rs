//! Writers for tables and summaries.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::{CliError, Format};

/// Version of the JSON summary layout.
pub const SCHEMA: u32 = 1;

/// A numeric table with an optional leading label column.
pub struct Table {
    pub columns: Vec<String>,
    pub labels: Option<(String, Vec<String>)>,
    pub data: DMatrix<f64>,
}

impl Table {
    pub fn new(columns: Vec<String>, data: DMatrix<f64>) -> Self {
        Self { columns, labels: None, data }
    }

    pub fn with_labels(mut self, header: &str, labels: Vec<String>) -> Self {
        self.labels = Some((header.to_string(), labels));
        self
    }

    /// Write `<stem>.csv` or `<stem>.json` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str, format: Format) -> Result<PathBuf, CliError> {
        match format {
            Format::Csv => {
                let path = dir.join(format!("{stem}.csv"));
                let mut w = create_file(&path)?;
                let mut header: Vec<&str> = Vec::new();
                if let Some((h, _)) = &self.labels {
                    header.push(h);
                }
                header.extend(self.columns.iter().map(String::as_str));
                let header: Vec<String> = header.into_iter().map(quote).collect();
                writeln!(w, "{}", header.join(","))?;
                for i in 0..self.data.nrows() {
                    let mut fields: Vec<String> = Vec::with_capacity(header.len());
                    if let Some((_, labels)) = &self.labels {
                        fields.push(quote(&labels[i]));
                    }
                    fields.extend(self.data.row(i).iter().map(|x| number(*x)));
                    writeln!(w, "{}", fields.join(","))?;
                }
                w.flush()?;
                Ok(path)
            }
            Format::Json => {
                let path = dir.join(format!("{stem}.json"));
                let rows: Vec<Vec<f64>> =
                    (0..self.data.nrows()).map(|i| self.data.row(i).iter().copied().collect()).collect();
                let mut body = json!({ "columns": self.columns, "rows": rows });
                if let Some((h, labels)) = &self.labels {
                    body["label"] = json!(h);
                    body["labels"] = json!(labels);
                }
                write_json(&path, &body)?;
                Ok(path)
            }
        }
    }
}

fn create_file(path: &Path) -> Result<std::io::BufWriter<fs::File>, CliError> {
    Ok(std::io::BufWriter::new(fs::File::create(path)?))
}

/// Shortest representation that reads back to the same `f64`.
pub fn number(x: f64) -> String {
    if x.is_nan() {
        "NA".to_string()
    } else {
        format!("{x}")
    }
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(factorkit::FactorError::from)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Summary object with the fields every command shares.
pub fn summary(command: &str) -> Value {
    json!({ "schema": SCHEMA, "command": command, "version": env!("CARGO_PKG_VERSION") })
}

pub fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Print a warning to stderr and record it in the summary.
pub fn warn(summary: &mut Value, message: String) {
    eprintln!("warning: {message}");
    match summary.get_mut("warnings").and_then(Value::as_array_mut) {
        Some(list) => list.push(json!(message)),
        None => summary["warnings"] = json!([message]),
    }
}
