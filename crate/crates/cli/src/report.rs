use std::io::Write;

use serde_json::{json, Map, Value};

use crate::config::{Format, RunConfig};
use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Text(String),
    Float(f64),
    Int(u64),
    Bool(bool),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Float(v) if v.is_finite() => format!("{v:.16e}"),
            Cell::Float(v) if v.is_nan() => "nan".into(),
            Cell::Float(v) => if *v > 0.0 { "inf" } else { "-inf" }.into(),
            Cell::Int(v) => v.to_string(),
            Cell::Bool(v) => v.to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Text(s) => Value::String(s.clone()),
            Cell::Float(v) => serde_json::Number::from_f64(*v).map_or(Value::Null, Value::Number),
            Cell::Int(v) => json!(v),
            Cell::Bool(v) => json!(v),
            Cell::Empty => Value::Null,
        }
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Float)
    }
}

/// A check whose failure makes the run exit nonzero.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            ..Default::default()
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn check(&mut self, name: impl Into<String>, pass: bool, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn write<W: Write>(&self, cfg: &RunConfig, mut out: W) -> Result<(), CliError> {
        match cfg.format {
            Format::Csv => self.write_csv(cfg, out),
            Format::Json => {
                let text = serde_json::to_string_pretty(&self.to_json(cfg)).expect("report serializes");
                writeln!(out, "{text}").map_err(|e| CliError::Io(e.to_string()))
            }
        }
    }

    fn write_csv<W: Write>(&self, cfg: &RunConfig, out: W) -> Result<(), CliError> {
        let io = |e: csv::Error| CliError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["config_hash", "seed"];
        header.extend(self.columns.iter().map(String::as_str));
        w.write_record(&header).map_err(io)?;
        let hash = cfg.hash();
        let seed = cfg.seed.to_string();
        for row in &self.rows {
            let mut record = vec![hash.clone(), seed.clone()];
            record.extend(row.iter().map(Cell::csv));
            w.write_record(&record).map_err(io)?;
        }
        w.flush().map_err(|e| CliError::Io(e.to_string()))
    }

    pub fn to_json(&self, cfg: &RunConfig) -> Value {
        let hash = cfg.hash();
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut m = Map::new();
                m.insert("config_hash".into(), json!(hash));
                m.insert("seed".into(), json!(cfg.seed));
                for (k, v) in self.columns.iter().zip(row) {
                    m.insert(k.clone(), v.json());
                }
                Value::Object(m)
            })
            .collect();
        let checks: Vec<Value> = self
            .checks
            .iter()
            .map(|c| json!({"name": c.name, "pass": c.pass, "detail": c.detail}))
            .collect();
        json!({
            "command": cfg.command.name(),
            "config_hash": hash,
            "seed": cfg.seed,
            "rows": rows,
            "checks": checks,
        })
    }
}
