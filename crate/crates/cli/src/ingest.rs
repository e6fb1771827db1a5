//! CSV ingestion for `ssgd fit`.

use std::fmt;
use std::io::Read;
use std::sync::LazyLock;

use nalgebra::DMatrix;
use regex::Regex;
use ssgd_core::{validate_dataset, Dataset, DatasetViolation, SsgdError};

static NUMBER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^-?\d+(\.\d+)?([eE][+-]?\d+)?$").unwrap());

#[derive(Debug)]
pub enum IngestError {
    /// Malformed file; carries the 1-based line when known.
    Parse { line: Option<u64>, message: String },
    /// Well-formed file whose contents break a dataset invariant.
    Invalid(String),
}

impl fmt::Display for IngestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IngestError::Parse { line: Some(l), message } => write!(f, "line {l}: {message}"),
            IngestError::Parse { line: None, message } => f.write_str(message),
            IngestError::Invalid(message) => f.write_str(message),
        }
    }
}

#[derive(Debug)]
pub struct Table {
    /// Regressor names in file order.
    pub columns: Vec<String>,
    pub data: Dataset,
}

/// Locale-independent number grammar: `-?d+(.d+)?([eE][+-]?d+)?`.
pub fn parse_number(field: &str) -> Option<f64> {
    let t = field.trim();
    NUMBER.is_match(t).then(|| t.parse().ok()).flatten()
}

// Data row `r` (zero-based) sits on line `r + 2`, below the header.
fn line_of(row: usize) -> usize {
    row + 2
}

fn describe(v: &DatasetViolation, columns: &[String]) -> String {
    match v {
        DatasetViolation::NonBinaryOutcome { row, value } => {
            format!("line {}: y = {value} is not 0 or 1", line_of(*row))
        }
        DatasetViolation::NonFinite { row, column } => {
            format!("line {}: column '{}' is not finite", line_of(*row), columns[*column])
        }
        DatasetViolation::ConstantColumn { index } => {
            format!("column '{}' is constant", columns[*index])
        }
        other => other.to_string(),
    }
}

pub fn read_table<R: Read>(source: R) -> Result<Table, IngestError> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(source);
    let header = reader
        .headers()
        .map_err(|e| IngestError::Parse {
            line: e.position().map(|p| p.line()),
            message: e.to_string(),
        })?
        .clone();
    if header.is_empty() {
        return Err(IngestError::Parse {
            line: Some(1),
            message: "missing header".into(),
        });
    }
    let names: Vec<String> = header.iter().map(|h| h.trim().to_string()).collect();
    let y_at: Vec<usize> = (0..names.len()).filter(|&i| names[i] == "y").collect();
    let y_col = match y_at.as_slice() {
        [i] => *i,
        [] => return Err(IngestError::Invalid("header has no column named 'y'".into())),
        _ => return Err(IngestError::Invalid("header names 'y' more than once".into())),
    };
    let columns: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != y_col)
        .map(|(_, n)| n.clone())
        .collect();
    if columns.is_empty() {
        return Err(IngestError::Invalid("no regressor columns besides 'y'".into()));
    }

    let mut values: Vec<f64> = Vec::new();
    let mut y = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Parse {
            line: e.position().map(|p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line());
        if record.len() != names.len() {
            return Err(IngestError::Parse {
                line,
                message: format!("expected {} fields, found {}", names.len(), record.len()),
            });
        }
        for (i, field) in record.iter().enumerate() {
            let v = parse_number(field).ok_or_else(|| IngestError::Parse {
                line,
                message: format!("column '{}': '{}' is not a number", names[i], field),
            })?;
            if i == y_col {
                y.push(v);
            } else {
                values.push(v);
            }
        }
    }
    let p = columns.len();
    let x = DMatrix::from_row_slice(y.len(), p, &values);
    match validate_dataset(x, y) {
        Ok(data) => Ok(Table { columns, data }),
        Err(SsgdError::InvalidDataset(violations)) => Err(IngestError::Invalid(
            violations
                .iter()
                .map(|v| describe(v, &columns))
                .collect::<Vec<_>>()
                .join("; "),
        )),
        Err(other) => Err(IngestError::Invalid(other.to_string())),
    }
}
