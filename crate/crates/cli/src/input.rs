//! CSV ingestion.

use std::io::Read;
use std::path::Path;

use robust_es::Dataset;

use crate::{CliError, CliResult};

/// Response column given by header name or zero-based index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Column {
    Name(String),
    Index(usize),
}

impl std::str::FromStr for Column {
    type Err = std::convert::Infallible;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.parse::<usize>() {
            Ok(i) => Column::Index(i),
            Err(_) => Column::Name(s.to_string()),
        })
    }
}

/// Parsed table: the response, the remaining columns as covariates.
#[derive(Debug, Clone)]
pub struct Table {
    pub response: String,
    pub covariates: Vec<String>,
    pub data: Dataset,
}

pub fn read_csv_file(path: &Path, response: &Column) -> CliResult<Table> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
    read_csv(&bytes, response)
}

/// Parses a header-first CSV. Every cell must be a finite number; an
/// intercept column is prepended to the covariates.
pub fn read_csv(bytes: &[u8], response: &Column) -> CliResult<Table> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(bytes);
    let headers: Vec<String> =
        rdr.headers().map_err(|e| CliError::input(format!("bad CSV header: {e}")))?.iter().map(String::from).collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(CliError::input("CSV has no header row"));
    }
    let ycol = match response {
        Column::Index(i) if *i < headers.len() => *i,
        Column::Index(i) => return Err(CliError::input(format!("response column {i} out of range ({} columns)", headers.len()))),
        Column::Name(name) => headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::input(format!("response column `{name}` not found")))?,
    };

    let mut y = Vec::new();
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let line = r + 2;
        let rec = rec.map_err(|e| CliError::input(format!("line {line}: {e}")))?;
        if rec.len() != headers.len() {
            return Err(CliError::input(format!("line {line}: expected {} fields, found {}", headers.len(), rec.len())));
        }
        let mut row = Vec::with_capacity(headers.len() - 1);
        for (j, cell) in rec.iter().enumerate() {
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| CliError::input(format!("line {line}, column `{}`: not a finite number: `{cell}`", headers[j])))?;
            if j == ycol {
                y.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    if y.is_empty() {
        return Err(CliError::input("CSV has no data rows"));
    }
    let data = Dataset::with_intercept(&rows, y).map_err(|e| CliError::input(e.to_string()))?;
    let mut covariates = headers.clone();
    let response = covariates.remove(ycol);
    Ok(Table { response, covariates, data })
}
