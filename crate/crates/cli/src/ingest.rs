//! CSV ingestion and design-matrix assembly.
//!
//! Input files are plain UTF-8 CSV with a header row and '.' as the decimal
//! separator. Categorical columns are not auto-detected: the caller lists
//! them with `--expand`, and each one becomes a block of 0/1 dummies named
//! `column=level` with the first (sorted) level dropped.

use std::path::Path;

use robustinfer_core::nalgebra::{DMatrix, DVector};
use robustinfer_core::Dataset;

use crate::CliError;

/// A CSV file held column-major as raw strings.
pub struct Table {
    headers: Vec<String>,
    columns: Vec<Vec<String>>,
    n_rows: usize,
}

impl Table {
    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn column_index(&self, name: &str) -> Result<usize, CliError> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Config(format!(
                "column '{name}' not found; file has columns {:?}",
                self.headers
            ))
        })
    }

    pub fn raw_column(&self, name: &str) -> Result<&[String], CliError> {
        Ok(&self.columns[self.column_index(name)?])
    }

    /// Parses a column as f64, reporting failures with 1-based file line
    /// numbers (header is line 1).
    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let idx = self.column_index(name)?;
        self.columns[idx]
            .iter()
            .enumerate()
            .map(|(row, raw)| {
                raw.trim().parse::<f64>().map_err(|_| {
                    CliError::Data(format!(
                        "line {}: column '{name}': cannot parse '{raw}' as a number",
                        row + 2
                    ))
                })
            })
            .collect()
    }
}

pub fn load_csv(path: &Path) -> Result<Table, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Data(format!("{}: bad header row: {e}", path.display())))?
        .iter()
        .map(|h| h.to_string())
        .collect();
    if headers.is_empty() {
        return Err(CliError::Data(format!("{}: no columns", path.display())));
    }
    let mut columns: Vec<Vec<String>> = vec![Vec::new(); headers.len()];
    let mut n_rows = 0usize;
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            CliError::Data(format!("{}: line {}: {e}", path.display(), row + 2))
        })?;
        if record.len() != headers.len() {
            return Err(CliError::Data(format!(
                "{}: line {}: {} fields, expected {}",
                path.display(),
                row + 2,
                record.len(),
                headers.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            columns[j].push(field.to_string());
        }
        n_rows += 1;
    }
    if n_rows == 0 {
        return Err(CliError::Data(format!("{}: no data rows", path.display())));
    }
    Ok(Table { headers, columns, n_rows })
}

/// Which columns form the design matrix.
pub struct DesignRequest<'a> {
    pub x: &'a [String],
    pub expand: &'a [String],
    pub no_intercept: bool,
}

/// Assembles the design: intercept (unless suppressed), the listed numeric
/// regressors in order, then the dummy blocks of each `--expand` column.
pub fn build_design(
    table: &Table,
    req: &DesignRequest,
) -> Result<(DMatrix<f64>, Vec<String>), CliError> {
    let n = table.n_rows();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut names: Vec<String> = Vec::new();
    if !req.no_intercept {
        cols.push(vec![1.0; n]);
        names.push("(intercept)".to_string());
    }
    for name in req.x {
        if req.expand.contains(name) {
            return Err(CliError::Config(format!(
                "column '{name}' is listed both as --x and --expand"
            )));
        }
        cols.push(table.numeric_column(name)?);
        names.push(name.clone());
    }
    for name in req.expand {
        let raw = table.raw_column(name)?;
        let mut levels: Vec<&String> = raw.iter().collect();
        levels.sort();
        levels.dedup();
        // First level is the baseline; a single-level column expands to
        // nothing.
        for level in levels.into_iter().skip(1) {
            cols.push(raw.iter().map(|v| if v == level { 1.0 } else { 0.0 }).collect());
            names.push(format!("{name}={level}"));
        }
    }
    if cols.is_empty() {
        return Err(CliError::Config(
            "the design has no columns: list regressors with --x/--expand or drop --no-intercept"
                .to_string(),
        ));
    }
    let k = cols.len();
    let x = DMatrix::from_fn(n, k, |i, j| cols[j][i]);
    Ok((x, names))
}

pub fn build_dataset(
    table: &Table,
    y_column: &str,
    req: &DesignRequest,
) -> Result<Dataset, CliError> {
    let y = DVector::from_vec(table.numeric_column(y_column)?);
    let (x, names) = build_design(table, req)?;
    Ok(Dataset::with_names(y, x, names)?)
}

/// Maps user-supplied coefficient names to design-column indices.
pub fn resolve_coefficients(
    names: &[String],
    requested: &[String],
) -> Result<Option<Vec<usize>>, CliError> {
    if requested.is_empty() {
        return Ok(None);
    }
    requested
        .iter()
        .map(|want| {
            names.iter().position(|n| n == want).ok_or_else(|| {
                CliError::Config(format!(
                    "coefficient '{want}' is not a design column; available: {names:?}"
                ))
            })
        })
        .collect::<Result<Vec<usize>, CliError>>()
        .map(Some)
}
