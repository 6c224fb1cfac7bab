//! Serde helpers writing matrices as lists of rows.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if nrows == 0 || ncols == 0 {
        return Err("matrix must be nonempty".into());
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    to_rows(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<DMatrix<f64>, D::Error> {
    let rows = Vec::<Vec<f64>>::deserialize(d)?;
    from_rows(&rows).map_err(serde::de::Error::custom)
}

/// Reads one matrix stored as a JSON list of rows.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    from_rows(&rows).map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))
}

/// Reads a JSON list of matrices, each a list of rows.
pub fn read_matrices(path: &Path) -> Result<Vec<DMatrix<f64>>> {
    let all: Vec<Vec<Vec<f64>>> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    all.iter()
        .enumerate()
        .map(|(i, rows)| from_rows(rows).map_err(|e| Error::InvalidArgument(format!("{} [{i}]: {e}", path.display()))))
        .collect()
}
