use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const STATUS_OK: &str = "ok";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResultRow {
    pub variant: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
    pub nuclear_error: f64,
    pub frobenius_error: f64,
    pub op_error: f64,
    pub rank_hat: usize,
    pub wall_ms: u64,
    pub status: String,
}

impl ResultRow {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }
}

// Bitwise on floats so failed rows (NaN errors) compare equal to themselves.
impl PartialEq for ResultRow {
    fn eq(&self, other: &Self) -> bool {
        self.variant == other.variant
            && self.n == other.n
            && self.seed == other.seed
            && self.nuclear_error.to_bits() == other.nuclear_error.to_bits()
            && self.frobenius_error.to_bits() == other.frobenius_error.to_bits()
            && self.op_error.to_bits() == other.op_error.to_bits()
            && self.rank_hat == other.rank_hat
            && self.wall_ms == other.wall_ms
            && self.status == other.status
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    /// Orders rows by `(variant, N, seed)`.
    pub fn canonicalize(&mut self) {
        self.rows
            .sort_by(|a, b| (a.variant.as_str(), a.n, a.seed).cmp(&(b.variant.as_str(), b.n, b.seed)));
    }

    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let rows = r.deserialize().collect::<std::result::Result<Vec<ResultRow>, _>>()?;
        Ok(Self { rows })
    }

    /// Successful nuclear errors of one cell, in seed order.
    pub fn cell(&self, variant: &str, n: usize) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant && r.n == n && r.is_ok())
            .map(|r| r.nuclear_error)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        let mut t = ResultTable::default();
        for (i, v) in ["U", "E", "E"].iter().enumerate() {
            t.rows.push(ResultRow {
                variant: v.to_string(),
                n: 100 * (3 - i),
                seed: i as u64,
                nuclear_error: 0.1 + 1.0 / 3.0 * i as f64,
                frobenius_error: 1e-17,
                op_error: if i == 2 { f64::NAN } else { 2.0 },
                rank_hat: i,
                wall_ms: 0,
                status: if i == 2 { "failed: x".into() } else { STATUS_OK.into() },
            });
        }
        t.canonicalize();
        assert_eq!(t.rows[0].variant, "E");
        assert_eq!(t.rows[0].n, 100);
        t.write_csv(&path).unwrap();
        let back = ResultTable::read_csv(&path).unwrap();
        assert_eq!(back, t);
        assert_eq!(t.failures(), 1);
        let header = std::fs::read_to_string(&path).unwrap();
        assert!(header.starts_with("variant,N,seed,nuclear_error,frobenius_error,op_error,rank_hat,wall_ms,status\n"));
    }
}
