//! Time-series tables: CSV with a header row and full-precision numbers.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::rates::{RateSeries, RatesError};

#[derive(Debug, Error)]
pub enum SeriesError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("row {row}, column {col}: cannot parse {value:?}")]
    Number { row: usize, col: String, value: String },
}

/// Column-named table of numbers, one row per sample.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// Shortest round-trip text for a float.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SeriesError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r.iter().map(|v| fmt_f64(*v)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, SeriesError> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .zip(&header)
                .map(|(v, h)| {
                    v.trim().parse::<f64>().map_err(|_| SeriesError::Number {
                        row: i + 1,
                        col: h.clone(),
                        value: v.to_owned(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            rows.push(row);
        }
        Ok(Self { header, rows })
    }

    /// Columns needed by the rate models. The run counts as a blowup run
    /// when its `blowup` column is set on every row.
    pub fn rate_series(&self) -> Result<RateSeries, RatesError> {
        let col = |name: &'static str| self.column(name).ok_or(RatesError::MissingColumn(name));
        let blowup = col("blowup")?;
        Ok(RateSeries {
            blowup: !blowup.is_empty() && blowup.iter().all(|b| *b == 1.0),
            delta: col("delta")?,
            phi1: col("phi1")?,
            m2: col("m2")?,
            gamma_min: col("gamma_min")?,
            gamma_generic: col("gamma_generic")?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_keeps_every_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let mut t = Table::new(vec!["t".into(), "x".into()]);
        t.push(vec![0.1, 1e-300]);
        t.push(vec![1.0 / 3.0, f64::NAN]);
        t.push(vec![2.0, f64::INFINITY]);
        t.write_csv(&p).unwrap();
        let back = Table::read_csv(&p).unwrap();
        assert_eq!(back.header, t.header);
        assert_eq!(back.rows[0], t.rows[0]);
        assert_eq!(back.rows[1][0].to_bits(), (1.0f64 / 3.0).to_bits());
        assert!(back.rows[1][1].is_nan() && back.rows[2][1] == f64::INFINITY);
    }

    #[test]
    fn missing_rate_column_is_named() {
        let t = Table::new(vec!["delta".into(), "phi1".into()]);
        assert_eq!(t.rate_series().unwrap_err(), RatesError::MissingColumn("blowup"));
    }
}
