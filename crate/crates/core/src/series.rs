use std::ops::Range;

use nalgebra::{DMatrix, DMatrixView};

use crate::error::{Error, Result};

/// A multivariate time series stored as a `p × n` matrix, one column per time point.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesMatrix {
    values: DMatrix<f64>,
}

impl TimeSeriesMatrix {
    /// Wrap a `p × n` matrix. Rejects empty matrices and non-finite entries.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::dimension(format!(
                "time series must have p >= 1 and n >= 1, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            let (r, c) = (pos % values.nrows(), pos / values.nrows());
            return Err(Error::invalid(format!(
                "non-finite value at variable {r}, time {c}"
            )));
        }
        Ok(Self { values })
    }

    /// Build from observations given one per time point (row-per-time layout).
    pub fn from_observations(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(t) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::dimension(format!(
                "observation {t} has {} values, expected {p}",
                rows[t].len()
            )));
        }
        Self::new(DMatrix::from_fn(p, n, |r, c| rows[c][r]))
    }

    /// Number of variables `p`.
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    /// Number of time points `n`.
    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.values
    }

    /// Zero-copy view of the columns in `range` (0-based, half-open).
    pub fn segment(&self, range: Range<usize>) -> DMatrixView<'_, f64> {
        self.values.columns(range.start, range.end - range.start)
    }

    /// Whole series as a view.
    pub fn view(&self) -> DMatrixView<'_, f64> {
        self.segment(0..self.len())
    }

    /// Copy of the columns in `range` as a standalone series.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::dimension(format!(
                "segment {range:?} out of bounds for series of length {}",
                self.len()
            )));
        }
        Self::new(self.segment(range).into_owned())
    }
}
