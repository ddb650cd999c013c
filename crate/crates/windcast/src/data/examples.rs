//! Forecast example assembly from a grid series.
//!
//! An example pairs a predictor vector (the full lattice over the current
//! step and `k` earlier steps) with a response (the two components of one
//! chosen center cell at the next step). Examples never straddle a slice
//! boundary: the final step of a slice has no response and contributes
//! nothing.
//!
//! Predictor layout, fixed across the whole pipeline: lag-major with the
//! newest step first, then row-major over cells, then (u, v). So index 0 is
//! u at (0, 0) of the current step, and the last entry is v at the bottom
//! right corner of the oldest included step.

use crate::data::grid::{GridSeries, Season};
use crate::error::{Error, Result};
use crate::numeric::Array;

#[derive(Debug, Clone)]
pub struct ExampleSet {
    /// N x d predictor matrix.
    pub predictors: Array,
    /// N x 2 response matrix (u, v at the center cell one step ahead).
    pub responses: Array,
    /// Slice label each example came from, aligned with the rows.
    pub provenance: Vec<(i32, Season)>,
    pub lags: usize,
    pub center: (usize, usize),
    pub lattice: (usize, usize),
}

impl ExampleSet {
    pub fn len(&self) -> usize {
        self.predictors.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Predictor dimension d = rows * cols * 2 * (lags + 1).
    pub fn dim(&self) -> usize {
        self.predictors.ncols()
    }

    /// Position of (lag, row, col, component) within a predictor row.
    pub fn predictor_index(&self, lag: usize, row: usize, col: usize, comp: usize) -> usize {
        let (rows, cols) = self.lattice;
        debug_assert!(lag <= self.lags && row < rows && col < cols && comp < 2);
        ((lag * rows + row) * cols + col) * 2 + comp
    }

    /// New set holding the chosen rows, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let d = self.dim();
        let mut preds = Vec::with_capacity(indices.len() * d);
        let mut resps = Vec::with_capacity(indices.len() * 2);
        let mut prov = Vec::with_capacity(indices.len());
        for &i in indices {
            preds.extend_from_slice(self.predictors.row(i));
            resps.extend_from_slice(self.responses.row(i));
            prov.push(self.provenance[i]);
        }
        Self {
            predictors: Array::matrix(indices.len(), d, preds)
                .expect("subset rows keep the parent shape"),
            responses: Array::matrix(indices.len(), 2, resps)
                .expect("subset rows keep the parent shape"),
            provenance: prov,
            lags: self.lags,
            center: self.center,
            lattice: self.lattice,
        }
    }
}

/// Builds every in-slice example of the series: a slice of length T with
/// lag depth k yields T - k - 1 examples.
pub fn build_examples(series: &GridSeries, lags: usize, center: (usize, usize)) -> Result<ExampleSet> {
    let (rows, cols) = (series.rows(), series.cols());
    if center.0 >= rows || center.1 >= cols {
        return Err(Error::InvalidArgument(format!(
            "center ({}, {}) outside a {}x{} lattice",
            center.0, center.1, rows, cols
        )));
    }
    let d = rows * cols * 2 * (lags + 1);
    let mut preds: Vec<f64> = Vec::new();
    let mut resps: Vec<f64> = Vec::new();
    let mut prov: Vec<(i32, Season)> = Vec::new();
    for s in series.slices() {
        // Current step i needs lags history behind it and one step ahead.
        for i in (s.start + lags)..s.end.saturating_sub(1) {
            for lag in 0..=lags {
                preds.extend_from_slice(series.step_values(i - lag));
            }
            resps.push(series.value(i + 1, center.0, center.1, 0));
            resps.push(series.value(i + 1, center.0, center.1, 1));
            prov.push((s.year, s.season));
        }
    }
    let n = prov.len();
    if n == 0 {
        return Err(Error::InvalidArgument(format!(
            "lag depth {} leaves no example in any slice",
            lags
        )));
    }
    Ok(ExampleSet {
        predictors: Array::matrix(n, d, preds)?,
        responses: Array::matrix(n, 2, resps)?,
        provenance: prov,
        lags,
        center,
        lattice: (rows, cols),
    })
}
