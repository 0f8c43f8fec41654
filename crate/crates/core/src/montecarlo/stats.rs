//! Sample statistics over a trial store.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Per-row sample mean and unbiased standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleStats {
    pub mean: DVector<f64>,
    pub std: DVector<f64>,
    pub samples: usize,
}

/// Statistics of each row of `trials` (one column per trial).
pub fn estimate_stats(trials: &DMatrix<f64>) -> Result<SampleStats> {
    let n = trials.ncols();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    let mut mean = DVector::zeros(trials.nrows());
    let mut std = DVector::zeros(trials.nrows());
    for (r, row) in trials.row_iter().enumerate() {
        // shifted by the first sample, so constant rows give their value exactly
        let shift = row[0];
        let m = shift + row.iter().map(|v| v - shift).sum::<f64>() / n as f64;
        let ss: f64 = row.iter().map(|v| (v - m) * (v - m)).sum();
        mean[r] = m;
        std[r] = (ss / (n - 1) as f64).sqrt();
    }
    Ok(SampleStats {
        mean,
        std,
        samples: n,
    })
}

/// Unbiased sample covariance of rows `a` and `b`.
pub fn covariance(trials: &DMatrix<f64>, a: usize, b: usize) -> Result<f64> {
    let n = trials.ncols();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    for idx in [a, b] {
        if idx >= trials.nrows() {
            return Err(Error::IndexOutOfRange {
                index: idx,
                dim: trials.nrows(),
            });
        }
    }
    let ma = trials.row(a).mean();
    let mb = trials.row(b).mean();
    let s: f64 = trials
        .row(a)
        .iter()
        .zip(trials.row(b).iter())
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum();
    Ok(s / (n - 1) as f64)
}
