//! Normal quantile-quantile check.

use std::io::Write;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// QQ correlation below this flags the sample as not normal.
pub const NORMAL_CORRELATION: f64 = 0.999;

pub const MIN_QQ_SAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct QqReport {
    /// `(theoretical, sample)` quantile pairs in ascending order.
    pub points: Vec<(f64, f64)>,
    /// Pearson correlation of the pairs.
    pub correlation: f64,
    pub normal: bool,
}

impl QqReport {
    /// Plot-ready CSV with a header line.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let err = |e: csv::Error| Error::Output(e.to_string());
        w.write_record(["theoretical_quantile", "sample_quantile"])
            .map_err(err)?;
        for (t, s) in &self.points {
            w.write_record([t.to_string(), s.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| Error::Output(e.to_string()))
    }
}

/// Compare sorted samples against standard normal quantiles at Blom
/// plotting positions `(i - 3/8) / (n + 1/4)`.
pub fn qq_normality_check(samples: &[f64]) -> Result<QqReport> {
    let n = samples.len();
    if n < MIN_QQ_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_QQ_SAMPLES,
            got: n,
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("QQ samples must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let points: Vec<(f64, f64)> = sorted
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let p = (i as f64 + 1.0 - 0.375) / (n as f64 + 0.25);
            (normal.inverse_cdf(p), *s)
        })
        .collect();
    let correlation = pearson(&points);
    Ok(QqReport {
        points,
        correlation,
        normal: correlation >= NORMAL_CORRELATION,
    })
}

fn pearson(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in points {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}
