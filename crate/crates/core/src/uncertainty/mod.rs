//! Analytical uncertainty of the sensitivity coefficients.
//!
//! Input uncertainty (admittance elements and measured voltages) is pushed to
//! the entries of `H`, then through the inverse, then onto `x = H^-1 z`.
//! Variances are carried throughout; standard deviations are only formed on
//! output.

pub mod inverse;
pub mod noise;
pub mod propagate;

use std::fmt;
use std::time::{Duration, Instant, SystemTime};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::squared;
use crate::loadflow::GridState;
use crate::network::AdmittanceMatrix;
use crate::sensitivity::{SensitivityProblem, SensitivityResult};

pub use inverse::{
    inverse_cross_covariance, inverse_self_variance, inverse_self_variance_reference,
    InverseVariance,
};
pub use noise::{
    it_class_to_polar, project_polar_noise, CartesianNoiseSpec, ItClass, ItClassLimits,
    MagnitudeScale, NoiseConfig, NoiseLevel, PolarNoiseSpec, ProjectionForm,
};
pub use propagate::{propagate_to_h, AdmittanceUncertainty, HVariance, PropagationOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Analytical,
    MonteCarlo,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Analytical => "analytical",
            Method::MonteCarlo => "monte-carlo",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metadata {
    /// Free-form description of the noise inputs.
    pub description: String,
    pub runtime: Duration,
    pub created: SystemTime,
}

impl Metadata {
    fn new(description: impl Into<String>, runtime: Duration) -> Self {
        Self {
            description: description.into(),
            runtime,
            created: SystemTime::now(),
        }
    }
}

/// Per-coefficient variance, laid out like `x`.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyResult {
    pub variance: DMatrix<f64>,
    pub method: Method,
    pub metadata: Metadata,
}

impl UncertaintyResult {
    pub fn std(&self) -> DMatrix<f64> {
        self.variance.map(f64::sqrt)
    }
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::Dimension(format!(
            "{name} is {:?}, expected ({n}, {n})",
            m.shape()
        )));
    }
    Ok(())
}

/// Row of the single `+-1` entry of a column, if it has that shape.
fn unit_row(z: &DMatrix<f64>, c: usize) -> Option<usize> {
    let mut row = None;
    for (r, v) in z.column(c).iter().enumerate() {
        if *v == 0.0 {
            continue;
        }
        if v.abs() != 1.0 || row.is_some() {
            return None;
        }
        row = Some(r);
    }
    row
}

/// `var(x)_ic = sum_j var(A)_ij z_jc^2` for a constant `z`.
///
/// For unit-indicator columns the result must be a copy of a column of
/// `var(A)`; that is checked.
pub fn coefficient_variance(
    h_inv: &DMatrix<f64>,
    iv: &InverseVariance,
    z: &DMatrix<f64>,
) -> Result<UncertaintyResult> {
    let n = h_inv.nrows();
    check_square("inverse", h_inv, n)?;
    check_square("inverse variance", &iv.var, n)?;
    check_square("z", z, n)?;
    let variance = &iv.var * squared(z);
    for c in 0..n {
        if let Some(j) = unit_row(z, c) {
            if variance.column(c) != iv.var.column(j) {
                return Err(Error::Dimension(format!(
                    "variance of column {c} does not match inverse column {j}"
                )));
            }
        }
    }
    Ok(UncertaintyResult {
        variance,
        method: Method::Analytical,
        metadata: Metadata::new("constant right-hand side", Duration::ZERO),
    })
}

/// `var(x)_ic = sum_j (A_ij^2 var(z)_jc + var(A)_ij z_jc^2)`.
pub fn general_variance(
    h_inv: &DMatrix<f64>,
    iv: &InverseVariance,
    z: &DMatrix<f64>,
    zv: &DMatrix<f64>,
) -> Result<UncertaintyResult> {
    let n = h_inv.nrows();
    check_square("inverse", h_inv, n)?;
    check_square("inverse variance", &iv.var, n)?;
    check_square("z", z, n)?;
    check_square("z variance", zv, n)?;
    if zv.iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::Noise("negative variance of z".into()));
    }
    let variance = squared(h_inv) * zv + &iv.var * squared(z);
    Ok(UncertaintyResult {
        variance,
        method: Method::Analytical,
        metadata: Metadata::new("uncertain right-hand side", Duration::ZERO),
    })
}

/// Every intermediate of one analytical propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticalOutput {
    pub h_variance: HVariance,
    pub inverse: InverseVariance,
    pub result: UncertaintyResult,
}

/// `(Y, E)` uncertainty to coefficient variance in one call.
pub fn analytical(
    problem: &SensitivityProblem,
    solution: &SensitivityResult,
    y: &AdmittanceMatrix,
    state: &GridState,
    yu: &AdmittanceUncertainty,
    en: &CartesianNoiseSpec,
    options: PropagationOptions,
) -> Result<AnalyticalOutput> {
    let start = Instant::now();
    let h_variance = propagate_to_h(problem, y, state, yu, en, options)?;
    let inverse = inverse_self_variance(&solution.h_inv, &h_variance)?;
    let mut result = coefficient_variance(&solution.h_inv, &inverse, &problem.z)?;
    let level = yu
        .relative_level
        .map(|l| format!("{}%", l * 100.0))
        .unwrap_or_else(|| "per-element".into());
    result.metadata = Metadata::new(
        format!(
            "admittance std {level}, max voltage std re {:.3e} im {:.3e}",
            en.var_re.max().sqrt(),
            en.var_im.max().sqrt()
        ),
        start.elapsed(),
    );
    Ok(AnalyticalOutput {
        h_variance,
        inverse,
        result,
    })
}
