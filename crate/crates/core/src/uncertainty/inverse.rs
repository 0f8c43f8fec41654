//! Variance of the entries of `H^-1` induced by independent entry-wise
//! uncertainty in `H`.
//!
//! ```text
//! var(A_mn)        = sum_i sum_j A_mi^2 var(H_ij) A_jn^2
//! cov(A_mn, A_ab)  = sum_i sum_j A_mi A_ai var(H_ij) A_jn A_jb
//! ```
//!
//! with `A = H^-1`. Only self-variances are stored; covariances are computed
//! on demand because the full table has `n^4` entries.

use nalgebra::DMatrix;

use super::propagate::HVariance;
use crate::error::{Error, Result};
use crate::linalg::squared;

#[derive(Debug, Clone, PartialEq)]
pub struct InverseVariance {
    pub var: DMatrix<f64>,
    pub h_inv: DMatrix<f64>,
    pub h_var: HVariance,
}

impl InverseVariance {
    /// `cov(A[mn], A[ab])`.
    pub fn covariance(&self, mn: (usize, usize), ab: (usize, usize)) -> Result<f64> {
        inverse_cross_covariance(&self.h_inv, &self.h_var, mn, ab)
    }
}

fn check_shapes(h_inv: &DMatrix<f64>, h_var: &DMatrix<f64>) -> Result<()> {
    if !h_inv.is_square() || h_inv.shape() != h_var.shape() {
        return Err(Error::Dimension(format!(
            "inverse is {:?} but variances are {:?}",
            h_inv.shape(),
            h_var.shape()
        )));
    }
    Ok(())
}

/// Self-variances as `(A o A) var(H) (A o A)`.
pub fn inverse_self_variance(h_inv: &DMatrix<f64>, hv: &HVariance) -> Result<InverseVariance> {
    check_shapes(h_inv, &hv.var)?;
    let a2 = squared(h_inv);
    let var = &a2 * &hv.var * &a2;
    Ok(InverseVariance {
        var,
        h_inv: h_inv.clone(),
        h_var: hv.clone(),
    })
}

/// Self-variances by the quadruple loop, as a reference for the matrix form.
pub fn inverse_self_variance_reference(
    h_inv: &DMatrix<f64>,
    hv: &HVariance,
) -> Result<InverseVariance> {
    check_shapes(h_inv, &hv.var)?;
    let n = h_inv.nrows();
    let mut var = DMatrix::zeros(n, n);
    for m in 0..n {
        for nn in 0..n {
            let mut acc = 0.0;
            for i in 0..n {
                for j in 0..n {
                    acc += (h_inv[(m, i)] * h_inv[(m, i)])
                        * hv.var[(i, j)]
                        * (h_inv[(j, nn)] * h_inv[(j, nn)]);
                }
            }
            var[(m, nn)] = acc;
        }
    }
    Ok(InverseVariance {
        var,
        h_inv: h_inv.clone(),
        h_var: hv.clone(),
    })
}

/// `cov(A[mn], A[ab])`.
///
/// Summed in the same order and grouping as the reference self-variance, so
/// `cov(A, A)` reproduces it exactly.
pub fn inverse_cross_covariance(
    h_inv: &DMatrix<f64>,
    hv: &HVariance,
    mn: (usize, usize),
    ab: (usize, usize),
) -> Result<f64> {
    let h_var = &hv.var;
    check_shapes(h_inv, h_var)?;
    let n = h_inv.nrows();
    for idx in [mn.0, mn.1, ab.0, ab.1] {
        if idx >= n {
            return Err(Error::IndexOutOfRange { index: idx, dim: n });
        }
    }
    let (m, nn) = mn;
    let (a, b) = ab;
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (h_inv[(m, i)] * h_inv[(a, i)]) * h_var[(i, j)] * (h_inv[(j, nn)] * h_inv[(j, b)]);
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_case() {
        let h = 2.0;
        let hv = HVariance { var: DMatrix::from_element(1, 1, 0.09) };
        let inv = DMatrix::from_element(1, 1, 1.0 / h);
        let iv = inverse_self_variance(&inv, &hv).unwrap();
        assert_relative_eq!(iv.var[(0, 0)], 0.09 / h.powi(4), max_relative = 1e-15);
    }

    #[test]
    fn zero_variance_in_zero_out() {
        let inv = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let hv = HVariance { var: DMatrix::zeros(2, 2) };
        let iv = inverse_self_variance(&inv, &hv).unwrap();
        assert!(iv.var.iter().all(|v| *v == 0.0));
        assert_eq!(iv.covariance((0, 1), (1, 0)).unwrap(), 0.0);
    }

    #[test]
    fn covariance_of_entry_with_itself_is_its_variance() {
        let inv = DMatrix::from_row_slice(3, 3, &[1.0, -0.5, 0.2, 0.3, 2.0, -1.1, 0.7, 0.4, 1.5]);
        let hv = HVariance {
            var: DMatrix::from_fn(3, 3, |i, j| 0.01 * (1 + i + 2 * j) as f64),
        };
        let reference = inverse_self_variance_reference(&inv, &hv).unwrap();
        for m in 0..3 {
            for n in 0..3 {
                assert_eq!(reference.covariance((m, n), (m, n)).unwrap(), reference.var[(m, n)]);
            }
        }
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let inv = DMatrix::identity(2, 2);
        let hv = HVariance { var: DMatrix::zeros(2, 2) };
        assert!(matches!(
            inverse_cross_covariance(&inv, &hv, (0, 2), (0, 0)),
            Err(Error::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let inv = DMatrix::identity(2, 2);
        let hv = HVariance { var: DMatrix::zeros(3, 3) };
        assert!(inverse_self_variance(&inv, &hv).is_err());
    }
}
