//! Small dense helpers on top of nalgebra.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Maximum absolute row sum.
pub fn norm_inf(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Maximum absolute column sum.
pub fn norm_1(m: &DMatrix<f64>) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Invert a square matrix by LU and return the inverse with its 1-norm
/// condition number. Fails when the reciprocal condition is below `min_rcond`.
pub fn invert_checked(m: &DMatrix<f64>, min_rcond: f64) -> Result<(DMatrix<f64>, f64)> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "cannot invert a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    let inv = match m.clone().lu().try_inverse() {
        Some(inv) => inv,
        None => return Err(Error::NotInvertible { rcond: 0.0 }),
    };
    let cond = norm_1(m) * norm_1(&inv);
    let rcond = if cond.is_finite() { 1.0 / cond } else { 0.0 };
    if !(rcond >= min_rcond) {
        return Err(Error::NotInvertible { rcond });
    }
    Ok((inv, cond))
}

/// Entrywise square.
pub fn squared(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(|v| v * v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dmatrix;

    #[test]
    fn condition_of_diagonal() {
        let (inv, cond) = invert_checked(&dmatrix![2.0, 0.0; 0.0, 0.5], 1e-12).unwrap();
        assert_eq!(inv, dmatrix![0.5, 0.0; 0.0, 2.0]);
        assert_eq!(cond, 4.0);
    }

    #[test]
    fn near_singular_is_rejected() {
        let m = dmatrix![1.0, 1.0; 1.0, 1.0 + 1e-15];
        assert!(matches!(
            invert_checked(&m, 1e-13),
            Err(Error::NotInvertible { .. })
        ));
    }
}
