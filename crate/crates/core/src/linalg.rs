//! Dense solve helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{GdmError, Result};

/// Condition estimates above this switch the solve to a pivoted QR.
pub const CONDITION_FALLBACK: f64 = 1e12;

/// Solve `a x = b` for symmetric positive-definite `a`.
///
/// Uses a Cholesky factorization; if that fails or the diagonal-ratio
/// condition estimate exceeds [`CONDITION_FALLBACK`], falls back to a
/// column-pivoted QR decomposition.
pub fn solve_spd(a: DMatrix<f64>, b: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    if let Some(chol) = a.clone().cholesky() {
        let cond = cholesky_condition(chol.l_dirty());
        if cond <= CONDITION_FALLBACK {
            return Ok(chol.solve(b));
        }
    }
    solve_pivoted(a, b, context)
}

pub fn solve_spd_vec(a: DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    let bm = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    let x = solve_spd(a, &bm, context)?;
    Ok(x.column(0).into_owned())
}

/// Column-pivoted QR solve for general square systems.
pub fn solve_pivoted(a: DMatrix<f64>, b: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let qr = a.col_piv_qr();
    let r = qr.r();
    let condition = triangular_condition(&r);
    if !condition.is_finite() || condition > 1e15 {
        return Err(GdmError::Singular { context, condition });
    }
    qr.solve(b).ok_or(GdmError::Singular { context, condition })
}

/// Squared ratio of the extreme diagonal entries of a Cholesky factor.
/// A cheap lower bound on the 2-norm condition number.
pub fn cholesky_condition(l: &DMatrix<f64>) -> f64 {
    let (lo, hi) = diag_extremes(l);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).powi(2)
    }
}

fn triangular_condition(r: &DMatrix<f64>) -> f64 {
    let (lo, hi) = diag_extremes(r);
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

fn diag_extremes(m: &DMatrix<f64>) -> (f64, f64) {
    let k = m.nrows().min(m.ncols());
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for i in 0..k {
        let v = m[(i, i)].abs();
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if k == 0 {
        (1.0, 1.0)
    } else {
        (lo, hi)
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population (1/n) variance.
pub fn population_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spd_solve_matches_direct() {
        let a = DMatrix::from_row_slice(2, 2, &[4.0, 1.0, 1.0, 3.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let x = solve_spd(a.clone(), &b, "test").unwrap();
        assert!((&a * &x - &b).norm() < 1e-14);
    }

    #[test]
    fn ill_conditioned_falls_back_to_qr() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-13]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1e-13]);
        let x = solve_spd(a, &b, "test").unwrap();
        assert!((x[(0, 0)] - 1.0).abs() < 1e-10);
        assert!((x[(1, 0)] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn exactly_singular_is_an_error() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 1.0]);
        assert!(matches!(
            solve_spd(a, &b, "test"),
            Err(GdmError::Singular { .. })
        ));
    }
}
