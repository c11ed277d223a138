//! Small dense linear-algebra helpers over `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve(a: &DMatrix<f64>, b: &[f64]) -> Option<Vec<f64>> {
    let x = a.clone().lu().solve(&DVector::from_column_slice(b))?;
    x.iter().all(|v| v.is_finite()).then(|| x.as_slice().to_vec())
}

pub fn inverse(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = a.clone().lu().try_inverse()?;
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

/// Least squares of `y` on the rows of `x` through the normal equations.
///
/// The cross-product matrix is scaled to unit diagonal before factorizing so
/// that the rank check does not depend on covariate units.
pub fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> Result<Vec<f64>> {
    let k = x.ncols();
    if x.nrows() < k {
        return Err(Error::TooFewObservations(format!(
            "{} rows for {k} columns",
            x.nrows()
        )));
    }
    let xtx = x.transpose() * x;
    let xty = x.transpose() * DVector::from_column_slice(y);
    let coef = solve_spd_checked(&xtx, xty.as_slice())?;
    Ok(coef)
}

/// Solves a symmetric positive semi-definite system, reporting rank deficiency
/// when the scaled matrix has reciprocal condition below `1e-12`.
pub fn solve_spd_checked(a: &DMatrix<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let k = a.nrows();
    let scale: Vec<f64> = (0..k).map(|j| a[(j, j)].sqrt()).collect();
    if let Some(j) = scale.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::RankDeficient(format!("column {j} is identically zero")));
    }
    let scaled = DMatrix::from_fn(k, k, |i, j| a[(i, j)] / (scale[i] * scale[j]));
    let eig = scaled.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !(min > 1e-12 * max) {
        return Err(Error::RankDeficient(format!(
            "reciprocal condition {:.3e}",
            min / max
        )));
    }
    let rhs: Vec<f64> = (0..k).map(|j| b[j] / scale[j]).collect();
    let z = scaled
        .cholesky()
        .ok_or_else(|| Error::RankDeficient("not positive definite".into()))?
        .solve(&DVector::from_vec(rhs));
    Ok((0..k).map(|j| z[j] / scale[j]).collect())
}

/// Checks that the listed columns of a row-major design have full column rank.
pub fn check_full_rank(rows: impl Iterator<Item = Vec<f64>>, k: usize) -> Result<()> {
    let mut xtx = DMatrix::<f64>::zeros(k, k);
    for r in rows {
        for a in 0..k {
            for b in 0..k {
                xtx[(a, b)] += r[a] * r[b];
            }
        }
    }
    solve_spd_checked(&xtx, &vec![0.0; k]).map(|_| ())
}
