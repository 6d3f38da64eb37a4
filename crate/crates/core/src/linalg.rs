//! Small dense least-squares helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SaeError};

const RANK_TOL: f64 = 1e-12;

/// Ordinary least squares `(X'X)^{-1} X'y`; rank-deficient designs are an error.
pub fn ols(rows: &[Vec<f64>], y: &[f64]) -> Result<Vec<f64>> {
    let weights = vec![1.0; y.len()];
    let design = design_matrix(rows)?;
    weighted_least_squares(&design, &weights, y)
        .map(|b| b.iter().copied().collect())
        .map_err(|_| SaeError::Singular("X'X is not of full column rank".into()))
}

pub fn design_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let p = rows.first().map(|r| r.len()).unwrap_or(0);
    if rows.len() < p || p == 0 {
        return Err(SaeError::Singular(format!(
            "{} rows cannot identify {p} coefficients",
            rows.len()
        )));
    }
    Ok(DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]))
}

/// Minimum-norm least squares via SVD; never fails on rank deficiency.
pub fn lstsq_min_norm(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = rows.first().map(|r| r.len()).unwrap_or(0);
    let design = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let rhs = DVector::from_column_slice(y);
    let svd = design.svd(true, true);
    let cutoff = svd.singular_values.max() * 1e-10;
    svd.solve(&rhs, cutoff)
        .map(|b| b.iter().copied().collect())
        .unwrap_or_else(|_| vec![0.0; p])
}

/// Solve `min sum_s w_s (y_s - z_s' a)^2` by Householder QR of the
/// row-weighted, column-scaled design.
pub fn weighted_least_squares(
    design: &DMatrix<f64>,
    weights: &[f64],
    response: &[f64],
) -> Result<DVector<f64>> {
    let (n, k) = design.shape();
    if n < k {
        return Err(SaeError::Singular(format!("{n} observations for {k} coefficients")));
    }
    let mut a = design.clone();
    let mut rhs = DVector::from_column_slice(response);
    for i in 0..n {
        let sw = weights[i].sqrt();
        a.row_mut(i).scale_mut(sw);
        rhs[i] *= sw;
    }
    let mut scale = vec![1.0; k];
    for (j, s) in scale.iter_mut().enumerate() {
        let norm = a.column(j).norm();
        if norm > 0.0 {
            *s = norm;
            a.column_mut(j).unscale_mut(norm);
        }
    }
    let qr = a.qr();
    let r = qr.r();
    let max_diag = (0..k).map(|j| r[(j, j)].abs()).fold(0.0, f64::max);
    if !(max_diag > 0.0) || (0..k).any(|j| r[(j, j)].abs() <= RANK_TOL * max_diag) {
        return Err(SaeError::Singular("weighted design is rank deficient".into()));
    }
    let qty = qr.q().transpose() * rhs;
    let mut coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| SaeError::Singular("triangular solve failed".into()))?;
    for j in 0..k {
        coef[j] /= scale[j];
    }
    if coef.iter().any(|c| !c.is_finite()) {
        return Err(SaeError::Singular("non-finite least-squares solution".into()));
    }
    Ok(coef)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intercept_only_ols_is_the_mean() {
        let rows = vec![vec![1.0]; 4];
        let b = ols(&rows, &[1.0, 2.0, 3.0, 6.0]).unwrap();
        assert!((b[0] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn exact_fit_is_recovered() {
        let rows: Vec<Vec<f64>> = (0..6).map(|i| vec![1.0, i as f64, (i * i) as f64]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 2.0 - r[1] + 0.5 * r[2]).collect();
        let b = ols(&rows, &y).unwrap();
        for (got, want) in b.iter().zip([2.0, -1.0, 0.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn collinear_design_is_singular() {
        let rows: Vec<Vec<f64>> = (0..5).map(|i| vec![1.0, i as f64, 2.0 * i as f64]).collect();
        assert!(matches!(ols(&rows, &[1.0; 5]), Err(SaeError::Singular(_))));
        let b = lstsq_min_norm(&rows, &[1.0; 5]);
        assert!((b[0] - 1.0).abs() < 1e-10);
    }
}
