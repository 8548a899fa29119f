//! Dense least-squares helpers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Minimum-norm least-squares solution of `x·β ≈ y` via SVD; singular values
/// below `max(rows, cols)·ε·σ_max` are treated as zero.
pub fn lstsq_min_norm(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if x.nrows() != y.len() {
        return Err(Error::invalid(format!(
            "design has {} rows but target has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.ncols() == 0 {
        return Ok(DVector::zeros(0));
    }
    if x.nrows() == 0 {
        return Ok(DVector::zeros(x.ncols()));
    }
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = (x.nrows().max(x.ncols()) as f64) * f64::EPSILON * smax.max(f64::MIN_POSITIVE);
    svd.solve(y, eps)
        .map_err(|e| Error::invalid(format!("least squares failed: {e}")))
}

/// Weighted least squares through the square-root-weight transform.
pub fn weighted_lstsq(x: &DMatrix<f64>, y: &DVector<f64>, w: &[f64]) -> Result<DVector<f64>> {
    let mut xw = x.clone();
    let mut yw = y.clone();
    for (r, &wr) in w.iter().enumerate() {
        let s = wr.max(0.0).sqrt();
        xw.row_mut(r).scale_mut(s);
        yw[r] *= s;
    }
    lstsq_min_norm(&xw, &yw)
}
