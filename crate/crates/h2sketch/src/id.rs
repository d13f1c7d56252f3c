//! Row interpolative decomposition and the adaptive convergence test.
//!
//! The row ID of `A` selects `k` rows `J` and an interpolation matrix `W` with
//! `W[J, :] = I` such that `A ~ W * A[J, :]`. It is computed as the column ID
//! of the transpose. The truncation rule is the absolute-diagonal criterion of
//! the pivoted QR, identical to the convergence test, so rank decisions and
//! adaptivity decisions cannot disagree.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::qr::col_piv_qr;

/// Result of a row interpolative decomposition.
#[derive(Debug, Clone)]
pub struct IdResult {
    /// Selected row indices, local to the input block, in pivot order.
    pub skeleton: Vec<usize>,
    /// `m x k` interpolation matrix with `interpolation[skeleton, :] = I`.
    pub interpolation: Array2<f64>,
    pub rank: usize,
}

/// Row ID of `a` with absolute tolerance `tol_abs` on the pivoted R diagonal.
pub fn row_id(a: ArrayView2<'_, f64>, tol_abs: f64) -> Result<IdResult> {
    if tol_abs < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "tol_abs must be non-negative, got {tol_abs}"
        )));
    }
    let m = a.nrows();
    let qr = col_piv_qr(a.t());
    let k = qr.rank_at(tol_abs);
    let t = qr.interpolation(k);

    let mut w = Array2::zeros((m, k));
    for (pos, &row) in qr.pivots()[..k].iter().enumerate() {
        w[(row, pos)] = 1.0;
    }
    for (j, &row) in qr.pivots()[k..].iter().enumerate() {
        for i in 0..k {
            w[(row, i)] = t[(i, j)];
        }
    }

    Ok(IdResult { skeleton: qr.pivots()[..k].to_vec(), interpolation: w, rank: k })
}

/// Convergence test for adaptive sampling: the sketch `yloc` (rows x samples)
/// is declared sufficient when the smallest pivoted-QR diagonal magnitude
/// falls below `tol_abs`, or unconditionally when the row count does not
/// exceed the sample count (the sketch already spans the full row space).
pub fn is_converged(yloc: ArrayView2<'_, f64>, tol_abs: f64) -> bool {
    let (m, d) = yloc.dim();
    if m <= d {
        return true;
    }
    col_piv_qr(yloc).min_abs_diag() < tol_abs
}
