//! Column-pivoted Householder QR.
//!
//! Unblocked factorization with greedy max-norm pivoting and the usual
//! norm-downdating with a recompute guard. Block sizes in this crate are
//! O(leaf_size x samples), small enough that cache blocking is irrelevant.

use ndarray::{Array2, ArrayView2, s};

/// Packed column-pivoted QR factorization `A P = Q R`.
#[derive(Debug, Clone)]
pub struct ColPivQr {
    /// R in the upper triangle, Householder vectors below the diagonal
    /// (normalized so the implicit leading entry is 1).
    factors: Array2<f64>,
    taus: Vec<f64>,
    /// `pivots[j]` is the original index of the column now at position `j`.
    pivots: Vec<usize>,
    /// `|R[j,j]|` for `j < min(m, n)`; non-increasing by pivoting.
    diag_abs: Vec<f64>,
}

/// Factorizes `a` with greedy max-column-norm pivoting.
pub fn col_piv_qr(a: ArrayView2<'_, f64>) -> ColPivQr {
    let (m, n) = a.dim();
    let k = m.min(n);
    let mut f = a.to_owned();
    let mut pivots: Vec<usize> = (0..n).collect();
    let mut taus = vec![0.0; k];

    let mut xnorms: Vec<f64> = (0..n).map(|j| column_norm(&f, 0, j)).collect();
    let mut pnorms = xnorms.clone();
    let recompute_guard = f64::EPSILON.sqrt();

    for i in 0..k {
        // Greedy pivot: first column of maximal remaining norm.
        let mut pvt = i;
        for j in i + 1..n {
            if pnorms[j] > pnorms[pvt] {
                pvt = j;
            }
        }
        if pvt != i {
            pivots.swap(i, pvt);
            xnorms.swap(i, pvt);
            pnorms.swap(i, pvt);
            for r in 0..m {
                f.swap((r, i), (r, pvt));
            }
        }

        // Householder reflector for column i, rows i...
        let alpha = f[(i, i)];
        let tail_norm = column_norm(&f, i + 1, i);
        let tau = if tail_norm == 0.0 {
            0.0
        } else {
            let beta = -(alpha.hypot(tail_norm)).copysign(alpha);
            let scale = 1.0 / (alpha - beta);
            for r in i + 1..m {
                f[(r, i)] *= scale;
            }
            f[(i, i)] = beta;
            (beta - alpha) / beta
        };
        taus[i] = tau;

        // Apply (I - tau v v^T) to the trailing columns.
        if tau != 0.0 {
            for j in i + 1..n {
                let mut w = f[(i, j)];
                for r in i + 1..m {
                    w += f[(r, i)] * f[(r, j)];
                }
                w *= tau;
                f[(i, j)] -= w;
                for r in i + 1..m {
                    let v = f[(r, i)];
                    f[(r, j)] -= v * w;
                }
            }
        }

        // Downdate remaining column norms, recomputing when cancellation bites.
        for j in i + 1..n {
            if pnorms[j] == 0.0 {
                continue;
            }
            let t = (f[(i, j)].abs() / pnorms[j]).min(1.0);
            let factor = ((1.0 + t) * (1.0 - t)).max(0.0);
            let rel = pnorms[j] / xnorms[j];
            if factor * rel * rel <= recompute_guard {
                pnorms[j] = column_norm(&f, i + 1, j);
                xnorms[j] = pnorms[j];
            } else {
                pnorms[j] *= factor.sqrt();
            }
        }
    }

    let diag_abs = (0..k).map(|i| f[(i, i)].abs()).collect();
    ColPivQr { factors: f, taus, pivots, diag_abs }
}

fn column_norm(f: &Array2<f64>, row_start: usize, j: usize) -> f64 {
    let mut s = 0.0;
    for r in row_start..f.nrows() {
        s += f[(r, j)] * f[(r, j)];
    }
    s.sqrt()
}

impl ColPivQr {
    pub fn nrows(&self) -> usize {
        self.factors.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.factors.ncols()
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    /// Magnitudes of the R diagonal, non-increasing.
    pub fn diag_abs(&self) -> &[f64] {
        &self.diag_abs
    }

    pub fn min_abs_diag(&self) -> f64 {
        self.diag_abs.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Number of leading diagonal magnitudes strictly above `tol_abs`; this is
    /// the truncation rank shared by the interpolative decomposition and the
    /// adaptive convergence test.
    pub fn rank_at(&self, tol_abs: f64) -> usize {
        self.diag_abs.iter().take_while(|d| **d > tol_abs).count()
    }

    /// Thin orthogonal factor, `m x min(m, n)`.
    pub fn q(&self) -> Array2<f64> {
        let m = self.nrows();
        let k = m.min(self.ncols());
        let mut q = Array2::eye(m);
        // Accumulate H_0 H_1 ... H_{k-1} by applying reflectors in reverse.
        for i in (0..k).rev() {
            let tau = self.taus[i];
            if tau == 0.0 {
                continue;
            }
            for j in 0..m {
                let mut w = q[(i, j)];
                for r in i + 1..m {
                    w += self.factors[(r, i)] * q[(r, j)];
                }
                w *= tau;
                q[(i, j)] -= w;
                for r in i + 1..m {
                    let v = self.factors[(r, i)];
                    q[(r, j)] -= v * w;
                }
            }
        }
        q.slice(s![.., ..k]).to_owned()
    }

    /// Upper-triangular factor, `min(m, n) x n`.
    pub fn r(&self) -> Array2<f64> {
        let k = self.nrows().min(self.ncols());
        let mut r = Array2::zeros((k, self.ncols()));
        for i in 0..k {
            for j in i..self.ncols() {
                r[(i, j)] = self.factors[(i, j)];
            }
        }
        r
    }

    /// Interpolation factor `T = R1^{-1} R2` for the leading `k` pivots.
    pub fn interpolation(&self, k: usize) -> Array2<f64> {
        let n = self.ncols();
        debug_assert!(k <= self.diag_abs.len());
        let mut t = Array2::zeros((k, n - k));
        for j in 0..n - k {
            for i in (0..k).rev() {
                let mut v = self.factors[(i, k + j)];
                for l in i + 1..k {
                    v -= self.factors[(i, l)] * t[(l, j)];
                }
                t[(i, j)] = v / self.factors[(i, i)];
            }
        }
        t
    }
}
