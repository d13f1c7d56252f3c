//! Black-box multiply operators `Y = K * Omega`.
//!
//! Samplers are the only global access the construction has to the target
//! matrix. All implementations are deterministic: parallel row chunks each
//! own their output rows and accumulate in a fixed order.

use std::sync::Arc;

use ndarray::{s, Array2, ArrayView2};

use crate::geometry::PointSet;
use crate::kernel::KernelSpec;
use crate::par;

/// A symmetric linear operator applied to multi-vectors.
pub trait Sampler: Sync {
    /// Operator dimension.
    fn n(&self) -> usize;

    /// Computes `K * x` for an `n x d` multi-vector.
    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64>;
}

const ROW_CHUNK: usize = 128;

fn row_chunks(n: usize) -> Vec<(usize, usize)> {
    (0..n.div_ceil(ROW_CHUNK))
        .map(|c| (c * ROW_CHUNK, ((c + 1) * ROW_CHUNK).min(n)))
        .collect()
}

/// Sampler over an explicit dense matrix, optionally viewed through the tree
/// permutation (`perm[tree index] = original index`).
pub struct DenseSampler {
    matrix: Arc<Array2<f64>>,
    perm: Option<Arc<Vec<usize>>>,
}

impl DenseSampler {
    pub fn new(matrix: Arc<Array2<f64>>) -> Self {
        Self { matrix, perm: None }
    }

    pub fn permuted(matrix: Arc<Array2<f64>>, perm: Arc<Vec<usize>>) -> Self {
        Self { matrix, perm: Some(perm) }
    }
}

impl Sampler for DenseSampler {
    fn n(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = self.n();
        assert_eq!(x.nrows(), n, "sampler input has {} rows, expected {n}", x.nrows());
        // Scatter into original order, multiply, gather back.
        let xo = match &self.perm {
            None => x.to_owned(),
            Some(p) => {
                let mut xo = Array2::zeros(x.raw_dim());
                for (tree, &orig) in p.iter().enumerate() {
                    xo.row_mut(orig).assign(&x.row(tree));
                }
                xo
            }
        };
        let chunks = row_chunks(n);
        let parts = par::map_slice(&chunks, |&(lo, hi)| {
            self.matrix.slice(s![lo..hi, ..]).dot(&xo)
        });
        let mut yo = Array2::zeros(x.raw_dim());
        for (&(lo, hi), part) in chunks.iter().zip(parts) {
            yo.slice_mut(s![lo..hi, ..]).assign(&part);
        }
        match &self.perm {
            None => yo,
            Some(p) => {
                let mut y = Array2::zeros(x.raw_dim());
                for (tree, &orig) in p.iter().enumerate() {
                    y.row_mut(tree).assign(&yo.row(orig));
                }
                y
            }
        }
    }
}

/// Matrix-free kernel sampler evaluating entries on the fly; `O(n^2 d)` per
/// apply but only `O(n d)` memory. Used to bootstrap fast samplers at sizes
/// where the dense matrix does not fit.
pub struct KernelSampler {
    spec: KernelSpec,
    points: PointSet,
}

impl KernelSampler {
    /// `points` must be in tree order.
    pub fn new(spec: KernelSpec, points: PointSet) -> Self {
        Self { spec, points }
    }
}

impl Sampler for KernelSampler {
    fn n(&self) -> usize {
        self.points.len()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = self.n();
        let d = x.ncols();
        assert_eq!(x.nrows(), n, "sampler input has {} rows, expected {n}", x.nrows());
        let x = x.as_standard_layout();
        let xs = x.as_slice().expect("standard layout");
        let chunks = row_chunks(n);
        let parts = par::map_slice(&chunks, |&(lo, hi)| {
            let mut block = vec![0.0; (hi - lo) * d];
            for i in lo..hi {
                let pi = self.points.point(i);
                let acc = &mut block[(i - lo) * d..(i - lo + 1) * d];
                for j in 0..n {
                    let k = self.spec.eval(pi, self.points.point(j));
                    let xr = &xs[j * d..(j + 1) * d];
                    for c in 0..d {
                        acc[c] += k * xr[c];
                    }
                }
            }
            block
        });
        let mut y = Array2::zeros((n, d));
        for (&(lo, hi), part) in chunks.iter().zip(parts) {
            y.slice_mut(s![lo..hi, ..])
                .assign(&ArrayView2::from_shape((hi - lo, d), &part).unwrap());
        }
        y
    }
}

/// Symmetric rank-`p` update `U * U^T`.
#[derive(Debug, Clone)]
pub struct LowRankUpdate {
    factor: Array2<f64>,
}

impl LowRankUpdate {
    pub fn new(factor: Array2<f64>) -> Self {
        assert!(factor.iter().all(|v| v.is_finite()), "low-rank factor must be finite");
        Self { factor }
    }

    /// Gaussian factor drawn from the counter-based generator.
    pub fn random(n: usize, rank: usize, seed: u64) -> Self {
        Self::new(Array2::from_shape_fn((n, rank), |(i, j)| {
            crate::rng::normal(seed, crate::rng::stream::LOW_RANK, 0, i as u64, j as u64)
        }))
    }

    pub fn n(&self) -> usize {
        self.factor.nrows()
    }

    pub fn rank(&self) -> usize {
        self.factor.ncols()
    }

    pub fn factor(&self) -> &Array2<f64> {
        &self.factor
    }

    /// `U * (U^T x)`.
    pub fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.factor.dot(&self.factor.t().dot(&x))
    }

    /// Entries of `U * U^T` over a Cartesian index pair.
    pub fn eval_block(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        let p = self.rank();
        Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| {
            let mut s = 0.0;
            for k in 0..p {
                s += self.factor[(rows[a], k)] * self.factor[(cols[b], k)];
            }
            s
        })
    }
}

/// Base operator plus a symmetric low-rank product.
pub struct UpdatedSampler<S: Sampler> {
    base: S,
    update: LowRankUpdate,
}

impl<S: Sampler> UpdatedSampler<S> {
    pub fn new(base: S, update: LowRankUpdate) -> Self {
        assert_eq!(base.n(), update.n(), "update dimension mismatch");
        Self { base, update }
    }
}

impl<S: Sampler> Sampler for UpdatedSampler<S> {
    fn n(&self) -> usize {
        self.base.n()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = self.base.apply(x);
        if self.update.rank() > 0 {
            y += &self.update.apply(x);
        }
        y
    }
}

/// Diagonal operator, mostly for calibration tests.
pub struct DiagSampler {
    diag: Vec<f64>,
}

impl DiagSampler {
    pub fn new(diag: Vec<f64>) -> Self {
        Self { diag }
    }

    pub fn identity(n: usize) -> Self {
        Self { diag: vec![1.0; n] }
    }
}

impl Sampler for DiagSampler {
    fn n(&self) -> usize {
        self.diag.len()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = x.to_owned();
        for (i, mut row) in y.outer_iter_mut().enumerate() {
            row *= self.diag[i];
        }
        y
    }
}
