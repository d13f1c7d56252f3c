//! Entry evaluation oracles: batched generation of arbitrary subblocks of the
//! target matrix.
//!
//! Evaluators operate in tree (permuted) ordering so the construction never
//! touches permutation logic; [`OriginalOrderEvaluator`] adapts an evaluator
//! back to original indices when callers need it.

use std::sync::Arc;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::par;

/// Kernel functions used by the compression experiments.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `exp(-|x - y| / correlation_length)`.
    ExponentialCovariance { correlation_length: f64 },
    /// `cos(wavenumber * |x - y|) / |x - y|`, with the diagonal set to zero.
    HelmholtzIe { wavenumber: f64 },
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        let (name, v) = match self {
            KernelSpec::ExponentialCovariance { correlation_length } => {
                ("correlation_length", *correlation_length)
            }
            KernelSpec::HelmholtzIe { wavenumber } => ("wavenumber", *wavenumber),
        };
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
        }
    }

    /// Kernel value for a pair of points. The IE kernel is defined only off the
    /// diagonal; `K(x, x) = 0` by convention, applied identically in samplers
    /// and evaluators.
    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let mut s = 0.0;
        for d in 0..x.len() {
            let t = x[d] - y[d];
            s += t * t;
        }
        let r = s.sqrt();
        match self {
            KernelSpec::ExponentialCovariance { correlation_length } => {
                (-r / correlation_length).exp()
            }
            KernelSpec::HelmholtzIe { wavenumber } => {
                if r == 0.0 {
                    0.0
                } else {
                    (wavenumber * r).cos() / r
                }
            }
        }
    }
}

/// Batched entry oracle over tree-ordered indices.
pub trait EntryEvaluator: Sync {
    /// Dimension of the underlying operator.
    fn n(&self) -> usize;

    /// Dense block `K[rows, cols]`. Indices are validated by [`generate_blocks`].
    fn eval_block(&self, rows: &[usize], cols: &[usize]) -> Array2<f64>;
}

/// Evaluates all requested blocks in one logical call; block `m` at `(i, j)`
/// is the kernel over the Cartesian pair. Out-of-range indices are rejected
/// with the offending request named.
pub fn generate_blocks(
    ev: &dyn EntryEvaluator,
    requests: &[(Vec<usize>, Vec<usize>)],
) -> Result<Vec<Array2<f64>>> {
    let n = ev.n();
    for (req, (rows, cols)) in requests.iter().enumerate() {
        for &i in rows.iter().chain(cols.iter()) {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n, request: req });
            }
        }
    }
    Ok(par::map_slice(requests, |(rows, cols)| ev.eval_block(rows, cols)))
}

/// Kernel-backed evaluator holding tree-ordered point coordinates.
pub struct KernelEvaluator {
    spec: KernelSpec,
    points: PointSet,
}

impl KernelEvaluator {
    /// `points` must already be in tree order (see [`PointSet::permuted`]).
    pub fn new(spec: KernelSpec, points: PointSet) -> Result<Self> {
        spec.validate()?;
        Ok(Self { spec, points })
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }

    pub fn points(&self) -> &PointSet {
        &self.points
    }
}

impl EntryEvaluator for KernelEvaluator {
    fn n(&self) -> usize {
        self.points.len()
    }

    fn eval_block(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), cols.len()));
        for (a, &i) in rows.iter().enumerate() {
            let x = self.points.point(i);
            for (b, &j) in cols.iter().enumerate() {
                out[(a, b)] = self.spec.eval(x, self.points.point(j));
            }
        }
        out
    }
}

/// Evaluator over an explicit dense matrix, optionally viewed through a
/// permutation (`entry(i, j) = matrix[perm[i], perm[j]]`).
pub struct DenseEvaluator {
    matrix: Arc<Array2<f64>>,
    perm: Option<Arc<Vec<usize>>>,
}

impl DenseEvaluator {
    pub fn new(matrix: Arc<Array2<f64>>) -> Self {
        Self { matrix, perm: None }
    }

    pub fn permuted(matrix: Arc<Array2<f64>>, perm: Arc<Vec<usize>>) -> Self {
        Self { matrix, perm: Some(perm) }
    }
}

impl EntryEvaluator for DenseEvaluator {
    fn n(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval_block(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        let map = |i: usize| self.perm.as_ref().map_or(i, |p| p[i]);
        Array2::from_shape_fn((rows.len(), cols.len()), |(a, b)| {
            self.matrix[(map(rows[a]), map(cols[b]))]
        })
    }
}

/// Adapter translating original-order indices to an evaluator working in tree
/// order: `entry(i, j) = inner(inv[i], inv[j])` where `inv` inverts the tree
/// permutation.
pub struct OriginalOrderEvaluator<E> {
    inner: E,
    inv_perm: Vec<usize>,
}

impl<E: EntryEvaluator> OriginalOrderEvaluator<E> {
    /// `perm` is the tree permutation (tree index -> original index).
    pub fn new(inner: E, perm: &[usize]) -> Self {
        let mut inv_perm = vec![0; perm.len()];
        for (tree_idx, &orig) in perm.iter().enumerate() {
            inv_perm[orig] = tree_idx;
        }
        Self { inner, inv_perm }
    }
}

impl<E: EntryEvaluator> EntryEvaluator for OriginalOrderEvaluator<E> {
    fn n(&self) -> usize {
        self.inner.n()
    }

    fn eval_block(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        let rows: Vec<usize> = rows.iter().map(|&i| self.inv_perm[i]).collect();
        let cols: Vec<usize> = cols.iter().map(|&j| self.inv_perm[j]).collect();
        self.inner.eval_block(&rows, &cols)
    }
}

/// Assembles the full dense matrix of an evaluator, parallelized over row
/// chunks. Intended for desk-scale oracles.
pub fn dense_matrix(ev: &dyn EntryEvaluator, n: usize) -> Array2<f64> {
    let cols: Vec<usize> = (0..n).collect();
    let chunk = 64;
    let chunks: Vec<(usize, usize)> =
        (0..n.div_ceil(chunk)).map(|c| (c * chunk, ((c + 1) * chunk).min(n))).collect();
    let parts = par::map_slice(&chunks, |&(lo, hi)| {
        let rows: Vec<usize> = (lo..hi).collect();
        ev.eval_block(&rows, &cols)
    });
    let mut out = Array2::zeros((n, n));
    for (&(lo, hi), part) in chunks.iter().zip(parts) {
        out.slice_mut(ndarray::s![lo..hi, ..]).assign(&part);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cov() -> KernelSpec {
        KernelSpec::ExponentialCovariance { correlation_length: 0.2 }
    }

    #[test]
    fn covariance_diagonal_is_one() {
        let x = [0.3, 0.4, 0.5];
        assert_eq!(cov().eval(&x, &x), 1.0);
    }

    #[test]
    fn covariance_at_one_correlation_length() {
        let x = [0.0, 0.0, 0.0];
        let y = [0.2, 0.0, 0.0];
        assert!((cov().eval(&x, &y) - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn ie_direct_substitution() {
        let k = KernelSpec::HelmholtzIe { wavenumber: 3.0 };
        let x = [0.0, 0.0, 0.0];
        let y = [std::f64::consts::PI / 3.0, 0.0, 0.0];
        let expected = -3.0 / std::f64::consts::PI;
        assert!((k.eval(&x, &y) - expected).abs() < 1e-15);
        assert_eq!(k.eval(&x, &x), 0.0);
    }

    #[test]
    fn kernel_symmetry_is_exact() {
        let ps = PointSet::uniform_random(64, 3, 3).unwrap();
        for spec in [cov(), KernelSpec::HelmholtzIe { wavenumber: 3.0 }] {
            for i in (0..64).step_by(7) {
                for j in (0..64).step_by(5) {
                    let a = spec.eval(ps.point(i), ps.point(j));
                    let b = spec.eval(ps.point(j), ps.point(i));
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn covariance_entries_in_unit_interval() {
        let ps = PointSet::uniform_random(128, 3, 4).unwrap();
        let ev = KernelEvaluator::new(cov(), ps).unwrap();
        let all: Vec<usize> = (0..128).collect();
        let block = ev.eval_block(&all, &all);
        for ((i, j), v) in block.indexed_iter() {
            assert!(*v > 0.0 && *v <= 1.0);
            if i == j {
                assert_eq!(*v, 1.0);
            }
        }
    }

    #[test]
    fn empty_request_list() {
        let ps = PointSet::grid(8, 3).unwrap();
        let ev = KernelEvaluator::new(cov(), ps).unwrap();
        assert!(generate_blocks(&ev, &[]).unwrap().is_empty());
    }

    #[test]
    fn single_entry_block() {
        let ps = PointSet::grid(8, 3).unwrap();
        let ev = KernelEvaluator::new(cov(), ps).unwrap();
        let blocks = generate_blocks(&ev, &[(vec![0], vec![0])]).unwrap();
        assert_eq!(blocks[0][(0, 0)], 1.0);
    }

    #[test]
    fn out_of_range_names_the_request() {
        let ps = PointSet::grid(8, 3).unwrap();
        let ev = KernelEvaluator::new(cov(), ps).unwrap();
        let err = generate_blocks(&ev, &[(vec![0], vec![0]), (vec![1], vec![9])]).unwrap_err();
        match err {
            Error::IndexOutOfRange { index, n, request } => {
                assert_eq!((index, n, request), (9, 8, 1));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn batch_matches_scalar_bit_for_bit() {
        let ps = PointSet::uniform_random(32, 3, 5).unwrap();
        let ev = KernelEvaluator::new(cov(), ps.clone()).unwrap();
        let rows = vec![1, 5, 17];
        let cols = vec![0, 31, 2, 9];
        let block = generate_blocks(&ev, &[(rows.clone(), cols.clone())]).unwrap();
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                let direct = cov().eval(ps.point(i), ps.point(j));
                assert_eq!(block[0][(a, b)].to_bits(), direct.to_bits());
            }
        }
    }

    #[test]
    fn dense_evaluator_permutation_view() {
        let m = Arc::new(Array2::from_shape_fn((4, 4), |(i, j)| (i * 10 + j) as f64));
        let perm = Arc::new(vec![2usize, 0, 3, 1]);
        let ev = DenseEvaluator::permuted(m, perm);
        let b = ev.eval_block(&[0, 1], &[2, 3]);
        assert_eq!(b[(0, 0)], 23.0);
        assert_eq!(b[(1, 1)], 1.0);
    }

    #[test]
    fn original_order_adapter_round_trips() {
        let ps = PointSet::uniform_random(32, 3, 6).unwrap();
        let tree = crate::cluster::ClusterTree::build(&ps, 8).unwrap();
        let permuted = ps.permuted(tree.perm());
        let ev = KernelEvaluator::new(cov(), permuted).unwrap();
        let orig = OriginalOrderEvaluator::new(ev, tree.perm());
        // Entry (i, j) in original order must match the kernel on original points.
        let b = orig.eval_block(&[3, 20], &[7]);
        assert!((b[(0, 0)] - cov().eval(ps.point(3), ps.point(7))).abs() < 1e-15);
        assert!((b[(1, 0)] - cov().eval(ps.point(20), ps.point(7))).abs() < 1e-15);
    }
}
