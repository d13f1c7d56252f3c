//! The H^2 representation: nested bases, couplings and dense leaves.
//!
//! Admissible blocks are `U_s B_{s,t} U_t^T` with bases shared per cluster;
//! inner-cluster bases exist only through transfer matrices. The matrix is
//! immutable after construction and all products are deterministic: per-node
//! accumulation runs over partners in ascending index order.

pub mod io;

use std::collections::{BTreeMap, HashMap};

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::cluster::ClusterTree;
use crate::error::{Error, Result};
use crate::kernel::EntryEvaluator;
use crate::mtree::{BlockStatus, MatrixTree};
use crate::par;
use crate::sampler::{LowRankUpdate, Sampler, UpdatedSampler};

/// Default guard for dense expansion oracles (16384^2 doubles = 2 GiB).
pub const DENSE_GUARD: usize = 16384;

/// Per-level map of small blocks keyed by `(row, col)` cluster indices.
#[derive(Debug, Clone, Default)]
pub(crate) struct BlockStore {
    levels: Vec<BTreeMap<(u32, u32), Array2<f64>>>,
}

impl BlockStore {
    pub(crate) fn new(levels: usize) -> Self {
        Self { levels: vec![BTreeMap::new(); levels] }
    }

    pub(crate) fn insert(&mut self, level: usize, row: u32, col: u32, block: Array2<f64>) {
        self.levels[level - 1].insert((row, col), block);
    }

    pub(crate) fn get(&self, level: usize, row: u32, col: u32) -> Option<&Array2<f64>> {
        self.levels[level - 1].get(&(row, col))
    }

    pub(crate) fn level(&self, level: usize) -> &BTreeMap<(u32, u32), Array2<f64>> {
        &self.levels[level - 1]
    }

    pub(crate) fn num_levels(&self) -> usize {
        self.levels.len()
    }

    fn value_count(&self) -> usize {
        self.levels.iter().flat_map(|m| m.values()).map(|b| b.len()).sum()
    }
}

/// Memory footprint in bytes by storage category.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MemoryReport {
    /// Leaf basis matrices.
    pub u: usize,
    /// Transfer matrices.
    pub e: usize,
    /// Coupling matrices (stored in both orientations).
    pub b: usize,
    /// Dense leaf blocks (stored once per unordered pair).
    pub d: usize,
    /// Skeleton index sets and the tree permutation.
    pub indices: usize,
}

impl MemoryReport {
    pub fn total(&self) -> usize {
        self.u + self.e + self.b + self.d + self.indices
    }
}

/// A strongly-admissible H^2 matrix over a cluster tree.
#[derive(Debug, Clone)]
pub struct H2Matrix {
    pub(crate) tree: ClusterTree,
    pub(crate) mtree: MatrixTree,
    /// Rank per flat cluster id; the root always has rank zero.
    pub(crate) ranks: Vec<usize>,
    /// Skeleton indices (global, tree-ordered) per flat cluster id, in the
    /// pivot order produced by the interpolative decomposition.
    pub(crate) skeletons: Vec<Vec<usize>>,
    /// Leaf bases `U`, indexed by leaf cluster index; `size x rank`.
    pub(crate) bases: Vec<Array2<f64>>,
    /// Transfer matrices `E`, per flat cluster id (`rank_self x rank_parent`);
    /// empty for clusters whose parent is never skeletonized.
    pub(crate) transfers: Vec<Array2<f64>>,
    /// Coupling blocks per admissible pair, both orientations.
    pub(crate) couplings: BlockStore,
    /// Dense blocks per inadmissible leaf pair, stored for `row <= col`.
    pub(crate) dense: BlockStore,
    /// Topmost level carrying couplings; no bases exist above it.
    top_level: usize,
}

impl H2Matrix {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn from_parts(
        tree: ClusterTree,
        mtree: MatrixTree,
        ranks: Vec<usize>,
        skeletons: Vec<Vec<usize>>,
        bases: Vec<Array2<f64>>,
        transfers: Vec<Array2<f64>>,
        couplings: BlockStore,
        dense: BlockStore,
    ) -> Self {
        let top_level = (1..=couplings.num_levels())
            .rev()
            .find(|&l| !couplings.level(l).is_empty())
            .unwrap_or(0);
        Self { tree, mtree, ranks, skeletons, bases, transfers, couplings, dense, top_level }
    }

    pub fn n(&self) -> usize {
        self.tree.n()
    }

    pub fn tree(&self) -> &ClusterTree {
        &self.tree
    }

    pub fn mtree(&self) -> &MatrixTree {
        &self.mtree
    }

    /// Topmost level that carries couplings; bases and transfers exist for
    /// levels up to this one.
    pub fn top_level(&self) -> usize {
        self.top_level
    }

    pub fn rank(&self, level: usize, idx: usize) -> usize {
        self.ranks[self.tree.id(level, idx)]
    }

    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    pub fn skeleton(&self, level: usize, idx: usize) -> &[usize] {
        &self.skeletons[self.tree.id(level, idx)]
    }

    /// Transfer matrix of a cluster (`rank_self x rank_parent`); empty when
    /// the parent is never skeletonized.
    pub fn transfer(&self, level: usize, idx: usize) -> &Array2<f64> {
        &self.transfers[self.tree.id(level, idx)]
    }

    /// Coupling matrix of an admissible pair, if that pair exists.
    pub fn coupling(&self, level: usize, row: u32, col: u32) -> Option<&Array2<f64>> {
        self.couplings.get(level, row, col)
    }

    fn dense_block(&self, row: u32, col: u32) -> (&Array2<f64>, bool) {
        if row <= col {
            (self.dense.get(1, row, col).expect("dense block exists"), false)
        } else {
            (self.dense.get(1, col, row).expect("dense block exists"), true)
        }
    }

    /// `M * X` through the upward / coupling / downward passes plus dense
    /// leaf contributions. Cost `O(N r d)`.
    pub fn matvec(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let n = self.n();
        assert_eq!(x.nrows(), n, "matvec input has {} rows, expected {n}", x.nrows());
        let d = x.ncols();
        let top = self.top_level;

        // Upward pass: xhat per flat cluster id.
        let mut xhat: Vec<Array2<f64>> = vec![Array2::zeros((0, d)); self.tree.num_clusters()];
        if top >= 1 {
            let leaves = self.tree.level_len(1);
            let projected = par::map_indexed(leaves, |i| {
                let node = self.tree.node(1, i);
                self.bases[i].t().dot(&x.slice(s![node.begin..node.end, ..]))
            });
            for (i, p) in projected.into_iter().enumerate() {
                xhat[self.tree.id(1, i)] = p;
            }
        }
        for level in 2..=top {
            let count = self.tree.level_len(level);
            let merged = par::map_indexed(count, |i| {
                let (c1, c2) = self.tree.children(level, i);
                let id1 = self.tree.id(level - 1, c1);
                let id2 = self.tree.id(level - 1, c2);
                self.transfers[id1].t().dot(&xhat[id1])
                    + self.transfers[id2].t().dot(&xhat[id2])
            });
            for (i, m) in merged.into_iter().enumerate() {
                xhat[self.tree.id(level, i)] = m;
            }
        }

        // Coupling pass.
        let mut yhat: Vec<Array2<f64>> = (0..self.tree.num_clusters())
            .map(|id| Array2::zeros((self.ranks[id], d)))
            .collect();
        for level in 1..=top {
            let count = self.tree.level_len(level);
            let contributions = par::map_indexed(count, |i| {
                let mut acc = Array2::zeros((self.ranks[self.tree.id(level, i)], d));
                for &b in self.mtree.far(&self.tree, level, i) {
                    let block = self.couplings.get(level, i as u32, b).expect("coupling exists");
                    acc += &block.dot(&xhat[self.tree.id(level, b as usize)]);
                }
                acc
            });
            for (i, c) in contributions.into_iter().enumerate() {
                yhat[self.tree.id(level, i)] = c;
            }
        }

        // Downward pass: children receive their parent's accumulated block row.
        for parent_level in (2..=top).rev() {
            let child_level = parent_level - 1;
            let count = self.tree.level_len(child_level);
            let updated = par::map_indexed(count, |c| {
                let id = self.tree.id(child_level, c);
                let parent = self.tree.id(parent_level, c / 2);
                &yhat[id] + &self.transfers[id].dot(&yhat[parent])
            });
            for (c, u) in updated.into_iter().enumerate() {
                yhat[self.tree.id(child_level, c)] = u;
            }
        }

        // Leaf apply plus dense contributions.
        let leaves = self.tree.level_len(1);
        let rows = par::map_indexed(leaves, |i| {
            let node = self.tree.node(1, i);
            let mut out = if top >= 1 {
                self.bases[i].dot(&yhat[self.tree.id(1, i)])
            } else {
                Array2::zeros((node.len(), d))
            };
            for &b in self.mtree.near(&self.tree, 1, i) {
                let bn = self.tree.node(1, b as usize);
                let xb = x.slice(s![bn.begin..bn.end, ..]);
                let (block, transposed) = self.dense_block(i as u32, b);
                if transposed {
                    out += &block.t().dot(&xb);
                } else {
                    out += &block.dot(&xb);
                }
            }
            out
        });
        let mut y = Array2::zeros((n, d));
        for (i, r) in rows.into_iter().enumerate() {
            let node = self.tree.node(1, i);
            y.slice_mut(s![node.begin..node.end, ..]).assign(&r);
        }
        y
    }

    /// Materialized basis of a cluster: `U` at a leaf, the nested product at
    /// inner clusters.
    pub fn expand_basis(&self, level: usize, idx: usize) -> Array2<f64> {
        if level == 1 {
            return self.bases[idx].clone();
        }
        let (c1, c2) = self.tree.children(level, idx);
        let x1 = self.expand_basis(level - 1, c1);
        let x2 = self.expand_basis(level - 1, c2);
        let e1 = &self.transfers[self.tree.id(level - 1, c1)];
        let e2 = &self.transfers[self.tree.id(level - 1, c2)];
        concatenate(Axis(0), &[x1.dot(e1).view(), x2.dot(e2).view()]).expect("shapes agree")
    }

    /// Expansions for every skeletonized cluster, built bottom-up.
    fn all_expansions(&self) -> Vec<Array2<f64>> {
        let mut exp: Vec<Array2<f64>> = vec![Array2::zeros((0, 0)); self.tree.num_clusters()];
        let top = self.top_level;
        for i in 0..self.tree.level_len(1) {
            exp[self.tree.id(1, i)] = self.bases[i].clone();
        }
        for level in 2..=top {
            for i in 0..self.tree.level_len(level) {
                let (c1, c2) = self.tree.children(level, i);
                let id1 = self.tree.id(level - 1, c1);
                let id2 = self.tree.id(level - 1, c2);
                let x1 = exp[id1].dot(&self.transfers[id1]);
                let x2 = exp[id2].dot(&self.transfers[id2]);
                exp[self.tree.id(level, i)] =
                    concatenate(Axis(0), &[x1.view(), x2.view()]).expect("shapes agree");
            }
        }
        exp
    }

    /// Extracts a dense block of entries, tree-ordered indices. Basis
    /// expansions are memoized per call.
    pub fn extract_entries(
        &self,
        requests: &[(Vec<usize>, Vec<usize>)],
    ) -> Result<Vec<Array2<f64>>> {
        let n = self.n();
        for (req, (rows, cols)) in requests.iter().enumerate() {
            for &i in rows.iter().chain(cols.iter()) {
                if i >= n {
                    return Err(Error::IndexOutOfRange { index: i, n, request: req });
                }
            }
        }
        let mut cache: HashMap<usize, Array2<f64>> = HashMap::new();
        Ok(requests.iter().map(|(rows, cols)| self.extract_block(rows, cols, &mut cache)).collect())
    }

    fn expansion_cached<'a>(
        &self,
        cache: &'a mut HashMap<usize, Array2<f64>>,
        level: usize,
        idx: usize,
    ) -> &'a Array2<f64> {
        let id = self.tree.id(level, idx);
        cache.entry(id).or_insert_with(|| self.expand_basis(level, idx))
    }

    pub(crate) fn extract_block(
        &self,
        rows: &[usize],
        cols: &[usize],
        cache: &mut HashMap<usize, Array2<f64>>,
    ) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), cols.len()));
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                out[(a, b)] = self.extract_entry(i, j, cache);
            }
        }
        out
    }

    fn extract_entry(&self, i: usize, j: usize, cache: &mut HashMap<usize, Array2<f64>>) -> f64 {
        let (level, s, t, status) = self.mtree.covering_leaf(&self.tree, i, j);
        let li = i - self.tree.node(level, s as usize).begin;
        let lj = j - self.tree.node(level, t as usize).begin;
        match status {
            BlockStatus::InadmissibleLeaf => {
                let (block, transposed) = self.dense_block(s, t);
                if transposed {
                    block[(lj, li)]
                } else {
                    block[(li, lj)]
                }
            }
            BlockStatus::AdmissibleLeaf => {
                let coupling = self.couplings.get(level, s, t).expect("coupling exists");
                let right = {
                    let exp_t = self.expansion_cached(cache, level, t as usize);
                    coupling.dot(&exp_t.row(lj))
                };
                let exp_s = self.expansion_cached(cache, level, s as usize);
                exp_s.row(li).dot(&right)
            }
            BlockStatus::Inner => unreachable!("covering_leaf returns leaves"),
        }
    }

    /// Assembles the full dense matrix; guarded test oracle.
    pub fn to_dense(&self) -> Result<Array2<f64>> {
        self.to_dense_guarded(DENSE_GUARD)
    }

    pub fn to_dense_guarded(&self, guard: usize) -> Result<Array2<f64>> {
        let n = self.n();
        if n > guard {
            return Err(Error::DenseGuardExceeded { n, guard });
        }
        let exp = self.all_expansions();
        let leaves: Vec<_> = self.mtree.leaves().collect();
        let blocks = par::map_slice(&leaves, |&(level, r, c, status)| match status {
            BlockStatus::InadmissibleLeaf => {
                let (block, transposed) = self.dense_block(r, c);
                if transposed {
                    block.t().to_owned()
                } else {
                    block.clone()
                }
            }
            BlockStatus::AdmissibleLeaf => {
                let b = self.couplings.get(level, r, c).expect("coupling exists");
                exp[self.tree.id(level, r as usize)]
                    .dot(b)
                    .dot(&exp[self.tree.id(level, c as usize)].t())
            }
            BlockStatus::Inner => unreachable!(),
        });
        let mut out = Array2::zeros((n, n));
        for (&(level, r, c, _), block) in leaves.iter().zip(blocks) {
            let rn = self.tree.node(level, r as usize);
            let cn = self.tree.node(level, c as usize);
            out.slice_mut(s![rn.begin..rn.end, cn.begin..cn.end]).assign(&block);
        }
        Ok(out)
    }

    /// Exact count of stored values and indices, in bytes.
    pub fn memory_report(&self) -> MemoryReport {
        const W: usize = std::mem::size_of::<f64>();
        const I: usize = std::mem::size_of::<u64>();
        let u = self.bases.iter().map(|m| m.len()).sum::<usize>() * W;
        let e = self.transfers.iter().map(|m| m.len()).sum::<usize>() * W;
        let b = self.couplings.value_count() * W;
        let d = self.dense.value_count() * W;
        let indices = (self.skeletons.iter().map(|s| s.len()).sum::<usize>()
            + self.tree.perm().len())
            * I;
        MemoryReport { u, e, b, d, indices }
    }
}

/// Sampler view of an H^2 matrix.
pub struct H2Sampler<'a>(pub &'a H2Matrix);

impl Sampler for H2Sampler<'_> {
    fn n(&self) -> usize {
        self.0.n()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        self.0.matvec(x)
    }
}

/// Sampler computing `M x + U (U^T x)`.
pub fn make_updated_sampler<'a>(
    m: &'a H2Matrix,
    update: &LowRankUpdate,
) -> UpdatedSampler<H2Sampler<'a>> {
    UpdatedSampler::new(H2Sampler(m), update.clone())
}

/// Entry oracle for `M + U U^T`, backed by H^2 extraction.
pub struct UpdatedEvaluator<'a> {
    matrix: &'a H2Matrix,
    update: LowRankUpdate,
}

pub fn make_updated_evaluator<'a>(
    m: &'a H2Matrix,
    update: &LowRankUpdate,
) -> UpdatedEvaluator<'a> {
    assert_eq!(m.n(), update.n(), "update dimension mismatch");
    UpdatedEvaluator { matrix: m, update: update.clone() }
}

impl EntryEvaluator for UpdatedEvaluator<'_> {
    fn n(&self) -> usize {
        self.matrix.n()
    }

    fn eval_block(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        let mut cache = HashMap::new();
        let mut out = self.matrix.extract_block(rows, cols, &mut cache);
        if self.update.rank() > 0 {
            out += &self.update.eval_block(rows, cols);
        }
        out
    }
}
