//! Matrix tree: the block partition produced by a dual traversal of the
//! cluster tree under the general admissibility condition.

use std::collections::HashMap;

use crate::cluster::{ClusterNode, ClusterTree};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockStatus {
    /// Inadmissible pair with children; the traversal recursed below it.
    Inner,
    /// Low-rank block represented through cluster bases and a coupling matrix.
    AdmissibleLeaf,
    /// Dense block between two leaf clusters.
    InadmissibleLeaf,
}

/// A cluster pair `(row, col)` at one level of the matrix tree.
#[derive(Debug, Clone, Copy)]
pub struct MatrixBlock {
    pub row: u32,
    pub col: u32,
    pub status: BlockStatus,
}

/// General admissibility condition: a pair is admissible when the mean of the
/// box diameters is within `eta` times the minimum box distance. Touching or
/// overlapping boxes are never admissible.
pub fn is_admissible(s: &ClusterNode, t: &ClusterNode, eta: f64) -> bool {
    let dist = s.bbox.distance(&t.bbox);
    dist > 0.0 && 0.5 * (s.bbox.diameter() + t.bbox.diameter()) <= eta * dist
}

#[derive(Debug, Clone)]
pub struct MatrixTree {
    eta: f64,
    /// Blocks per level, indexed by `level - 1`, sorted by (row, col).
    levels: Vec<Vec<MatrixBlock>>,
    /// Per-cluster inadmissible partners (level indices), ascending.
    near: Vec<Vec<u32>>,
    /// Per-cluster admissible partners (level indices), ascending.
    far: Vec<Vec<u32>>,
    /// Status lookup per level for entry extraction.
    maps: Vec<HashMap<(u32, u32), BlockStatus>>,
    csp: usize,
}

/// Dual tree traversal from the root pair. Admissible pairs become leaves,
/// inadmissible pairs of leaf clusters become dense leaves, everything else
/// recurses on the four child pairs.
pub fn build_matrix_tree(tree: &ClusterTree, eta: f64) -> Result<MatrixTree> {
    if eta <= 0.0 || !eta.is_finite() {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    let levels = tree.levels();
    let mut blocks: Vec<Vec<MatrixBlock>> = vec![Vec::new(); levels];
    let mut near: Vec<Vec<u32>> = vec![Vec::new(); tree.num_clusters()];
    let mut far: Vec<Vec<u32>> = vec![Vec::new(); tree.num_clusters()];

    let mut stack = vec![(levels, 0u32, 0u32)];
    while let Some((level, i, j)) = stack.pop() {
        let s = tree.node(level, i as usize);
        let t = tree.node(level, j as usize);
        let status = if is_admissible(s, t, eta) {
            far[tree.id(level, i as usize)].push(j);
            BlockStatus::AdmissibleLeaf
        } else if level == 1 {
            near[tree.id(level, i as usize)].push(j);
            BlockStatus::InadmissibleLeaf
        } else {
            for ci in [2 * i, 2 * i + 1] {
                for cj in [2 * j, 2 * j + 1] {
                    stack.push((level - 1, ci, cj));
                }
            }
            BlockStatus::Inner
        };
        blocks[level - 1].push(MatrixBlock { row: i, col: j, status });
    }

    for level in blocks.iter_mut() {
        level.sort_unstable_by_key(|b| (b.row, b.col));
    }
    for list in near.iter_mut().chain(far.iter_mut()) {
        list.sort_unstable();
    }

    let maps = blocks
        .iter()
        .map(|level| level.iter().map(|b| ((b.row, b.col), b.status)).collect())
        .collect();

    let mut csp = 0;
    for id in 0..tree.num_clusters() {
        csp = csp.max(near[id].len() + far[id].len());
    }

    Ok(MatrixTree { eta, levels: blocks, near, far, maps, csp })
}

impl MatrixTree {
    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn levels(&self) -> usize {
        self.levels.len()
    }

    pub fn blocks_at(&self, level: usize) -> &[MatrixBlock] {
        &self.levels[level - 1]
    }

    pub fn status(&self, level: usize, row: u32, col: u32) -> Option<BlockStatus> {
        self.maps[level - 1].get(&(row, col)).copied()
    }

    /// Inadmissible partners of cluster `(level, idx)`, ascending level indices.
    pub fn near(&self, tree: &ClusterTree, level: usize, idx: usize) -> &[u32] {
        &self.near[tree.id(level, idx)]
    }

    /// Admissible partners of cluster `(level, idx)`, ascending level indices.
    pub fn far(&self, tree: &ClusterTree, level: usize, idx: usize) -> &[u32] {
        &self.far[tree.id(level, idx)]
    }

    /// Maximum number of blocks in any block row of any level.
    pub fn sparsity_constant(&self) -> usize {
        self.csp
    }

    /// Leaves of the matrix tree, as `(level, row, col, status)`.
    pub fn leaves(&self) -> impl Iterator<Item = (usize, u32, u32, BlockStatus)> + '_ {
        self.levels.iter().enumerate().flat_map(|(li, blocks)| {
            blocks
                .iter()
                .filter(|b| b.status != BlockStatus::Inner)
                .map(move |b| (li + 1, b.row, b.col, b.status))
        })
    }

    /// The unique matrix-tree leaf covering entry `(i, j)` in tree ordering.
    pub fn covering_leaf(
        &self,
        tree: &ClusterTree,
        i: usize,
        j: usize,
    ) -> (usize, u32, u32, BlockStatus) {
        let leaf_i = tree.leaf_of(i) as u32;
        let leaf_j = tree.leaf_of(j) as u32;
        for level in (1..=tree.levels()).rev() {
            let a = leaf_i >> (level - 1);
            let b = leaf_j >> (level - 1);
            match self.status(level, a, b) {
                Some(BlockStatus::Inner) | None => continue,
                Some(status) => return (level, a, b, status),
            }
        }
        unreachable!("matrix tree leaves tile the index square")
    }
}
