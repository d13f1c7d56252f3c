//! KD-tree cluster tree over permuted point indices.
//!
//! The tree is complete: every leaf sits at level 1 and the root at level
//! `L`, so dual-traversal pairs are always formed between clusters of the
//! same level. Splits pick the longest bounding-box axis (ties toward the
//! lowest dimension) and place the median so the left child receives
//! `ceil(m/2)` points.

use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, PointSet};

/// One cluster: a contiguous half-open range of tree-ordered indices.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ClusterNode {
    pub begin: usize,
    pub end: usize,
    pub bbox: BoundingBox,
    /// Depth counted from the leaves; leaves are level 1.
    pub level: usize,
}

impl ClusterNode {
    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.begin == self.end
    }
}

/// Complete binary cluster tree with nodes stored contiguously level by level.
#[derive(Debug, Clone)]
pub struct ClusterTree {
    n: usize,
    leaf_size: usize,
    levels: usize,
    /// Tree order -> original order.
    perm: Vec<usize>,
    /// Level 1 nodes first, then level 2, up to the root.
    nodes: Vec<ClusterNode>,
    /// Start of each level's node block in `nodes`; indexed by `level - 1`.
    offsets: Vec<usize>,
}

/// Identifies a cluster by its position in the level-contiguous layout.
pub type ClusterId = usize;

impl ClusterTree {
    pub(crate) fn from_parts(
        n: usize,
        leaf_size: usize,
        levels: usize,
        perm: Vec<usize>,
        nodes: Vec<ClusterNode>,
    ) -> Self {
        let mut offsets = Vec::with_capacity(levels);
        let mut cursor = 0;
        for level in 1..=levels {
            offsets.push(cursor);
            cursor += 1 << (levels - level);
        }
        debug_assert_eq!(cursor, nodes.len());
        Self { n, leaf_size, levels, perm, nodes, offsets }
    }

    pub fn build(points: &PointSet, leaf_size: usize) -> Result<Self> {
        if leaf_size < 2 {
            return Err(Error::InvalidParameter(format!(
                "leaf_size must be at least 2, got {leaf_size}"
            )));
        }
        let n = points.len();
        let target_leaves = n.div_ceil(leaf_size);
        let depth = target_leaves.next_power_of_two().trailing_zeros() as usize;
        let levels = depth + 1;

        let mut perm: Vec<usize> = (0..n).collect();
        // ranges[level-1][idx] = (begin, end)
        let mut ranges: Vec<Vec<(usize, usize)>> =
            (0..levels).map(|l| vec![(0, 0); 1 << (levels - 1 - l)]).collect();
        split_recursive(points, &mut perm, &mut ranges, levels, 0, 0, n);

        let mut nodes = Vec::with_capacity((1 << levels) - 1);
        let mut offsets = Vec::with_capacity(levels);
        for (li, level_ranges) in ranges.iter().enumerate() {
            offsets.push(nodes.len());
            for &(begin, end) in level_ranges {
                let bbox = BoundingBox::of_points(points, perm[begin..end].iter().copied());
                nodes.push(ClusterNode { begin, end, bbox, level: li + 1 });
            }
        }

        Ok(Self { n, leaf_size, levels, perm, nodes, offsets })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    /// Number of cluster levels; leaves are level 1, the root is this level.
    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Number of clusters at `level`.
    pub fn level_len(&self, level: usize) -> usize {
        1 << (self.levels - level)
    }

    pub fn node(&self, level: usize, idx: usize) -> &ClusterNode {
        &self.nodes[self.offsets[level - 1] + idx]
    }

    pub fn id(&self, level: usize, idx: usize) -> ClusterId {
        self.offsets[level - 1] + idx
    }

    pub fn node_by_id(&self, id: ClusterId) -> &ClusterNode {
        &self.nodes[id]
    }

    pub fn num_clusters(&self) -> usize {
        self.nodes.len()
    }

    /// Children of `(level, idx)` live at `level - 1`, indices `2*idx` and `2*idx + 1`.
    pub fn children(&self, level: usize, idx: usize) -> (usize, usize) {
        debug_assert!(level > 1);
        (2 * idx, 2 * idx + 1)
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Index of the leaf cluster containing tree-ordered index `i`.
    pub fn leaf_of(&self, i: usize) -> usize {
        let leaves = self.level_len(1);
        let mut lo = 0;
        let mut hi = leaves;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.node(1, mid).begin <= i {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    /// Index at `level` of the cluster containing tree-ordered index `i`.
    pub fn ancestor_of(&self, i: usize, level: usize) -> usize {
        self.leaf_of(i) >> (level - 1)
    }

    /// Debug export: node ranges and bounding boxes as JSON.
    pub fn to_json(&self) -> String {
        #[derive(serde::Serialize)]
        struct Dump<'a> {
            n: usize,
            leaf_size: usize,
            levels: usize,
            nodes: &'a [ClusterNode],
        }
        serde_json::to_string_pretty(&Dump {
            n: self.n,
            leaf_size: self.leaf_size,
            levels: self.levels,
            nodes: &self.nodes,
        })
        .expect("cluster tree serializes")
    }
}

fn split_recursive(
    points: &PointSet,
    perm: &mut [usize],
    ranges: &mut [Vec<(usize, usize)>],
    level: usize,
    idx: usize,
    begin: usize,
    end: usize,
) {
    ranges[level - 1][idx] = (begin, end);
    if level == 1 {
        return;
    }
    let bbox = BoundingBox::of_points(points, perm[begin..end].iter().copied());
    let axis = bbox.longest_axis();
    // Total order on (coordinate, original index) keeps the permutation
    // reproducible even with duplicate coordinates.
    perm[begin..end].sort_unstable_by(|&a, &b| {
        points.point(a)[axis]
            .partial_cmp(&points.point(b)[axis])
            .expect("finite coordinates")
            .then(a.cmp(&b))
    });
    let mid = begin + (end - begin).div_ceil(2);
    split_recursive(points, perm, ranges, level - 1, 2 * idx, begin, mid);
    split_recursive(points, perm, ranges, level - 1, 2 * idx + 1, mid, end);
}
