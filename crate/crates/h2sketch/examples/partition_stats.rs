//! Prints block-partition statistics for the covariance geometry: per-level
//! block counts, sparsity constant, and projected dense/coupling storage.

use h2sketch::{build_matrix_tree, BlockStatus, ClusterTree, PointSet};

fn main() {
    let eta = 0.7;
    for leaf_size in [16usize, 32, 64] {
        let r_guess = (leaf_size as f64 * 0.6).min(50.0);
        for exp in [12u32, 13, 14, 15, 16] {
            let n = 1usize << exp;
            let points = PointSet::uniform_random(n, 3, 1).unwrap();
            let tree = ClusterTree::build(&points, leaf_size).unwrap();
            let mtree = build_matrix_tree(&tree, eta).unwrap();
            let mut dense_entries = 0usize;
            let mut adm_count = 0usize;
            for (level, r, c, status) in mtree.leaves() {
                match status {
                    BlockStatus::InadmissibleLeaf => {
                        if r <= c {
                            dense_entries += tree.node(level, r as usize).len()
                                * tree.node(level, c as usize).len();
                        }
                    }
                    BlockStatus::AdmissibleLeaf => adm_count += 1,
                    BlockStatus::Inner => {}
                }
            }
            println!(
                "leaf={leaf_size} n=2^{exp} levels={} csp={} admissible_pairs={} dense_mb={:.1} coupling_mb_at_r{:.0}={:.1}",
                tree.levels(),
                mtree.sparsity_constant(),
                adm_count,
                dense_entries as f64 * 8.0 / 1e6,
                r_guess,
                adm_count as f64 * r_guess * r_guess * 8.0 / 1e6,
            );
        }
    }
}
