use std::sync::Arc;

use ndarray::{s, Array2};

use super::*;
use crate::cluster::ClusterTree;
use crate::geometry::PointSet;
use crate::h2::H2Sampler;
use crate::kernel::{dense_matrix, DenseEvaluator, KernelEvaluator, KernelSpec};
use crate::mtree::build_matrix_tree;
use crate::norm::estimate_rel_error;
use crate::sampler::DenseSampler;

fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
    let g = Array2::from_shape_fn((n, n), |(i, j)| {
        rng::normal(seed, rng::stream::TEST, 4, i as u64, j as u64)
    });
    (&g + &g.t()) / 2.0
}

struct Setup {
    tree: ClusterTree,
    mtree: MatrixTree,
    evaluator: KernelEvaluator,
    dense: Arc<Array2<f64>>,
}

fn covariance_setup(n: usize, leaf_size: usize, eta: f64, seed: u64) -> Setup {
    let points = if (n as f64).cbrt().round().powi(3) as usize == n {
        PointSet::grid(n, 3).unwrap()
    } else {
        PointSet::uniform_random(n, 3, seed).unwrap()
    };
    let tree = ClusterTree::build(&points, leaf_size).unwrap();
    let mtree = build_matrix_tree(&tree, eta).unwrap();
    let spec = KernelSpec::ExponentialCovariance { correlation_length: 0.2 };
    let evaluator = KernelEvaluator::new(spec, points.permuted(tree.perm())).unwrap();
    let dense = Arc::new(dense_matrix(&evaluator, n));
    Setup { tree, mtree, evaluator, dense }
}

#[test]
fn single_dense_leaf_holds_the_full_matrix() {
    let k = random_symmetric(48, 1);
    let points = PointSet::uniform_random(48, 3, 2).unwrap();
    let tree = ClusterTree::build(&points, 64).unwrap();
    assert_eq!(tree.levels(), 1);
    let mtree = build_matrix_tree(&tree, 0.7).unwrap();
    let dense = Arc::new(k.clone());
    let perm = Arc::new(tree.perm().to_vec());
    let sampler = DenseSampler::permuted(dense.clone(), perm.clone());
    let evaluator = DenseEvaluator::permuted(dense, perm);
    let (m, stats) =
        construct(&sampler, &evaluator, &tree, &mtree, &ConstructionConfig::default()).unwrap();
    assert_eq!(stats.total_samples, 0);
    let full = m.to_dense().unwrap();
    for i in 0..48 {
        for j in 0..48 {
            let want = k[(tree.perm()[i], tree.perm()[j])];
            assert_eq!(full[(i, j)], want);
        }
    }
}

#[test]
fn subtraction_removes_partner_products() {
    // Two touching leaf clusters; operator [[0, I], [I, 0]] in tree order.
    let points = PointSet::new(1, (0..64).map(|i| i as f64 / 63.0).collect()).unwrap();
    let tree = ClusterTree::build(&points, 32).unwrap();
    let mtree = build_matrix_tree(&tree, 0.7).unwrap();
    assert_eq!(mtree.near(&tree, 1, 0), &[0, 1]);
    let mut k = Array2::zeros((64, 64));
    for i in 0..32 {
        k[(i, 32 + i)] = 1.0;
        k[(32 + i, i)] = 1.0;
    }
    let evaluator = DenseEvaluator::new(Arc::new(k));
    let mut builder = Builder::new(&tree, &mtree, &evaluator);
    builder.generate_dense_blocks().unwrap();

    let omega = gaussian(64, 4, 7, 0);
    let y = Array2::from_shape_fn((64, 4), |(i, c)| (i * 4 + c) as f64);
    let omegas =
        vec![omega.slice(s![..32, ..]).to_owned(), omega.slice(s![32.., ..]).to_owned()];
    let ys = vec![y.slice(s![..32, ..]).to_owned(), y.slice(s![32.., ..]).to_owned()];
    let ylocs = builder.subtract_level(1, &omegas, &ys);
    // D(0,0) = 0 and D(0,1) = I, so yloc = y - omega of the partner.
    let want0 = &ys[0] - &omegas[1];
    let want1 = &ys[1] - &omegas[0];
    for (a, b) in ylocs[0].iter().zip(want0.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
    for (a, b) in ylocs[1].iter().zip(want1.iter()) {
        assert!((a - b).abs() < 1e-14);
    }
}

#[test]
fn all_dense_partition_subtracts_everything() {
    // With eta -> 0 every leaf pair is dense; the subtraction must cancel the
    // samples exactly, confirming sampler and evaluator describe one operator.
    let setup = covariance_setup(512, 64, 1e-12, 3);
    let mut builder = Builder::new(&setup.tree, &setup.mtree, &setup.evaluator);
    builder.generate_dense_blocks().unwrap();
    let omega = gaussian(512, 8, 11, 0);
    let y = DenseSampler::new(setup.dense.clone()).apply(omega.view());
    let leaves = setup.tree.level_len(1);
    let slice = |m: &Array2<f64>, i: usize| {
        let node = setup.tree.node(1, i);
        m.slice(s![node.begin..node.end, ..]).to_owned()
    };
    let omegas: Vec<_> = (0..leaves).map(|i| slice(&omega, i)).collect();
    let ys: Vec<_> = (0..leaves).map(|i| slice(&y, i)).collect();
    let ylocs = builder.subtract_level(1, &omegas, &ys);
    let scale: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    for yloc in &ylocs {
        for v in yloc.iter() {
            assert!(v.abs() <= 1e-12 * scale, "residual {v}");
        }
    }
}

#[test]
fn rank_one_far_field_yields_rank_one() {
    // Two separated blobs whose off-diagonal interaction is an outer product.
    let mut coords = Vec::new();
    for i in 0..16 {
        coords.push(0.1 * i as f64 / 15.0);
    }
    for i in 0..16 {
        coords.push(0.9 + 0.1 * i as f64 / 15.0);
    }
    let points = PointSet::new(1, coords).unwrap();
    let tree = ClusterTree::build(&points, 16).unwrap();
    let mtree = build_matrix_tree(&tree, 0.7).unwrap();
    assert_eq!(mtree.status(1, 0, 1), Some(crate::mtree::BlockStatus::AdmissibleLeaf));

    let mut k = Array2::zeros((32, 32));
    for i in 0..16 {
        k[(i, i)] = 1.0;
        k[(16 + i, 16 + i)] = 1.0;
    }
    for i in 0..16 {
        for j in 0..16 {
            let u = 1.0 + i as f64;
            let v = 1.0 / (1.0 + j as f64);
            k[(i, 16 + j)] = u * v;
            k[(16 + j, i)] = u * v;
        }
    }
    let dense = Arc::new(k);
    let perm = Arc::new(tree.perm().to_vec());
    let sampler = DenseSampler::permuted(dense.clone(), perm.clone());
    let evaluator = DenseEvaluator::permuted(dense, perm);
    let (m, _) =
        construct(&sampler, &evaluator, &tree, &mtree, &ConstructionConfig::default()).unwrap();
    assert_eq!(m.rank(1, 0), 1);
    assert_eq!(m.rank(1, 1), 1);
}

#[test]
fn tolerance_zero_keeps_full_rank_with_permutation_bases() {
    // Full-rank far field and an effectively zero threshold: every row is a
    // skeleton and U is a permutation of the identity.
    let mut coords = Vec::new();
    for i in 0..8 {
        coords.push(0.1 * i as f64 / 7.0);
    }
    for i in 0..8 {
        coords.push(0.9 + 0.1 * i as f64 / 7.0);
    }
    let points = PointSet::new(1, coords).unwrap();
    let tree = ClusterTree::build(&points, 8).unwrap();
    let mtree = build_matrix_tree(&tree, 0.7).unwrap();
    let g = random_symmetric(16, 5);
    let dense = Arc::new(&g + &(Array2::<f64>::eye(16) * 8.0));
    let perm = Arc::new(tree.perm().to_vec());
    let sampler = DenseSampler::permuted(dense.clone(), perm.clone());
    let evaluator = DenseEvaluator::permuted(dense, perm);
    let cfg = ConstructionConfig {
        eps: 1e-15,
        sample_block: 16,
        norm_estimate: Some(1.0),
        ..ConstructionConfig::default()
    };
    let (m, _) = construct(&sampler, &evaluator, &tree, &mtree, &cfg).unwrap();
    for idx in 0..2 {
        assert_eq!(m.rank(1, idx), 8);
        let u = m.expand_basis(1, idx);
        for v in u.iter() {
            assert!(*v == 0.0 || *v == 1.0, "basis entry {v}");
        }
        let mut skel: Vec<usize> = m.skeleton(1, idx).to_vec();
        skel.sort_unstable();
        let node = tree.node(1, idx);
        assert_eq!(skel, (node.begin..node.end).collect::<Vec<_>>());
    }
}

#[test]
fn converged_at_round_zero_uses_initial_samples_only() {
    let setup = covariance_setup(2048, 16, 0.7, 4);
    let sampler = DenseSampler::new(setup.dense.clone());
    let cfg = ConstructionConfig { eps: 1e-2, ..ConstructionConfig::default() };
    let (_, stats) =
        construct(&sampler, &setup.evaluator, &setup.tree, &setup.mtree, &cfg).unwrap();
    assert_eq!(stats.total_samples, 32);
    assert!(stats.rounds_per_level.iter().all(|r| *r == 0));
}

#[test]
fn all_dense_partition_needs_no_samples() {
    // Nothing is admissible at this size, so the construction is pure entry
    // generation.
    let setup = covariance_setup(512, 64, 0.7, 4);
    assert!(setup.mtree.leaves().all(|(_, _, _, s)| s == crate::mtree::BlockStatus::InadmissibleLeaf));
    let sampler = DenseSampler::new(setup.dense.clone());
    let (m, stats) =
        construct(&sampler, &setup.evaluator, &setup.tree, &setup.mtree, &ConstructionConfig::default())
            .unwrap();
    assert_eq!(stats.total_samples, 0);
    assert!(m.ranks().iter().all(|r| *r == 0));
    let full = m.to_dense().unwrap();
    for (a, b) in full.iter().zip(setup.dense.iter()) {
        assert_eq!(a, b);
    }
}

/// Two well-separated blobs of `half` random 3D points each, so cross-blob
/// blocks are admissible at eta = 0.7 while within-blob pairs stay dense.
fn blob_points(half: usize, seed: u64) -> PointSet {
    let base = PointSet::uniform_random(2 * half, 3, seed).unwrap();
    let mut coords = Vec::with_capacity(6 * half);
    for i in 0..2 * half {
        let offset = if i < half { 0.0 } else { 0.8 };
        for d in 0..3 {
            coords.push(offset + 0.2 * base.point(i)[d]);
        }
    }
    PointSet::new(3, coords).unwrap()
}

#[test]
fn low_rank_operator_triggers_refinement_and_converges() {
    // Symmetric rank-40 operator: 32 initial samples cannot converge at the
    // leaf level, one refinement must occur, and the result is exact.
    let n = 256;
    let rank = 40;
    let g = Array2::from_shape_fn((n, rank), |(i, j)| {
        rng::normal(8, rng::stream::TEST, 5, i as u64, j as u64)
    });
    let k = Arc::new(g.dot(&g.t()));
    let points = blob_points(n / 2, 9);
    let tree = ClusterTree::build(&points, 64).unwrap();
    let mtree = build_matrix_tree(&tree, 0.7).unwrap();
    assert_eq!(mtree.far(&tree, 2, 0), &[1], "blobs should interact at level 2");
    let perm = Arc::new(tree.perm().to_vec());
    let sampler = DenseSampler::permuted(k.clone(), perm.clone());
    let evaluator = DenseEvaluator::permuted(k, perm);
    let cfg = ConstructionConfig { eps: 1e-8, ..ConstructionConfig::default() };
    let (m, stats) = construct(&sampler, &evaluator, &tree, &mtree, &cfg).unwrap();
    assert!(stats.rounds_per_level.iter().sum::<usize>() >= 1, "no refinement happened");
    assert!(stats.total_samples >= 64, "samples {}", stats.total_samples);
    let err = estimate_rel_error(&H2Sampler(&m), &sampler, 10, 10).unwrap();
    assert!(err <= 1e-7, "relative error {err}");
}

#[test]
fn max_samples_failure_names_the_level() {
    // Full-rank cross-blob interaction with a tiny sample budget.
    let k = Arc::new(random_symmetric(128, 12));
    let points = blob_points(64, 13);
    let tree = ClusterTree::build(&points, 64).unwrap();
    let mtree = build_matrix_tree(&tree, 0.7).unwrap();
    assert_eq!(mtree.far(&tree, 1, 0), &[1]);
    let perm = Arc::new(tree.perm().to_vec());
    let sampler = DenseSampler::permuted(k.clone(), perm.clone());
    let evaluator = DenseEvaluator::permuted(k, perm);
    let cfg = ConstructionConfig {
        eps: 1e-12,
        sample_block: 8,
        max_samples: 16,
        ..ConstructionConfig::default()
    };
    match construct(&sampler, &evaluator, &tree, &mtree, &cfg) {
        Err(Error::MaxSamplesExceeded { level, max_samples }) => {
            assert_eq!(level, 1);
            assert_eq!(max_samples, 16);
        }
        other => panic!("expected max-samples failure, got {other:?}"),
    }
}

#[test]
fn zero_operator_degenerates_to_zero_ranks() {
    let n = 128;
    let k = Arc::new(Array2::<f64>::zeros((n, n)));
    let points = PointSet::uniform_random(n, 3, 14).unwrap();
    let tree = ClusterTree::build(&points, 32).unwrap();
    let mtree = build_matrix_tree(&tree, 0.7).unwrap();
    let sampler = DenseSampler::new(k.clone());
    let evaluator = DenseEvaluator::new(k);
    let cfg = ConstructionConfig { sample_block: 16, ..ConstructionConfig::default() };
    let (m, _) = construct(&sampler, &evaluator, &tree, &mtree, &cfg).unwrap();
    assert!(m.ranks().iter().all(|r| *r == 0));
    let full = m.to_dense().unwrap();
    assert!(full.iter().all(|v| *v == 0.0));
}

#[test]
fn rerun_is_bit_identical() {
    let setup = covariance_setup(2048, 16, 0.7, 15);
    let sampler = DenseSampler::new(setup.dense.clone());
    let cfg = ConstructionConfig::default();
    let (m1, s1) =
        construct(&sampler, &setup.evaluator, &setup.tree, &setup.mtree, &cfg).unwrap();
    let (m2, s2) =
        construct(&sampler, &setup.evaluator, &setup.tree, &setup.mtree, &cfg).unwrap();
    assert_eq!(m1.to_bytes(), m2.to_bytes());
    assert_eq!(s1.with_zeroed_times(), s2.with_zeroed_times());
}

#[test]
fn fixed_mode_with_saturating_samples_is_sketch_exact() {
    // d covers every cluster size, so the sketch spans the full row spaces
    // and the error is limited only by the ID tolerance.
    let points = blob_points(128, 16);
    let tree = ClusterTree::build(&points, 32).unwrap();
    let mtree = build_matrix_tree(&tree, 0.7).unwrap();
    let spec = crate::kernel::KernelSpec::ExponentialCovariance { correlation_length: 0.2 };
    let evaluator =
        crate::kernel::KernelEvaluator::new(spec, points.permuted(tree.perm())).unwrap();
    let dense = Arc::new(crate::kernel::dense_matrix(&evaluator, 256));
    let sampler = DenseSampler::new(dense);
    let cfg = ConstructionConfig {
        eps: 1e-10,
        adaptive: false,
        sample_block: 256,
        max_samples: 256,
        ..ConstructionConfig::default()
    };
    let (m, stats) = construct(&sampler, &evaluator, &tree, &mtree, &cfg).unwrap();
    assert_eq!(stats.total_samples, 256);
    assert!(m.ranks().iter().any(|r| *r > 0), "no compression happened");
    let err = estimate_rel_error(&H2Sampler(&m), &sampler, 10, 17).unwrap();
    assert!(err <= 1e-8, "relative error {err}");
}

// One-sided Jacobi: returns (column norms of M V, V) with M V having
// orthogonal columns. Test-only oracle, independent of the Householder path.
fn jacobi_right_vectors(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let (_, c) = m.dim();
    let mut a = m.clone();
    let mut v = Array2::eye(c);
    for _sweep in 0..60 {
        let mut off = 0.0f64;
        for p in 0..c {
            for q in p + 1..c {
                let app: f64 = a.column(p).dot(&a.column(p));
                let aqq: f64 = a.column(q).dot(&a.column(q));
                let apq: f64 = a.column(p).dot(&a.column(q));
                off = off.max(apq.abs() / (app * aqq).sqrt().max(1e-300));
                if apq.abs() <= 1e-15 * (app * aqq).sqrt() {
                    continue;
                }
                let theta = 0.5 * (2.0 * apq).atan2(app - aqq);
                let (s, co) = theta.sin_cos();
                for r in 0..a.nrows() {
                    let (x, y) = (a[(r, p)], a[(r, q)]);
                    a[(r, p)] = co * x + s * y;
                    a[(r, q)] = -s * x + co * y;
                }
                for r in 0..c {
                    let (x, y) = (v[(r, p)], v[(r, q)]);
                    v[(r, p)] = co * x + s * y;
                    v[(r, q)] = -s * x + co * y;
                }
            }
        }
        if off < 1e-14 {
            break;
        }
    }
    let svals: Vec<f64> = (0..c).map(|j| a.column(j).dot(&a.column(j)).sqrt()).collect();
    (svals, v)
}

/// Sines of the principal angles of span(`qa`) relative to span(`qb`),
/// descending: singular values of `(I - qb qb^T) qa`. The sine formulation
/// stays accurate for angles near zero where cosines saturate.
fn principal_angle_sines(qa: &Array2<f64>, qb: &Array2<f64>) -> Vec<f64> {
    let resid = qa - &qb.dot(&qb.t().dot(qa));
    let (mut sines, _) = jacobi_right_vectors(&resid);
    sines.sort_by(|a, b| b.partial_cmp(a).unwrap());
    sines
}

#[test]
fn refined_columns_match_single_shot_sketch_subspaces() {
    // Leaf sketches built as 32 + 32 refined columns must capture the same
    // far-field subspace as a one-shot 64-column sketch.
    let setup = covariance_setup(2048, 16, 0.7, 18);
    let n = 2048;
    let sampler = DenseSampler::new(setup.dense.clone());
    let seed = 19;

    let run = |widths: &[usize]| -> Vec<Array2<f64>> {
        let mut builder = Builder::new(&setup.tree, &setup.mtree, &setup.evaluator);
        builder.generate_dense_blocks().unwrap();
        let leaves = setup.tree.level_len(1);
        let mut omegas: Vec<Array2<f64>> = Vec::new();
        let mut ylocs: Vec<Array2<f64>> = Vec::new();
        let mut phases = PhaseTimes::default();
        for (round, &w) in widths.iter().enumerate() {
            let omega = gaussian(n, w, seed, round as u64);
            let y = sampler.apply(omega.view());
            let (om, yl) = builder.sweep_columns(1, &omega, &y, &mut phases);
            if round == 0 {
                omegas = om;
                ylocs = yl;
            } else {
                for i in 0..leaves {
                    append_columns(&mut omegas[i], &om[i]);
                    append_columns(&mut ylocs[i], &yl[i]);
                }
            }
        }
        ylocs
    };

    let one_shot = run(&[64]);
    let refined = run(&[32, 32]);

    // Dense far-field block of leaf 0: full rows with near-cluster columns zeroed.
    let leaf = setup.tree.node(1, 0);
    let mut far = setup.dense.slice(s![leaf.begin..leaf.end, ..]).to_owned();
    for &b in setup.mtree.near(&setup.tree, 1, 0) {
        let bn = setup.tree.node(1, b as usize);
        far.slice_mut(s![.., bn.begin..bn.end]).fill(0.0);
    }
    // Orthonormal basis of the significant far-field column space. The cut
    // keeps directions both sketches capture to roundoff; weaker directions
    // carry no information at 64 samples and would only compare noise.
    let (svals, u) = jacobi_right_vectors(&far.t().to_owned());
    let smax = svals.iter().cloned().fold(0.0, f64::max);
    assert!(smax > 1e-8, "leaf 0 has no far field to sketch");
    let keep: Vec<usize> =
        (0..svals.len()).filter(|&j| svals[j] >= 1e-4 * smax).collect();
    assert!(keep.len() >= 3, "far field too thin for a meaningful comparison");
    let mut qa = Array2::zeros((far.nrows(), keep.len()));
    for (col, &j) in keep.iter().enumerate() {
        qa.column_mut(col).assign(&u.column(j));
    }

    let q_of = |y: &Array2<f64>| crate::qr::col_piv_qr(y.view()).q();
    let angles_one = principal_angle_sines(&qa, &q_of(&one_shot[0]));
    let angles_ref = principal_angle_sines(&qa, &q_of(&refined[0]));
    assert_eq!(angles_one.len(), angles_ref.len());
    for (a, b) in angles_one.iter().zip(angles_ref.iter()) {
        assert!((a - b).abs() <= 1e-8, "angles diverge: {a} vs {b}");
        assert!(*a < 1e-8 && *b < 1e-8, "subspace not captured: {a} {b}");
    }
}
