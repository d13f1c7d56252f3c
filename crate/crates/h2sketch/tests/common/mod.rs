#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array2;

use h2sketch::kernel::{dense_matrix, KernelEvaluator};
use h2sketch::{
    build_matrix_tree, rng, ClusterTree, ConstructionConfig, DenseSampler, H2Matrix, KernelSpec,
    MatrixTree, PointSet,
};

pub struct Problem {
    pub tree: ClusterTree,
    pub mtree: MatrixTree,
    pub evaluator: KernelEvaluator,
    pub dense: Arc<Array2<f64>>,
}

pub fn kernel_problem(spec: KernelSpec, n: usize, leaf_size: usize, eta: f64, seed: u64) -> Problem {
    let points = if (n as f64).cbrt().round().powi(3) as usize == n {
        PointSet::grid(n, 3).unwrap()
    } else {
        PointSet::uniform_random(n, 3, seed).unwrap()
    };
    let tree = ClusterTree::build(&points, leaf_size).unwrap();
    let mtree = build_matrix_tree(&tree, eta).unwrap();
    let evaluator = KernelEvaluator::new(spec, points.permuted(tree.perm())).unwrap();
    let dense = Arc::new(dense_matrix(&evaluator, n));
    Problem { tree, mtree, evaluator, dense }
}

pub fn covariance_problem(n: usize, leaf_size: usize, eta: f64, seed: u64) -> Problem {
    kernel_problem(
        KernelSpec::ExponentialCovariance { correlation_length: 0.2 },
        n,
        leaf_size,
        eta,
        seed,
    )
}

pub fn build(problem: &Problem, cfg: &ConstructionConfig) -> H2Matrix {
    let sampler = DenseSampler::new(problem.dense.clone());
    h2sketch::construct(&sampler, &problem.evaluator, &problem.tree, &problem.mtree, cfg)
        .unwrap()
        .0
}

pub fn random_multivector(n: usize, d: usize, seed: u64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(i, j)| {
        rng::normal(seed, rng::stream::TEST, 7, i as u64, j as u64)
    })
}

pub fn fro_norm(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
