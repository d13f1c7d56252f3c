//! End-to-end compression accuracy against dense kernel oracles.

mod common;

use common::{build, covariance_problem, kernel_problem};
use h2sketch::h2::H2Sampler;
use h2sketch::{
    estimate_operator_norm, estimate_rel_error, ConstructionConfig, DenseSampler, KernelSpec,
};

fn check_accuracy(spec: KernelSpec, n: usize, leaf_size: usize) {
    let eps = 1e-6;
    let problem = kernel_problem(spec, n, leaf_size, 0.7, 21);
    let cfg = ConstructionConfig { eps, ..ConstructionConfig::default() };
    let m = build(&problem, &cfg);
    let dense = DenseSampler::new(problem.dense.clone());
    let err = estimate_rel_error(&H2Sampler(&m), &dense, 10, 22).unwrap();
    assert!(err <= 10.0 * eps, "{spec:?} n={n}: error {err}");
}

#[test]
fn covariance_meets_tolerance_at_512() {
    check_accuracy(KernelSpec::ExponentialCovariance { correlation_length: 0.2 }, 512, 64);
}

#[test]
fn covariance_meets_tolerance_at_2048() {
    check_accuracy(KernelSpec::ExponentialCovariance { correlation_length: 0.2 }, 2048, 64);
}

#[test]
fn helmholtz_meets_tolerance_at_512() {
    check_accuracy(KernelSpec::HelmholtzIe { wavenumber: 3.0 }, 512, 64);
}

#[test]
fn helmholtz_meets_tolerance_at_2048() {
    check_accuracy(KernelSpec::HelmholtzIe { wavenumber: 3.0 }, 2048, 64);
}

// Small leaves give the partition real admissible structure at this size.
#[test]
fn covariance_meets_tolerance_with_fine_partition() {
    check_accuracy(KernelSpec::ExponentialCovariance { correlation_length: 0.2 }, 2048, 16);
}

#[test]
fn helmholtz_meets_tolerance_with_fine_partition() {
    check_accuracy(KernelSpec::HelmholtzIe { wavenumber: 3.0 }, 2048, 16);
}

#[test]
fn looser_tolerance_gives_larger_error() {
    let problem = covariance_problem(512, 32, 0.7, 23);
    let dense = DenseSampler::new(problem.dense.clone());
    let err_at = |eps: f64| {
        let cfg = ConstructionConfig { eps, ..ConstructionConfig::default() };
        let m = build(&problem, &cfg);
        estimate_rel_error(&H2Sampler(&m), &dense, 10, 24).unwrap()
    };
    assert!(err_at(1e-3) >= err_at(1e-8));
}

#[test]
fn operator_norm_estimate_matches_long_rayleigh_iteration() {
    let problem = covariance_problem(4096, 64, 0.7, 25);
    let dense = DenseSampler::new(problem.dense.clone());
    let est = estimate_operator_norm(&dense, 20, 26);
    // Long power iteration with a different start as the reference.
    let reference = estimate_operator_norm(&dense, 200, 27);
    assert!((est - reference).abs() / reference < 0.05, "{est} vs {reference}");
}
