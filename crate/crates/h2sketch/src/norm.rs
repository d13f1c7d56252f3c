//! Power-method estimates of operator norms and relative errors.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::rng;
use crate::sampler::Sampler;

fn power_iteration<F>(n: usize, iters: usize, seed: u64, salt: u64, apply: F) -> f64
where
    F: Fn(&Array2<f64>) -> Array2<f64>,
{
    let mut v = Array2::from_shape_fn((n, 1), |(i, _)| {
        rng::normal(seed, rng::stream::POWER, salt, i as u64, 0)
    });
    let norm = |x: &Array2<f64>| x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nv = norm(&v);
    if nv == 0.0 {
        return 0.0;
    }
    v /= nv;
    let mut estimate = 0.0;
    for _ in 0..iters {
        let w = apply(&v);
        estimate = norm(&w);
        if estimate == 0.0 {
            return 0.0;
        }
        v = w / estimate;
    }
    estimate
}

/// Spectral norm estimate of a symmetric operator after `iters` power steps
/// from a seeded start vector.
pub fn estimate_operator_norm(op: &dyn Sampler, iters: usize, seed: u64) -> f64 {
    assert!(iters >= 1);
    power_iteration(op.n(), iters, seed, 0, |v| op.apply(v.view()))
}

/// Estimates `|A - B|_2 / |B|_2` by power iteration on the difference
/// operator, with `B` as the reference.
pub fn estimate_rel_error(
    a: &dyn Sampler,
    b: &dyn Sampler,
    iters: usize,
    seed: u64,
) -> Result<f64> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch { expected: b.n(), got: a.n() });
    }
    assert!(iters >= 1);
    let diff = power_iteration(a.n(), iters, seed, 1, |v| {
        a.apply(v.view()) - b.apply(v.view())
    });
    let reference = power_iteration(b.n(), iters, seed, 2, |v| b.apply(v.view()));
    if reference == 0.0 {
        return Ok(if diff == 0.0 { 0.0 } else { f64::INFINITY });
    }
    Ok(diff / reference)
}
