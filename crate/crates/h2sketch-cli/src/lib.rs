//! Library behind the `h2sketch` binary: problem assembly, verification
//! against dense oracles, low-rank-update recompression and size sweeps.

pub mod args;
pub mod csv;

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use ndarray::{Array2, ArrayView2};

use h2sketch::h2::{make_updated_evaluator, make_updated_sampler, H2Sampler, DENSE_GUARD};
use h2sketch::kernel::{dense_matrix, DenseEvaluator, EntryEvaluator, KernelEvaluator};
use h2sketch::{
    build_matrix_tree, construct, estimate_rel_error, rng, ClusterTree, ConstructionConfig,
    ConstructionStats, DenseSampler, H2Matrix, KernelSampler, KernelSpec, LowRankUpdate,
    MatrixTree, PointSet, Sampler,
};

use args::{BenchArgs, KernelChoice, PointsMode, RunArgs, UpdateArgs};
use csv::BenchRow;

enum Kind {
    Kernel { spec: KernelSpec, tree_points: PointSet },
    Dense { matrix: Arc<Array2<f64>>, perm: Arc<Vec<usize>> },
}

/// A fully assembled problem: geometry, block partition, and the operator in
/// tree ordering.
pub struct Problem {
    pub tree: ClusterTree,
    pub mtree: MatrixTree,
    kind: Kind,
}

pub enum ProblemEvaluator {
    Kernel(KernelEvaluator),
    Dense(DenseEvaluator),
}

impl EntryEvaluator for ProblemEvaluator {
    fn n(&self) -> usize {
        match self {
            ProblemEvaluator::Kernel(e) => e.n(),
            ProblemEvaluator::Dense(e) => e.n(),
        }
    }

    fn eval_block(&self, rows: &[usize], cols: &[usize]) -> Array2<f64> {
        match self {
            ProblemEvaluator::Kernel(e) => e.eval_block(rows, cols),
            ProblemEvaluator::Dense(e) => e.eval_block(rows, cols),
        }
    }
}

pub enum ExactSampler {
    /// Matrix-free kernel products, O(n^2 d) per apply.
    Kernel(KernelSampler),
    Dense(DenseSampler),
}

impl Sampler for ExactSampler {
    fn n(&self) -> usize {
        match self {
            ExactSampler::Kernel(s) => s.n(),
            ExactSampler::Dense(s) => s.n(),
        }
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        match self {
            ExactSampler::Kernel(s) => s.apply(x),
            ExactSampler::Dense(s) => s.apply(x),
        }
    }
}

impl Problem {
    pub fn n(&self) -> usize {
        self.tree.n()
    }

    pub fn evaluator(&self) -> ProblemEvaluator {
        match &self.kind {
            Kind::Kernel { spec, tree_points } => ProblemEvaluator::Kernel(
                KernelEvaluator::new(*spec, tree_points.clone()).expect("validated spec"),
            ),
            Kind::Dense { matrix, perm } => {
                ProblemEvaluator::Dense(DenseEvaluator::permuted(matrix.clone(), perm.clone()))
            }
        }
    }

    /// Exact black-box multiply for the operator; matrix-free for kernels.
    pub fn exact_sampler(&self) -> ExactSampler {
        match &self.kind {
            Kind::Kernel { spec, tree_points } => {
                ExactSampler::Kernel(KernelSampler::new(*spec, tree_points.clone()))
            }
            Kind::Dense { matrix, perm } => {
                ExactSampler::Dense(DenseSampler::permuted(matrix.clone(), perm.clone()))
            }
        }
    }

    /// Dense matrix of the operator in tree ordering; the verification oracle.
    pub fn dense_oracle(&self) -> Result<Arc<Array2<f64>>> {
        let n = self.n();
        if n > DENSE_GUARD {
            bail!("problem size {n} exceeds the dense oracle guard {DENSE_GUARD}");
        }
        Ok(Arc::new(dense_matrix(&self.evaluator(), n)))
    }
}

/// Point generation for the experiment geometries: a regular lattice
/// including the endpoints, or i.i.d. uniform points from the counter-based
/// generator (identical across runs and thread counts).
pub fn generate_points(n: usize, dim: usize, mode: PointsMode, seed: u64) -> Result<PointSet> {
    Ok(match mode {
        PointsMode::Grid => PointSet::grid(n, dim)?,
        PointsMode::Random => PointSet::uniform_random(n, dim, seed)?,
    })
}

fn make_points(args: &RunArgs, n: usize) -> Result<PointSet> {
    if let Some(path) = &args.points_file {
        let points = PointSet::read_file(path)?;
        if points.len() != n {
            bail!("point file has {} points, expected {n}", points.len());
        }
        return Ok(points);
    }
    generate_points(n, args.dim, args.points, args.seed)
}

/// Assembles the geometry, trees and operator for a run, with `n` overriding
/// the command-line size (used by the bench sweep).
pub fn build_problem_sized(args: &RunArgs, n: usize) -> Result<Problem> {
    let file_matrix = match args.kernel {
        KernelChoice::DenseFile => {
            let path = args
                .dense_file
                .as_ref()
                .context("--kernel dense-file requires --dense-file")?;
            Some(Arc::new(h2sketch::h2::io::read_dense_file(path)?))
        }
        _ => None,
    };
    let n = file_matrix.as_ref().map_or(n, |m| m.nrows());
    let points = make_points(args, n)?;
    let tree = ClusterTree::build(&points, args.leaf_size)?;
    let mtree = build_matrix_tree(&tree, args.eta)?;
    let kind = match (args.kernel, file_matrix) {
        (KernelChoice::Cov, _) => Kind::Kernel {
            spec: KernelSpec::ExponentialCovariance { correlation_length: args.corr_length },
            tree_points: points.permuted(tree.perm()),
        },
        (KernelChoice::Ie, _) => Kind::Kernel {
            spec: KernelSpec::HelmholtzIe { wavenumber: args.wavenumber },
            tree_points: points.permuted(tree.perm()),
        },
        (KernelChoice::DenseFile, Some(matrix)) => {
            Kind::Dense { matrix, perm: Arc::new(tree.perm().to_vec()) }
        }
        (KernelChoice::DenseFile, None) => unreachable!(),
    };
    Ok(Problem { tree, mtree, kind })
}

pub fn build_problem(args: &RunArgs) -> Result<Problem> {
    build_problem_sized(args, args.n)
}

pub fn construction_config(args: &RunArgs) -> ConstructionConfig {
    let mut cfg = ConstructionConfig {
        eps: args.eps,
        sample_block: args.sample_block,
        adaptive: args.fixed_samples.is_none(),
        max_samples: args.max_samples,
        seed: args.seed,
        ..ConstructionConfig::default()
    };
    if let Some(total) = args.fixed_samples {
        cfg.sample_block = total;
        cfg.max_samples = cfg.max_samples.max(total);
    }
    cfg
}

fn write_outputs(args: &RunArgs, matrix: &H2Matrix, stats: &ConstructionStats) -> Result<()> {
    if let Some(path) = &args.save_h2 {
        matrix.save(path)?;
    }
    if let Some(path) = &args.out_json {
        std::fs::write(path, stats.to_json())?;
    }
    if let Some(path) = &args.dump_tree {
        std::fs::write(path, matrix.tree().to_json())?;
    }
    Ok(())
}

/// Builds the H^2 matrix with the exact (matrix-free or dense-file) sampler.
pub fn run_construct(args: &RunArgs) -> Result<(H2Matrix, ConstructionStats)> {
    let problem = build_problem(args)?;
    let sampler = problem.exact_sampler();
    let evaluator = problem.evaluator();
    let cfg = construction_config(args);
    let (matrix, stats) = construct(&sampler, &evaluator, &problem.tree, &problem.mtree, &cfg)?;
    write_outputs(args, &matrix, &stats)?;
    Ok((matrix, stats))
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct VerifyReport {
    pub n: usize,
    /// Power-method estimate of |K_comp - K|_2 / |K|_2.
    pub rel_error: f64,
    /// Max relative matvec discrepancy over 10 random vectors.
    pub matvec_error: f64,
    /// Max absolute extraction error over 100 random entries.
    pub entry_error: f64,
    pub stats: Option<ConstructionStats>,
}

/// Builds (or loads) the matrix, then measures errors against the dense
/// kernel-matrix oracle. Requires `n` within the dense guard.
pub fn run_verify(args: &RunArgs) -> Result<VerifyReport> {
    let problem = build_problem(args)?;
    let n = problem.n();
    let oracle = problem.dense_oracle()?;
    let dense_sampler = DenseSampler::new(oracle.clone());

    let (matrix, stats) = match &args.load_h2 {
        Some(path) => (H2Matrix::load(path)?, None),
        None => {
            let cfg = construction_config(args);
            let evaluator = problem.evaluator();
            let (m, s) =
                construct(&dense_sampler, &evaluator, &problem.tree, &problem.mtree, &cfg)?;
            write_outputs(args, &m, &s)?;
            (m, Some(s))
        }
    };

    let rel_error = estimate_rel_error(&H2Sampler(&matrix), &dense_sampler, 10, args.seed)?;

    let mut matvec_error = 0.0f64;
    for k in 0..10 {
        let x = Array2::from_shape_fn((n, 1), |(i, _)| {
            rng::normal(args.seed, rng::stream::TEST, k, i as u64, 0)
        });
        let got = matrix.matvec(x.view());
        let want = dense_sampler.apply(x.view());
        let num: f64 = (&got - &want).iter().map(|v| v * v).sum::<f64>().sqrt();
        let den: f64 = want.iter().map(|v| v * v).sum::<f64>().sqrt();
        matvec_error = matvec_error.max(num / den);
    }

    let mut requests = Vec::with_capacity(100);
    for k in 0..100u64 {
        let i = (rng::uniform(args.seed, rng::stream::TEST, 100, k, 0) * n as f64) as usize;
        let j = (rng::uniform(args.seed, rng::stream::TEST, 101, k, 0) * n as f64) as usize;
        requests.push((vec![i.min(n - 1)], vec![j.min(n - 1)]));
    }
    let extracted = matrix.extract_entries(&requests)?;
    let mut entry_error = 0.0f64;
    for ((rows, cols), block) in requests.iter().zip(&extracted) {
        let want = oracle[(rows[0], cols[0])];
        entry_error = entry_error.max((block[(0, 0)] - want).abs());
    }

    let report = VerifyReport { n, rel_error, matvec_error, entry_error, stats };
    if let Some(path) = &args.out_json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct UpdateReport {
    pub n: usize,
    pub update_rank: usize,
    /// Error of the recompressed matrix against dense(base) + U U^T.
    pub rel_error: f64,
    /// Fraction of clusters whose rank did not decrease under the update.
    pub rank_growth_fraction: f64,
    pub base_samples: usize,
    pub updated_samples: usize,
}

/// Builds a base H^2 matrix, applies a random rank-`p` symmetric update, and
/// recompresses the updated operator with the same algorithm.
pub fn run_update(args: &UpdateArgs) -> Result<UpdateReport> {
    let problem = build_problem(&args.run)?;
    let n = problem.n();
    if n > DENSE_GUARD {
        bail!("update verification needs n within the dense guard {DENSE_GUARD}");
    }
    let cfg = construction_config(&args.run);
    let exact = problem.exact_sampler();
    let evaluator = problem.evaluator();
    let (base, base_stats) =
        construct(&exact, &evaluator, &problem.tree, &problem.mtree, &cfg)?;

    let update = LowRankUpdate::random(n, args.update_rank, args.run.seed);
    let updated_sampler = make_updated_sampler(&base, &update);
    let updated_evaluator = make_updated_evaluator(&base, &update);
    let (updated, updated_stats) = construct(
        &updated_sampler,
        &updated_evaluator,
        &problem.tree,
        &problem.mtree,
        &cfg,
    )?;

    // Oracle: the base expansion plus the explicit low-rank product.
    let mut oracle = base.to_dense()?;
    if update.rank() > 0 {
        oracle += &update.factor().dot(&update.factor().t());
    }
    let rel_error =
        estimate_rel_error(&H2Sampler(&updated), &DenseSampler::new(Arc::new(oracle)), 10,
            args.run.seed)?;

    let grown = base
        .ranks()
        .iter()
        .zip(updated.ranks())
        .filter(|(b, u)| u >= b)
        .count();
    let rank_growth_fraction = grown as f64 / base.ranks().len() as f64;

    let report = UpdateReport {
        n,
        update_rank: args.update_rank,
        rel_error,
        rank_growth_fraction,
        base_samples: base_stats.total_samples,
        updated_samples: updated_stats.total_samples,
    };
    if let Some(path) = &args.run.out_json {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(path) = &args.run.save_h2 {
        updated.save(path)?;
    }
    Ok(report)
}

fn kernel_name(kernel: KernelChoice) -> &'static str {
    match kernel {
        KernelChoice::Cov => "cov",
        KernelChoice::Ie => "ie",
        KernelChoice::DenseFile => "dense-file",
    }
}

/// One bench step: an untimed bootstrap construction with the matrix-free
/// sampler provides a fast H^2 sampler, then the measured construction runs
/// against it (with one discarded warmup).
pub fn bench_step(
    args: &RunArgs,
    n: usize,
    seed_samples: usize,
    norm_hint: Option<f64>,
) -> Result<(BenchRow, f64)> {
    let problem = build_problem_sized(args, n)?;
    let evaluator = problem.evaluator();

    // The bootstrap must resolve the operator to the same tolerance as the
    // measured run, otherwise the sampler/evaluator mismatch pollutes the
    // residual sketches; adaptive sampling finds the required count itself.
    let seed_cfg = ConstructionConfig {
        eps: args.eps,
        sample_block: args.sample_block,
        adaptive: true,
        max_samples: args.max_samples.max(seed_samples),
        seed: args.seed,
        norm_estimate: norm_hint,
        ..ConstructionConfig::default()
    };
    let exact = problem.exact_sampler();
    let (seed_matrix, _) =
        construct(&exact, &evaluator, &problem.tree, &problem.mtree, &seed_cfg)?;
    drop(exact);
    let norm_out = h2sketch::estimate_operator_norm(&H2Sampler(&seed_matrix), 10, args.seed);

    let cfg = ConstructionConfig {
        norm_estimate: Some(norm_out),
        ..construction_config(args)
    };
    let fast = H2Sampler(&seed_matrix);
    // Warmup run, discarded; the reported time is the fastest of three
    // measured repetitions to damp allocator and paging noise.
    let (_, _) = construct(&fast, &evaluator, &problem.tree, &problem.mtree, &cfg)?;
    let mut wall_ms = f64::INFINITY;
    let mut result = None;
    for _ in 0..3 {
        // Identical seeds make every repetition bit-identical; free the
        // previous result before building the next to cap peak memory.
        result = None;
        let t0 = Instant::now();
        let run = construct(&fast, &evaluator, &problem.tree, &problem.mtree, &cfg)?;
        let elapsed = t0.elapsed().as_secs_f64() * 1e3;
        if elapsed < wall_ms {
            wall_ms = elapsed;
        }
        result = Some(run);
    }
    let (matrix, stats) = result.expect("at least one timed repetition");

    let mem = matrix.memory_report();
    let row = BenchRow {
        n,
        kernel: kernel_name(args.kernel).to_string(),
        adaptive: args.fixed_samples.is_none(),
        eta: args.eta,
        leaf_size: args.leaf_size,
        eps: args.eps,
        sample_block: cfg.sample_block,
        seed: args.seed,
        time_total_ms: wall_ms,
        rand_ms: stats.phase_ms.rand,
        sample_ms: stats.phase_ms.sample,
        bsr_subtract_ms: stats.phase_ms.bsr_subtract,
        convergence_ms: stats.phase_ms.convergence,
        id_ms: stats.phase_ms.id,
        shrink_ms: stats.phase_ms.shrink,
        gen_ms: stats.phase_ms.gen,
        misc_ms: stats.phase_ms.misc,
        mem_total_bytes: mem.total(),
        mem_u_bytes: mem.u,
        mem_e_bytes: mem.e,
        mem_b_bytes: mem.b,
        mem_d_bytes: mem.d,
        mem_indices_bytes: mem.indices,
        total_samples: stats.total_samples,
        rank_min: stats.rank_min(),
        rank_max: stats.rank_max(),
        csp: problem.mtree.sparsity_constant(),
    };
    Ok((row, norm_out))
}

/// Sweep over problem sizes; the operator-norm estimate is carried along the
/// chain (scaled by the size ratio) so bootstrap runs avoid power iterations
/// on the slow matrix-free sampler.
pub fn run_bench(args: &BenchArgs) -> Result<Vec<BenchRow>> {
    if args.run.kernel == KernelChoice::DenseFile {
        bail!("bench sweeps require a kernel operator, not a dense file");
    }
    if args.run.points_file.is_some() {
        bail!("bench sweeps generate points per size; --points-file is not supported");
    }
    let mut rows = Vec::new();
    let mut norm_hint: Option<(usize, f64)> = None;
    for &n in &args.n_list {
        let hint = norm_hint.map(|(n_prev, norm)| norm * n as f64 / n_prev as f64);
        let (row, norm) = bench_step(&args.run, n, args.seed_samples, hint)?;
        rows.push(row);
        norm_hint = Some((n, norm));
    }
    if let Some(path) = &args.run.out_csv {
        write_csv(path, &rows)?;
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[BenchRow]) -> Result<()> {
    std::fs::write(path, csv::to_csv(rows))?;
    Ok(())
}
