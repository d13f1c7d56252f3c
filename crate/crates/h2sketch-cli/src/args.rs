use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "h2sketch", about = "Sketching-based H^2 matrix construction and benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build an H^2 matrix and optionally save it with its stats.
    Construct(RunArgs),
    /// Build (or load) an H^2 matrix and measure errors against a dense oracle.
    Verify(RunArgs),
    /// Recompress an H^2 matrix updated with a random symmetric low-rank product.
    Update(UpdateArgs),
    /// Construction sweep over problem sizes with CSV output.
    Bench(BenchArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum KernelChoice {
    /// Exponential covariance kernel.
    Cov,
    /// Helmholtz volume integral-equation kernel.
    Ie,
    /// Symmetric dense matrix read from --dense-file.
    DenseFile,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq)]
pub enum PointsMode {
    /// Regular lattice in the unit cube (n must be a perfect dim-th power).
    Grid,
    /// I.i.d. uniform points in the unit cube.
    Random,
}

#[derive(Args, Clone, Debug)]
pub struct RunArgs {
    #[arg(long, value_enum, default_value_t = KernelChoice::Cov)]
    pub kernel: KernelChoice,

    /// Problem size (ignored when --points-file or --dense-file provides it).
    #[arg(long, default_value_t = 4096)]
    pub n: usize,

    #[arg(long, default_value_t = 3)]
    pub dim: usize,

    #[arg(long, value_enum, default_value_t = PointsMode::Random)]
    pub points: PointsMode,

    /// Correlation length of the covariance kernel.
    #[arg(long = "corr-length", default_value_t = 0.2)]
    pub corr_length: f64,

    /// Wavenumber of the IE kernel.
    #[arg(long, default_value_t = 3.0)]
    pub wavenumber: f64,

    /// Admissibility parameter.
    #[arg(long, default_value_t = 0.7)]
    pub eta: f64,

    #[arg(long = "leaf-size", default_value_t = 64)]
    pub leaf_size: usize,

    /// Relative compression tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub eps: f64,

    /// Sample block size d for adaptive runs.
    #[arg(long = "sample-block", default_value_t = 32)]
    pub sample_block: usize,

    /// Disable adaptivity and take this many samples in one shot.
    #[arg(long = "fixed-samples")]
    pub fixed_samples: Option<usize>,

    /// Cap on total samples in adaptive mode.
    #[arg(long = "max-samples", default_value_t = 1024)]
    pub max_samples: usize,

    #[arg(long, default_value_t = 1)]
    pub seed: u64,

    /// Binary point file (dim: u32, n: u64, then n*dim f64).
    #[arg(long = "points-file")]
    pub points_file: Option<PathBuf>,

    /// Square dense matrix file used as both sampler and entry oracle.
    #[arg(long = "dense-file")]
    pub dense_file: Option<PathBuf>,

    /// Write run statistics as JSON.
    #[arg(long = "out-json")]
    pub out_json: Option<PathBuf>,

    /// Write bench rows as CSV.
    #[arg(long = "out-csv")]
    pub out_csv: Option<PathBuf>,

    /// Save the constructed H^2 matrix.
    #[arg(long = "save-h2")]
    pub save_h2: Option<PathBuf>,

    /// Load an H^2 matrix instead of constructing one (verify).
    #[arg(long = "load-h2")]
    pub load_h2: Option<PathBuf>,

    /// Export the cluster tree as JSON for debugging.
    #[arg(long = "dump-tree")]
    pub dump_tree: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct UpdateArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Rank of the random symmetric update.
    #[arg(long = "update-rank", default_value_t = 32)]
    pub update_rank: usize,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Comma-separated problem sizes.
    #[arg(long = "n-list", value_delimiter = ',', required = true)]
    pub n_list: Vec<usize>,

    /// Minimum sample budget for the untimed bootstrap construction.
    #[arg(long = "seed-samples", default_value_t = 256)]
    pub seed_samples: usize,
}
