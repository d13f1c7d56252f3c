use anyhow::Result;
use clap::Parser;

use h2sketch_cli::args::{Cli, Command};
use h2sketch_cli::csv::to_csv;

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Construct(args) => {
            let (matrix, stats) = h2sketch_cli::run_construct(&args)?;
            let mem = matrix.memory_report();
            println!(
                "constructed n={} levels={} samples={} ranks={}..{} memory={:.2} MiB in {:.1} ms",
                stats.n,
                stats.levels,
                stats.total_samples,
                stats.rank_min(),
                stats.rank_max(),
                mem.total() as f64 / (1 << 20) as f64,
                stats.total_ms,
            );
        }
        Command::Verify(args) => {
            let report = h2sketch_cli::run_verify(&args)?;
            println!(
                "verify n={} rel_error={:.3e} matvec_error={:.3e} entry_error={:.3e}",
                report.n, report.rel_error, report.matvec_error, report.entry_error,
            );
        }
        Command::Update(args) => {
            let report = h2sketch_cli::run_update(&args)?;
            println!(
                "update n={} rank={} rel_error={:.3e} rank_growth={:.1}% samples {} -> {}",
                report.n,
                report.update_rank,
                report.rel_error,
                report.rank_growth_fraction * 100.0,
                report.base_samples,
                report.updated_samples,
            );
        }
        Command::Bench(args) => {
            let rows = h2sketch_cli::run_bench(&args)?;
            print!("{}", to_csv(&rows));
        }
    }
    Ok(())
}
