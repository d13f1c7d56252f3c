//! Fixed-schema CSV for bench sweeps. Floats are printed with Rust's
//! shortest-round-trip formatting so rows parse back to identical values.

use anyhow::{bail, Context, Result};

pub const HEADER: &str = "n,kernel,adaptive,eta,leaf_size,eps,sample_block,seed,\
time_total_ms,rand_ms,sample_ms,bsr_subtract_ms,convergence_ms,id_ms,shrink_ms,gen_ms,misc_ms,\
mem_total_bytes,mem_u_bytes,mem_e_bytes,mem_b_bytes,mem_d_bytes,mem_indices_bytes,\
total_samples,rank_min,rank_max,csp";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub kernel: String,
    pub adaptive: bool,
    pub eta: f64,
    pub leaf_size: usize,
    pub eps: f64,
    pub sample_block: usize,
    pub seed: u64,
    pub time_total_ms: f64,
    pub rand_ms: f64,
    pub sample_ms: f64,
    pub bsr_subtract_ms: f64,
    pub convergence_ms: f64,
    pub id_ms: f64,
    pub shrink_ms: f64,
    pub gen_ms: f64,
    pub misc_ms: f64,
    pub mem_total_bytes: usize,
    pub mem_u_bytes: usize,
    pub mem_e_bytes: usize,
    pub mem_b_bytes: usize,
    pub mem_d_bytes: usize,
    pub mem_indices_bytes: usize,
    pub total_samples: usize,
    pub rank_min: usize,
    pub rank_max: usize,
    pub csp: usize,
}

impl BenchRow {
    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.n,
            self.kernel,
            self.adaptive,
            self.eta,
            self.leaf_size,
            self.eps,
            self.sample_block,
            self.seed,
            self.time_total_ms,
            self.rand_ms,
            self.sample_ms,
            self.bsr_subtract_ms,
            self.convergence_ms,
            self.id_ms,
            self.shrink_ms,
            self.gen_ms,
            self.misc_ms,
            self.mem_total_bytes,
            self.mem_u_bytes,
            self.mem_e_bytes,
            self.mem_b_bytes,
            self.mem_d_bytes,
            self.mem_indices_bytes,
            self.total_samples,
            self.rank_min,
            self.rank_max,
            self.csp,
        )
    }

    pub fn parse_line(line: &str) -> Result<Self> {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 27 {
            bail!("expected 27 fields, got {}", f.len());
        }
        let mut it = f.into_iter();
        let mut next = || it.next().context("field missing");
        Ok(Self {
            n: next()?.parse()?,
            kernel: next()?.to_string(),
            adaptive: next()?.parse()?,
            eta: next()?.parse()?,
            leaf_size: next()?.parse()?,
            eps: next()?.parse()?,
            sample_block: next()?.parse()?,
            seed: next()?.parse()?,
            time_total_ms: next()?.parse()?,
            rand_ms: next()?.parse()?,
            sample_ms: next()?.parse()?,
            bsr_subtract_ms: next()?.parse()?,
            convergence_ms: next()?.parse()?,
            id_ms: next()?.parse()?,
            shrink_ms: next()?.parse()?,
            gen_ms: next()?.parse()?,
            misc_ms: next()?.parse()?,
            mem_total_bytes: next()?.parse()?,
            mem_u_bytes: next()?.parse()?,
            mem_e_bytes: next()?.parse()?,
            mem_b_bytes: next()?.parse()?,
            mem_d_bytes: next()?.parse()?,
            mem_indices_bytes: next()?.parse()?,
            total_samples: next()?.parse()?,
            rank_min: next()?.parse()?,
            rank_max: next()?.parse()?,
            csp: next()?.parse()?,
        })
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_line());
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut lines = text.lines();
    let header = lines.next().context("empty csv")?;
    if header != HEADER {
        bail!("unexpected header");
    }
    lines.map(BenchRow::parse_line).collect()
}
