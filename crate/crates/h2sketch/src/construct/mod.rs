//! Bottom-up sketching construction of an H^2 matrix.
//!
//! One global sketch `Y = K * Omega` is refined level by level: dense leaf
//! blocks (and, above the leaves, the couplings already built for the
//! children) are subtracted from the local samples so each node sees only the
//! not-yet-compressed far field, a row ID of the residual sketch selects the
//! skeleton indices, and samples/input vectors are shrunk and projected to the
//! next level. In adaptive mode each level draws additional sample blocks
//! until every node passes the pivoted-QR convergence test; fresh columns are
//! swept up through the completed levels exactly as the original columns were
//! processed, so they are indistinguishable from columns drawn up front.

use std::time::Instant;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};

use crate::cluster::ClusterTree;
use crate::error::{Error, Result};
use crate::h2::{BlockStore, H2Matrix};
use crate::id::{is_converged, row_id};
use crate::kernel::{generate_blocks, EntryEvaluator};
use crate::mtree::MatrixTree;
use crate::norm::estimate_operator_norm;
use crate::par;
use crate::rng;
use crate::sampler::Sampler;

/// Parameters of a construction run.
#[derive(Debug, Clone)]
pub struct ConstructionConfig {
    /// Relative compression tolerance.
    pub eps: f64,
    /// Sample block size `d`; in fixed mode this is the total sample count.
    pub sample_block: usize,
    /// Adaptive sampling; when false a single fixed-size sketch is used.
    pub adaptive: bool,
    /// Hard cap on total samples in adaptive mode.
    pub max_samples: usize,
    pub seed: u64,
    /// Externally provided estimate of the operator 2-norm. When absent the
    /// norm is estimated by power iteration on the sampler.
    pub norm_estimate: Option<f64>,
    /// Power iterations for the norm estimate.
    pub norm_iters: usize,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        Self {
            eps: 1e-6,
            sample_block: 32,
            adaptive: true,
            max_samples: 1024,
            seed: 0,
            norm_estimate: None,
            norm_iters: 10,
        }
    }
}

impl ConstructionConfig {
    /// Fixed-sample configuration for a known representative rank `r`, with
    /// the usual oversampling of 10.
    pub fn fixed_for_rank(rank: usize) -> Self {
        Self { adaptive: false, sample_block: rank + 10, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::InvalidParameter(format!("eps must be in (0, 1), got {}", self.eps)));
        }
        if self.sample_block == 0 {
            return Err(Error::InvalidParameter("sample_block must be at least 1".into()));
        }
        if self.max_samples < self.sample_block {
            return Err(Error::InvalidParameter(format!(
                "max_samples {} below sample_block {}",
                self.max_samples, self.sample_block
            )));
        }
        if self.norm_iters == 0 {
            return Err(Error::InvalidParameter("norm_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// Wall time per construction phase, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhaseTimes {
    pub rand: f64,
    pub sample: f64,
    pub bsr_subtract: f64,
    pub convergence: f64,
    pub id: f64,
    pub shrink: f64,
    pub gen: f64,
    pub misc: f64,
}

impl PhaseTimes {
    pub fn sum(&self) -> f64 {
        self.rand
            + self.sample
            + self.bsr_subtract
            + self.convergence
            + self.id
            + self.shrink
            + self.gen
            + self.misc
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConstructionStats {
    pub n: usize,
    pub levels: usize,
    pub total_samples: usize,
    /// Adaptive refinement rounds per processed level.
    pub rounds_per_level: Vec<usize>,
    /// (min, max) rank per processed level, bottom-up.
    pub level_rank_ranges: Vec<(usize, usize)>,
    pub phase_ms: PhaseTimes,
    pub total_ms: f64,
}

impl ConstructionStats {
    pub fn rank_min(&self) -> usize {
        self.level_rank_ranges.iter().map(|r| r.0).min().unwrap_or(0)
    }

    pub fn rank_max(&self) -> usize {
        self.level_rank_ranges.iter().map(|r| r.1).max().unwrap_or(0)
    }

    /// Copy with wall times removed; the remaining fields are reproducible
    /// bit-for-bit for a fixed seed and configuration.
    pub fn with_zeroed_times(&self) -> Self {
        Self { phase_ms: PhaseTimes::default(), total_ms: 0.0, ..self.clone() }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn gaussian(n: usize, d: usize, seed: u64, round: u64) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(i, c)| {
        rng::normal(seed, rng::stream::OMEGA, round, i as u64, c as u64)
    })
}

fn check_finite(y: &Array2<f64>) -> Result<()> {
    if y.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteSamples)
    }
}

fn take_rows(a: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), a.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&a.row(r));
    }
    out
}

fn append_columns(a: &mut Array2<f64>, extra: &Array2<f64>) {
    *a = concatenate(Axis(1), &[a.view(), extra.view()]).expect("row counts agree");
}

fn vstack<'a>(a: ArrayView2<'a, f64>, b: ArrayView2<'a, f64>) -> Array2<f64> {
    concatenate(Axis(0), &[a, b]).expect("column counts agree")
}

struct Builder<'a> {
    tree: &'a ClusterTree,
    mtree: &'a MatrixTree,
    evaluator: &'a dyn EntryEvaluator,
    /// Per flat cluster id.
    ranks: Vec<usize>,
    skeletons: Vec<Vec<usize>>,
    /// Local skeleton indices J per cluster, for replaying new columns.
    selected: Vec<Vec<usize>>,
    /// ID interpolation per cluster: `U` at leaves, stacked `[E1; E2]` above.
    interps: Vec<Array2<f64>>,
    couplings: BlockStore,
    dense: BlockStore,
}

impl<'a> Builder<'a> {
    fn new(
        tree: &'a ClusterTree,
        mtree: &'a MatrixTree,
        evaluator: &'a dyn EntryEvaluator,
    ) -> Self {
        let nc = tree.num_clusters();
        Self {
            tree,
            mtree,
            evaluator,
            ranks: vec![0; nc],
            skeletons: vec![Vec::new(); nc],
            selected: vec![Vec::new(); nc],
            interps: vec![Array2::zeros((0, 0)); nc],
            couplings: BlockStore::new(tree.levels()),
            dense: BlockStore::new(tree.levels()),
        }
    }

    fn indices_of(&self, level: usize, idx: usize) -> Vec<usize> {
        let node = self.tree.node(level, idx);
        (node.begin..node.end).collect()
    }

    /// Evaluates every dense leaf block `D = K[I_s, I_t]` in one batched call;
    /// only the upper orientation is stored.
    fn generate_dense_blocks(&mut self) -> Result<()> {
        let leaves = self.tree.level_len(1);
        let mut keys = Vec::new();
        let mut requests = Vec::new();
        for i in 0..leaves {
            for &b in self.mtree.near(self.tree, 1, i) {
                if (b as usize) >= i {
                    keys.push((i as u32, b));
                    requests.push((self.indices_of(1, i), self.indices_of(1, b as usize)));
                }
            }
        }
        let blocks = generate_blocks(self.evaluator, &requests)?;
        for ((s, t), block) in keys.into_iter().zip(blocks) {
            self.dense.insert(1, s, t, block);
        }
        Ok(())
    }

    /// Evaluates the couplings `B = K[skel_s, skel_t]` for every admissible
    /// pair at `level`; the mirrored orientation is the exact transpose.
    fn generate_couplings(&mut self, level: usize) -> Result<()> {
        let count = self.tree.level_len(level);
        let mut keys = Vec::new();
        let mut requests = Vec::new();
        for i in 0..count {
            for &b in self.mtree.far(self.tree, level, i) {
                if (b as usize) > i {
                    keys.push((i as u32, b));
                    requests.push((
                        self.skeletons[self.tree.id(level, i)].clone(),
                        self.skeletons[self.tree.id(level, b as usize)].clone(),
                    ));
                }
            }
        }
        let blocks = generate_blocks(self.evaluator, &requests)?;
        for ((s, t), block) in keys.into_iter().zip(blocks) {
            self.couplings.insert(level, t, s, block.t().to_owned());
            self.couplings.insert(level, s, t, block);
        }
        Ok(())
    }

    /// Removes the known same-level contributions from the samples. At the
    /// leaf level these are the dense blocks over `N_tau`; above, the
    /// children's couplings over their admissible partners. Partners are
    /// accumulated in ascending index order.
    ///
    /// `child_omegas` is indexed by node at `level - 1` when `level > 1`
    /// (the projected input vectors), and by leaf otherwise.
    fn subtract_level(
        &self,
        level: usize,
        child_omegas: &[Array2<f64>],
        ys: &[Array2<f64>],
    ) -> Vec<Array2<f64>> {
        if level == 1 {
            par::map_indexed(ys.len(), |i| {
                let mut yloc = ys[i].clone();
                for &b in self.mtree.near(self.tree, 1, i) {
                    let (block, transposed) = if i as u32 <= b {
                        (self.dense.get(1, i as u32, b).expect("dense generated"), false)
                    } else {
                        (self.dense.get(1, b, i as u32).expect("dense generated"), true)
                    };
                    if transposed {
                        yloc -= &block.t().dot(&child_omegas[b as usize]);
                    } else {
                        yloc -= &block.dot(&child_omegas[b as usize]);
                    }
                }
                yloc
            })
        } else {
            par::map_indexed(ys.len(), |i| {
                let (c1, c2) = self.tree.children(level, i);
                let mut yloc = ys[i].clone();
                let r1 = child_omegas[c1].nrows();
                for (offset, c) in [(0, c1), (r1, c2)] {
                    let rc = child_omegas[c].nrows();
                    let mut part = yloc.slice_mut(s![offset..offset + rc, ..]);
                    for &b in self.mtree.far(self.tree, level - 1, c) {
                        let block =
                            self.couplings.get(level - 1, c as u32, b).expect("coupling built");
                        part -= &block.dot(&child_omegas[b as usize]);
                    }
                }
                yloc
            })
        }
    }

    /// Projects a processed level's inputs and samples to the next level:
    /// `omega_next = W^T omega`, `y_next = yloc[J, :]`.
    fn project_level(
        &self,
        level: usize,
        omegas: &[Array2<f64>],
        ylocs: &[Array2<f64>],
    ) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let om = par::map_indexed(omegas.len(), |i| {
            self.interps[self.tree.id(level, i)].t().dot(&omegas[i])
        });
        let ys = par::map_indexed(ylocs.len(), |i| {
            take_rows(&ylocs[i], &self.selected[self.tree.id(level, i)])
        });
        (om, ys)
    }

    /// Runs freshly drawn sample columns through all completed levels and
    /// returns their contribution to the current level's `omega` and `yloc`.
    fn sweep_columns(
        &self,
        target_level: usize,
        omega: &Array2<f64>,
        y: &Array2<f64>,
        phases: &mut PhaseTimes,
    ) -> (Vec<Array2<f64>>, Vec<Array2<f64>>) {
        let leaves = self.tree.level_len(1);
        let slice_leaf = |m: &Array2<f64>, i: usize| {
            let node = self.tree.node(1, i);
            m.slice(s![node.begin..node.end, ..]).to_owned()
        };
        let mut cur_om: Vec<Array2<f64>> = (0..leaves).map(|i| slice_leaf(omega, i)).collect();
        let cur_y: Vec<Array2<f64>> = (0..leaves).map(|i| slice_leaf(y, i)).collect();

        let t0 = Instant::now();
        let mut cur_yloc = self.subtract_level(1, &cur_om, &cur_y);
        phases.bsr_subtract += ms(t0);
        if target_level == 1 {
            return (cur_om, cur_yloc);
        }

        let t0 = Instant::now();
        let (mut prev_om, mut prev_y) = self.project_level(1, &cur_om, &cur_yloc);
        phases.shrink += ms(t0);

        for level in 2..=target_level {
            let count = self.tree.level_len(level);
            let merge = |parts: &[Array2<f64>]| -> Vec<Array2<f64>> {
                (0..count)
                    .map(|i| {
                        let (c1, c2) = self.tree.children(level, i);
                        vstack(parts[c1].view(), parts[c2].view())
                    })
                    .collect()
            };
            cur_om = merge(&prev_om);
            let ys = merge(&prev_y);
            let t0 = Instant::now();
            cur_yloc = self.subtract_level(level, &prev_om, &ys);
            phases.bsr_subtract += ms(t0);
            if level == target_level {
                return (cur_om, cur_yloc);
            }
            let t0 = Instant::now();
            (prev_om, prev_y) = self.project_level(level, &cur_om, &cur_yloc);
            phases.shrink += ms(t0);
        }
        unreachable!("loop returns at target level")
    }

    /// Row ID of every node's residual sketch at `eps_abs`; records ranks,
    /// skeletons, bases and transfers.
    fn skeletonize_level(
        &mut self,
        level: usize,
        ylocs: &[Array2<f64>],
        eps_abs: f64,
        bases: &mut [Array2<f64>],
        transfers: &mut [Array2<f64>],
    ) -> Result<()> {
        let ids = par::map_indexed(ylocs.len(), |i| row_id(ylocs[i].view(), eps_abs));
        for (i, id_res) in ids.into_iter().enumerate() {
            let id_res = id_res?;
            let flat = self.tree.id(level, i);
            self.ranks[flat] = id_res.rank;
            self.skeletons[flat] = if level == 1 {
                let begin = self.tree.node(1, i).begin;
                id_res.skeleton.iter().map(|&j| begin + j).collect()
            } else {
                let (c1, c2) = self.tree.children(level, i);
                let merged: Vec<usize> = self.skeletons[self.tree.id(level - 1, c1)]
                    .iter()
                    .chain(self.skeletons[self.tree.id(level - 1, c2)].iter())
                    .copied()
                    .collect();
                id_res.skeleton.iter().map(|&j| merged[j]).collect()
            };
            if level == 1 {
                bases[i] = id_res.interpolation.clone();
            } else {
                let (c1, c2) = self.tree.children(level, i);
                let id1 = self.tree.id(level - 1, c1);
                let id2 = self.tree.id(level - 1, c2);
                let r1 = self.ranks[id1];
                transfers[id1] = id_res.interpolation.slice(s![..r1, ..]).to_owned();
                transfers[id2] = id_res.interpolation.slice(s![r1.., ..]).to_owned();
            }
            self.selected[flat] = id_res.skeleton;
            self.interps[flat] = id_res.interpolation;
        }
        Ok(())
    }
}

/// Runs the construction against a black-box sampler and an entry evaluator
/// that must describe the same symmetric operator over the tree ordering.
pub fn construct(
    sampler: &dyn Sampler,
    evaluator: &dyn EntryEvaluator,
    tree: &ClusterTree,
    mtree: &MatrixTree,
    cfg: &ConstructionConfig,
) -> Result<(H2Matrix, ConstructionStats)> {
    cfg.validate()?;
    let n = tree.n();
    if sampler.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: sampler.n() });
    }
    if evaluator.n() != n {
        return Err(Error::DimensionMismatch { expected: n, got: evaluator.n() });
    }

    let total_start = Instant::now();
    let mut phases = PhaseTimes::default();
    let levels = tree.levels();
    // Levels at or above the last admissible pair contribute no couplings;
    // bases there would only absorb truncation noise, so they are skipped.
    let processed_top = (1..levels)
        .rev()
        .find(|&l| {
            mtree.blocks_at(l).iter().any(|b| b.status == crate::mtree::BlockStatus::AdmissibleLeaf)
        })
        .unwrap_or(0);
    let mut builder = Builder::new(tree, mtree, evaluator);
    let mut bases: Vec<Array2<f64>> =
        (0..tree.level_len(1)).map(|i| Array2::zeros((tree.node(1, i).len(), 0))).collect();
    let mut transfers: Vec<Array2<f64>> =
        vec![Array2::zeros((0, 0)); tree.num_clusters()];
    let mut rounds_per_level = vec![0usize; processed_top];
    let mut level_rank_ranges = Vec::new();
    let mut total_samples = 0usize;

    if processed_top == 0 {
        // Every block is a dense leaf (or the tree is a single cluster):
        // the evaluator provides the full content, no sketching at all.
        let t0 = Instant::now();
        builder.generate_dense_blocks()?;
        phases.gen += ms(t0);
    } else {
        let t0 = Instant::now();
        let norm = match cfg.norm_estimate {
            Some(v) => v,
            None => estimate_operator_norm(sampler, cfg.norm_iters, cfg.seed),
        };
        phases.sample += ms(t0);
        if !norm.is_finite() || norm < 0.0 {
            return Err(Error::NonFiniteSamples);
        }
        let eps_abs = cfg.eps * norm;

        let d = cfg.sample_block;
        let t0 = Instant::now();
        let omega0 = gaussian(n, d, cfg.seed, 0);
        phases.rand += ms(t0);
        let t0 = Instant::now();
        let y0 = sampler.apply(omega0.view());
        phases.sample += ms(t0);
        check_finite(&y0)?;
        let mut current_d = d;
        let mut round = 0u64;

        // Projected inputs/samples of the previous level, indexed per node.
        let mut child_om: Vec<Array2<f64>> = Vec::new();
        let mut child_y: Vec<Array2<f64>> = Vec::new();

        for level in 1..=processed_top {
            let count = tree.level_len(level);
            let (mut omegas, mut ylocs) = if level == 1 {
                let t0 = Instant::now();
                builder.generate_dense_blocks()?;
                phases.gen += ms(t0);
                let slice_leaf = |m: &Array2<f64>, i: usize| {
                    let node = tree.node(1, i);
                    m.slice(s![node.begin..node.end, ..]).to_owned()
                };
                let omegas: Vec<Array2<f64>> =
                    (0..count).map(|i| slice_leaf(&omega0, i)).collect();
                let ys: Vec<Array2<f64>> = (0..count).map(|i| slice_leaf(&y0, i)).collect();
                let t0 = Instant::now();
                let ylocs = builder.subtract_level(1, &omegas, &ys);
                phases.bsr_subtract += ms(t0);
                (omegas, ylocs)
            } else {
                let merged_om: Vec<Array2<f64>> = (0..count)
                    .map(|i| {
                        let (c1, c2) = tree.children(level, i);
                        vstack(child_om[c1].view(), child_om[c2].view())
                    })
                    .collect();
                let ys: Vec<Array2<f64>> = (0..count)
                    .map(|i| {
                        let (c1, c2) = tree.children(level, i);
                        vstack(child_y[c1].view(), child_y[c2].view())
                    })
                    .collect();
                let t0 = Instant::now();
                let ylocs = builder.subtract_level(level, &child_om, &ys);
                phases.bsr_subtract += ms(t0);
                (merged_om, ylocs)
            };

            if cfg.adaptive {
                loop {
                    let t0 = Instant::now();
                    let converged =
                        par::map_indexed(count, |i| is_converged(ylocs[i].view(), eps_abs));
                    phases.convergence += ms(t0);
                    if converged.iter().all(|c| *c) {
                        break;
                    }
                    if current_d + d > cfg.max_samples {
                        return Err(Error::MaxSamplesExceeded {
                            level,
                            max_samples: cfg.max_samples,
                        });
                    }
                    round += 1;
                    rounds_per_level[level - 1] += 1;
                    let t0 = Instant::now();
                    let omega_new = gaussian(n, d, cfg.seed, round);
                    phases.rand += ms(t0);
                    let t0 = Instant::now();
                    let y_new = sampler.apply(omega_new.view());
                    phases.sample += ms(t0);
                    check_finite(&y_new)?;
                    let (app_om, app_yloc) =
                        builder.sweep_columns(level, &omega_new, &y_new, &mut phases);
                    for i in 0..count {
                        append_columns(&mut omegas[i], &app_om[i]);
                        append_columns(&mut ylocs[i], &app_yloc[i]);
                    }
                    current_d += d;
                }
            }

            let t0 = Instant::now();
            builder.skeletonize_level(level, &ylocs, eps_abs, &mut bases, &mut transfers)?;
            phases.id += ms(t0);
            let ranks_here: Vec<usize> =
                (0..count).map(|i| builder.ranks[tree.id(level, i)]).collect();
            level_rank_ranges.push((
                ranks_here.iter().copied().min().unwrap_or(0),
                ranks_here.iter().copied().max().unwrap_or(0),
            ));

            if level < processed_top {
                let t0 = Instant::now();
                (child_om, child_y) = builder.project_level(level, &omegas, &ylocs);
                phases.shrink += ms(t0);
            }

            let t0 = Instant::now();
            builder.generate_couplings(level)?;
            phases.gen += ms(t0);
        }
        total_samples = current_d;
    }

    let total_ms = total_start.elapsed().as_secs_f64() * 1e3;
    phases.misc = (total_ms - phases.sum()).max(0.0);
    let stats = ConstructionStats {
        n,
        levels,
        total_samples,
        rounds_per_level,
        level_rank_ranges,
        phase_ms: phases,
        total_ms,
    };
    let matrix = H2Matrix::from_parts(
        tree.clone(),
        mtree.clone(),
        builder.ranks,
        builder.skeletons,
        bases,
        transfers,
        builder.couplings,
        builder.dense,
    );
    Ok((matrix, stats))
}

#[cfg(test)]
mod tests;
