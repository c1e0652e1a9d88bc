//! Iterations-to-threshold as `I` or `B` varies.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use bsvrb::{HyperParams, RunOptions, Selection, V1, V2};
use serde::Serialize;

use crate::config::{AlgorithmKind, RunConfig};
use crate::experiment::{build_problem, run_plain};
use crate::stats::{mad, median, nonincreasing_within_mad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Axis {
    /// `I`, blocks per iteration.
    Blocks,
    /// `B`, batch size.
    Batch,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: usize,
    /// Per seed; runs that never reach the threshold count as `T + 1`.
    pub iterations: Vec<u64>,
    pub reached: usize,
    pub median: f64,
    pub mad: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepTable {
    pub axis: Axis,
    pub threshold: f64,
    pub rows: Vec<SweepRow>,
    pub nonincreasing: bool,
}

/// Iterations until the exact hypergradient norm first drops to `threshold`,
/// or `T + 1`.
pub fn iterations_to(cfg: &RunConfig, params: &HyperParams, seed: u64, threshold: f64) -> Result<(u64, bool)> {
    let built = build_problem(&cfg.problem, seed, cfg.vary_problem)?;
    let opts = RunOptions {
        eval_every: cfg.output.eval_every.max(1),
        exact_grad: true,
        wall_clock: false,
        check_invariants: cfg.output.check_invariants,
        selection: Selection::Last,
        ..RunOptions::quiet()
    };
    let out = match cfg.algorithm {
        AlgorithmKind::BsvrbV1 | AlgorithmKind::BaselineMa => run_plain::<V1>(built.oracle(), params, &opts)?,
        AlgorithmKind::BsvrbV2 => run_plain::<V2>(built.oracle(), params, &opts)?,
        other => bail!("sweep-speedup runs single-stage solvers only, not {}", other.name()),
    };
    Ok(match out.trace.first_below(threshold) {
        Some(it) => (it, true),
        None => (params.iterations + 1, false),
    })
}

pub fn sweep(cfg: &RunConfig, axis: Axis, values: &[usize], threshold: f64) -> Result<SweepTable> {
    let m = cfg.problem.num_blocks();
    let mut rows = Vec::new();
    for &value in values {
        if axis == Axis::Blocks && value > m {
            log::warn!("skipping I = {value} > m = {m}");
            continue;
        }
        let mut params = cfg.params.clone();
        match axis {
            Axis::Blocks => params.blocks_per_iter = value,
            Axis::Batch => params.batch_size = value,
        }
        params.validate(m, None).with_context(|| format!("{axis:?} = {value}"))?;
        let mut iterations = Vec::with_capacity(cfg.seeds.len());
        let mut reached = 0;
        for &seed in &cfg.seeds {
            let p = HyperParams { seed, ..params.clone() };
            let (it, ok) = iterations_to(cfg, &p, seed, threshold)?;
            iterations.push(it);
            reached += usize::from(ok);
        }
        let f: Vec<f64> = iterations.iter().map(|&i| i as f64).collect();
        rows.push(SweepRow {
            value,
            median: median(&f),
            mad: mad(&f),
            iterations,
            reached,
        });
    }
    let medians: Vec<f64> = rows.iter().map(|r| r.median).collect();
    let mads: Vec<f64> = rows.iter().map(|r| r.mad).collect();
    Ok(SweepTable {
        axis,
        threshold,
        nonincreasing: nonincreasing_within_mad(&medians, &mads),
        rows,
    })
}

/// Writes `sweep_<axis>.csv` (one line per value and seed) and `sweep_<axis>.json`.
pub fn write_sweep(dir: &Path, seeds: &[u64], table: &SweepTable) -> Result<()> {
    fs::create_dir_all(dir)?;
    let name = match table.axis {
        Axis::Blocks => "sweep_blocks",
        Axis::Batch => "sweep_batch",
    };
    let mut w = csv::Writer::from_path(dir.join(format!("{name}.csv")))?;
    w.write_record(["value", "seed", "iterations"])?;
    for row in &table.rows {
        for (seed, it) in seeds.iter().zip(&row.iterations) {
            w.write_record([row.value.to_string(), seed.to_string(), it.to_string()])?;
        }
    }
    w.flush()?;
    fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(table)? + "\n")?;
    Ok(())
}
