//! Problem construction, per-seed runs and their CSV/JSON outputs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use bsvrb::oracle::{exact_hypergradient, exact_objective};
use bsvrb::problems::{load_libsvm, synthetic, Dataset, HyperWeightMbbo, HyperWeightOptions, QuadraticMbbo, QuadraticOptions};
use bsvrb::restart::{build_schedule, run_restarted};
use bsvrb::rng::derive_seed;
use bsvrb::solver::{run, SolverState};
use bsvrb::{Algorithm, BlockVector, CountingOracle, HyperParams, ProblemOracle, RunOptions, Trace, TraceRow, V1, V2};
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::{AlgorithmKind, ModelSpec, ProblemSpec, RunConfig};
use crate::stats::median;

/// A constructed problem together with what is needed to score it.
pub enum Built {
    Quadratic(QuadraticMbbo),
    Hyperweight {
        problem: HyperWeightMbbo,
        /// Test examples as columns.
        test: DMatrix<f64>,
        test_y: Vec<f64>,
    },
}

impl Built {
    pub fn oracle(&self) -> &dyn ProblemOracle {
        match self {
            Built::Quadratic(p) => p,
            Built::Hyperweight { problem, .. } => problem,
        }
    }
}

fn build_model(data: Dataset, model: &ModelSpec, seed: u64) -> Result<Built> {
    let data = data
        .with_split(model.train_frac, model.val_frac, seed)?
        .corrupt(model.drop_pos_frac, model.flip_prob, seed)?;
    let opts = HyperWeightOptions {
        lambda_reg: model.lambda_reg,
        dense_hessian: model.dense_hessian,
        ..Default::default()
    };
    let problem = HyperWeightMbbo::new(&data, model.m, (model.temp_min, model.temp_max), seed, opts)?;
    let test = data.dense_with_intercept(&data.split().test).transpose();
    let test_y = data.labels_of(&data.split().test);
    Ok(Built::Hyperweight { problem, test, test_y })
}

/// Builds the problem for run seed `run_seed`. Problem seeds are only mixed
/// with the run seed when `vary` is set.
pub fn build_problem(spec: &ProblemSpec, run_seed: u64, vary: bool) -> Result<Built> {
    let mix = |s: u64| if vary { derive_seed(s, run_seed) } else { s };
    Ok(match spec {
        ProblemSpec::Quadratic(q) => Built::Quadratic(QuadraticMbbo::random(
            q.m,
            q.d_x,
            q.d_y,
            QuadraticOptions {
                lambda_reg: q.lambda_reg,
                noise_sigma: q.noise_sigma,
                samples: q.samples,
                seed: mix(q.seed),
            },
        )?),
        ProblemSpec::Hyperweight(h) => {
            let data = synthetic(h.n, h.d, h.density, h.pos_frac, mix(h.data_seed))?;
            build_model(data, &h.model, mix(h.model.seed))?
        }
        ProblemSpec::Libsvm(l) => {
            let data = load_libsvm(&l.path)?;
            build_model(data, &l.model, mix(l.model.seed))?
        }
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StageSummary {
    pub epsilon: f64,
    pub iterations: u64,
    pub selected_iter: u64,
    pub exact_grad_norm: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Accuracy {
    /// Block whose lower solution scores best on validation.
    pub block: usize,
    pub temperature: f64,
    pub validation: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SeedSummary {
    pub algorithm: &'static str,
    pub seed: u64,
    pub iterations: u64,
    pub selected_iter: u64,
    pub samples: u64,
    pub wall_ms: f64,
    pub final_z_norm: f64,
    /// `‖∇F(x)‖` at the returned iterate.
    pub final_exact_grad_norm: f64,
    pub final_objective: f64,
    /// `F(x) − F*`, for problems with a known optimum.
    pub objective_gap: Option<f64>,
    /// Includes calls made by the exact diagnostics.
    pub dense_hessian_calls: u64,
    pub accuracy: Option<Accuracy>,
    pub stages: Vec<StageSummary>,
}

/// What a run leaves behind, independent of the solver.
pub struct Outcome {
    pub trace: Trace,
    pub x: DVector<f64>,
    pub y: BlockVector,
    pub z_norm: f64,
    pub iterations: u64,
    pub selected_iter: u64,
    pub stages: Vec<StageSummary>,
}

pub fn run_options(cfg: &RunConfig) -> RunOptions {
    RunOptions {
        eval_every: cfg.output.eval_every,
        exact_grad: cfg.output.exact_grad,
        upper_loss: cfg.output.upper_loss,
        delta_y: cfg.output.delta_y,
        delta_tracker: cfg.output.delta_tracker,
        wall_clock: cfg.output.wall_clock,
        check_invariants: cfg.output.check_invariants,
        selection: cfg.selection(),
    }
}

pub fn run_plain<A: Algorithm>(problem: &dyn ProblemOracle, params: &HyperParams, options: &RunOptions) -> Result<Outcome> {
    let out = run::<A>(problem, params, options, None)?;
    let s = &out.selected;
    Ok(Outcome {
        x: s.x().clone(),
        y: s.current_y(),
        z_norm: s.z().norm(),
        iterations: params.iterations,
        selected_iter: out.selected_iter,
        trace: out.trace,
        stages: Vec::new(),
    })
}

/// Joins stage traces into one: iterations are counted across stages and
/// `samples` is the total spent so far, discarded work included.
fn join_stage_traces(traces: &[Trace], carry: bool) -> Result<Trace> {
    let mut joined = Trace::new();
    let mut iter_offset = 0;
    let mut spent = 0;
    for (k, t) in traces.iter().enumerate() {
        let rows = t.rows();
        let Some(first) = rows.first() else { continue };
        let base = if k == 0 || !carry { 0 } else { first.samples };
        for row in rows.iter().skip(usize::from(k > 0)) {
            joined.push(TraceRow {
                iter: iter_offset + row.iter,
                samples: spent + row.samples - base,
                ..row.clone()
            })?;
        }
        let last = rows.last().unwrap_or(first);
        iter_offset += last.iter;
        spent += last.samples - base;
    }
    Ok(joined)
}

pub fn run_restart<A: Algorithm>(cfg: &RunConfig, problem: &dyn ProblemOracle, params: &HyperParams) -> Result<Outcome> {
    let variant = cfg.algorithm.restart_variant().context("not a restart algorithm")?;
    let schedule = build_schedule(
        cfg.restart.eps_target,
        params,
        problem.num_blocks(),
        problem.constants(),
        variant,
        &cfg.restart.multipliers,
    )?;
    log::info!(
        "restart: {} stages, epsilon_1 = {:.3e}, {} iterations",
        schedule.len(),
        schedule.epsilon_1,
        schedule.total_iterations()
    );
    let out = run_restarted::<A>(problem, &schedule, &run_options(cfg), None, cfg.restart.carry, &mut |_, _| Ok(()))?;
    let traces: Vec<Trace> = out.stages.iter().map(|s| s.trace.clone()).collect();
    let stages = out
        .stages
        .iter()
        .zip(&schedule.stages)
        .map(|(o, s)| {
            Ok(StageSummary {
                epsilon: o.epsilon,
                iterations: s.params.iterations,
                selected_iter: o.selected_iter,
                exact_grad_norm: exact_hypergradient(problem, &o.x)?.norm(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Outcome {
        trace: join_stage_traces(&traces, cfg.restart.carry)?,
        x: out.last.x().clone(),
        y: out.last.current_y(),
        z_norm: out.last.z().norm(),
        iterations: schedule.total_iterations(),
        selected_iter: out.stages.last().map_or(0, |s| s.selected_iter),
        stages,
    })
}

fn dispatch(cfg: &RunConfig, problem: &dyn ProblemOracle, params: &HyperParams) -> Result<Outcome> {
    let opts = run_options(cfg);
    match cfg.algorithm {
        AlgorithmKind::BsvrbV1 | AlgorithmKind::BaselineMa => run_plain::<V1>(problem, params, &opts),
        AlgorithmKind::BsvrbV2 => run_plain::<V2>(problem, params, &opts),
        AlgorithmKind::ReBsvrbV1 => run_restart::<V1>(cfg, problem, params),
        AlgorithmKind::ReBsvrbV2 => run_restart::<V2>(cfg, problem, params),
    }
}

fn score(built: &Built, y: &BlockVector) -> Option<Accuracy> {
    let Built::Hyperweight { problem, test, test_y } = built else {
        return None;
    };
    let mut best: Option<Accuracy> = None;
    for (i, w) in y.iter().enumerate() {
        let val = problem.validation_accuracy(w);
        if best.as_ref().is_none_or(|b| val > b.validation) {
            best = Some(Accuracy {
                block: i,
                temperature: problem.temperatures()[i],
                validation: val,
                test: HyperWeightMbbo::accuracy(test, test_y, w),
            });
        }
    }
    best
}

/// One seed: build, run, evaluate. Returns the trace and the summary.
pub fn run_seed(cfg: &RunConfig, seed: u64) -> Result<(Trace, SeedSummary)> {
    let built = build_problem(&cfg.problem, seed, cfg.vary_problem)?;
    let counting = CountingOracle::new(built.oracle());
    let params = HyperParams {
        seed,
        ..cfg.params.clone()
    };
    let start = Instant::now();
    let out = dispatch(cfg, &counting, &params).with_context(|| format!("seed {seed}"))?;
    let wall_ms = if cfg.output.wall_clock {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let problem = built.oracle();
    let final_objective = exact_objective(problem, &out.x)?;
    let objective_gap = match &built {
        Built::Quadratic(q) => Some(q.objective(&out.x) - q.min_value()),
        Built::Hyperweight { .. } => None,
    };
    let summary = SeedSummary {
        algorithm: cfg.algorithm.name(),
        seed,
        iterations: out.iterations,
        selected_iter: out.selected_iter,
        samples: out.trace.last().map_or(0, |r| r.samples),
        wall_ms,
        final_z_norm: out.z_norm,
        final_exact_grad_norm: exact_hypergradient(problem, &out.x)?.norm(),
        final_objective,
        objective_gap,
        dense_hessian_calls: counting.dense_hessian_calls(),
        accuracy: score(&built, &out.y),
        stages: out.stages,
    };
    Ok((out.trace, summary))
}

#[derive(Debug, Serialize)]
struct SeedReport<'a> {
    summary: &'a SeedSummary,
    config: &'a RunConfig,
    git: &'a str,
}

#[derive(Debug, Serialize)]
pub struct Aggregate {
    pub algorithm: &'static str,
    pub seeds: Vec<u64>,
    pub median_final_exact_grad_norm: f64,
    pub median_samples: f64,
    pub median_wall_ms: f64,
    pub median_objective_gap: Option<f64>,
    pub median_test_accuracy: Option<f64>,
    pub git: String,
    pub config: RunConfig,
    pub runs: Vec<SeedSummary>,
}

pub fn git_describe() -> String {
    std::process::Command::new("git")
        .args(["describe", "--always", "--dirty", "--tags"])
        .output()
        .ok()
        .filter(|o| o.status.success())
        .and_then(|o| String::from_utf8(o.stdout).ok())
        .map(|s| s.trim().to_owned())
        .filter(|s| !s.is_empty())
        .unwrap_or_else(|| "unknown".to_owned())
}

pub fn trace_path(dir: &Path, algorithm: AlgorithmKind, seed: u64) -> PathBuf {
    dir.join(format!("{}_seed{seed}.csv", algorithm.name()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("cannot write {}", path.display()))
}

fn median_of(runs: &[SeedSummary], f: impl Fn(&SeedSummary) -> Option<f64>) -> Option<f64> {
    let v: Option<Vec<f64>> = runs.iter().map(f).collect();
    v.map(|v| median(&v))
}

/// Runs every seed and writes `<algo>_seed<k>.csv`, `<algo>_seed<k>.json`
/// and `<algo>_summary.json` into the output directory.
pub fn run_experiment(cfg: &RunConfig) -> Result<Aggregate> {
    fs::create_dir_all(&cfg.out_dir).with_context(|| format!("cannot create {}", cfg.out_dir.display()))?;
    let git = git_describe();
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let (trace, summary) = run_seed(cfg, seed)?;
        let csv = trace_path(&cfg.out_dir, cfg.algorithm, seed);
        trace.save(&csv)?;
        write_json(
            &csv.with_extension("json"),
            &SeedReport {
                summary: &summary,
                config: cfg,
                git: &git,
            },
        )?;
        log::info!(
            "{} seed {seed}: |grad F| = {:.3e}, samples = {}",
            cfg.algorithm.name(),
            summary.final_exact_grad_norm,
            summary.samples
        );
        runs.push(summary);
    }
    let agg = Aggregate {
        algorithm: cfg.algorithm.name(),
        seeds: cfg.seeds.clone(),
        median_final_exact_grad_norm: median_of(&runs, |r| Some(r.final_exact_grad_norm)).unwrap_or(f64::NAN),
        median_samples: median_of(&runs, |r| Some(r.samples as f64)).unwrap_or(f64::NAN),
        median_wall_ms: median_of(&runs, |r| Some(r.wall_ms)).unwrap_or(f64::NAN),
        median_objective_gap: median_of(&runs, |r| r.objective_gap),
        median_test_accuracy: median_of(&runs, |r| r.accuracy.as_ref().map(|a| a.test)),
        git,
        config: cfg.clone(),
        runs,
    };
    write_json(&cfg.out_dir.join(format!("{}_summary.json", cfg.algorithm.name())), &agg)?;
    Ok(agg)
}
