//! Blockwise solvers and the shared run loop.
//!
//! [`V1`] tracks per-block Hessians and inverts them; [`V2`] tracks the
//! solution of each block's Hessian system with Hessian-vector products only.
//! Both share the lower-level `y` update, the `s` tracker and the STORM
//! estimate `z` of the hypergradient.

mod v1;
mod v2;

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng;
use rayon::prelude::*;

pub use v1::{StateV1, V1};
pub use v2::{phi_grad, StateV2, V2};

use crate::block::BlockVector;
use crate::error::{param_err, shape_err, Error, Result};
use crate::oracle::{self, ErrorProbe, LOWER_TOL};
use crate::params::{HyperParams, WarmStart};
use crate::problem::{block_sample, Batch, BatchKind, BatchTag, ProblemOracle};
use crate::rng::{substream, Purpose};
use crate::trace::{Trace, TraceRow};

/// A solver: how to build a state and how to advance it by one iteration.
pub trait Algorithm {
    type State: SolverState;
    const NAME: &'static str;

    fn init(problem: &dyn ProblemOracle, params: &HyperParams, x0: Option<&DVector<f64>>) -> Result<Self::State>;

    /// One iteration. `params` may change between calls; pending lazy work is
    /// flushed with the old step sizes first.
    fn step(problem: &dyn ProblemOracle, params: &HyperParams, state: &mut Self::State) -> Result<()>;
}

pub trait SolverState: Clone + Send {
    /// 1-based index of the next iteration.
    fn iter(&self) -> u64;
    fn x(&self) -> &DVector<f64>;
    fn z(&self) -> &DVector<f64>;
    /// Oracle samples consumed so far, initialization included.
    fn samples(&self) -> u64;
    /// Lower iterates with pending lazy steps applied.
    fn current_y(&self) -> BlockVector;
    /// Applies every pending lazy step.
    fn flush(&mut self);
    /// Starts a new stage at this point: flushes, makes the previous iterates
    /// equal to the current ones and restarts the iteration counter at 1.
    fn begin_stage(&mut self);
    /// Feasibility of the projected trackers.
    fn check_invariants(&self) -> Result<()>;
    fn probe(&self, problem: &dyn ProblemOracle) -> Result<ErrorProbe>;
    /// Second-order tracker error reported in the trace.
    fn tracker_error(probe: &ErrorProbe) -> Option<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    #[default]
    Last,
    /// Returns the state at an iteration drawn uniformly from `1..=T`.
    RandomIterate,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Trace row every this many iterations; 0 records only the endpoints.
    pub eval_every: u64,
    pub exact_grad: bool,
    pub upper_loss: bool,
    pub delta_y: bool,
    pub delta_tracker: bool,
    pub wall_clock: bool,
    /// Full invariant check after every iteration.
    pub check_invariants: bool,
    pub selection: Selection,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            eval_every: 100,
            exact_grad: false,
            upper_loss: false,
            delta_y: false,
            delta_tracker: false,
            wall_clock: true,
            check_invariants: false,
            selection: Selection::Last,
        }
    }
}

impl RunOptions {
    /// No diagnostics, endpoints only.
    pub fn quiet() -> Self {
        Self {
            eval_every: 0,
            wall_clock: false,
            ..Self::default()
        }
    }

    pub fn with_diagnostics(mut self) -> Self {
        self.exact_grad = true;
        self.upper_loss = true;
        self.delta_y = true;
        self.delta_tracker = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput<S> {
    pub trace: Trace,
    /// State after the last iteration, flushed.
    pub last: S,
    /// State chosen by the selection rule, flushed.
    pub selected: S,
    /// Number of completed iterations in `selected`.
    pub selected_iter: u64,
}

pub fn run<A: Algorithm>(
    problem: &dyn ProblemOracle,
    params: &HyperParams,
    options: &RunOptions,
    x0: Option<&DVector<f64>>,
) -> Result<RunOutput<A::State>> {
    let state = A::init(problem, params, x0)?;
    run_from::<A>(problem, params, options, state, &mut |_| Ok(()))
}

/// Runs `params.iterations` iterations from `state`, calling `observer` after
/// each one.
pub fn run_from<A: Algorithm>(
    problem: &dyn ProblemOracle,
    params: &HyperParams,
    options: &RunOptions,
    mut state: A::State,
    observer: &mut dyn FnMut(&A::State) -> Result<()>,
) -> Result<RunOutput<A::State>> {
    let total = params.iterations;
    let pick = match options.selection {
        Selection::Last => total,
        Selection::RandomIterate if total == 0 => 0,
        Selection::RandomIterate => substream(params.seed, 0, 0, Purpose::RandomIterate).random_range(1..=total),
    };
    let start = Instant::now();
    let mut trace = Trace::new();
    let mut selected = None;
    trace.push(evaluate::<A>(problem, options, &state, 0, start)?)?;
    for done in 1..=total {
        if done == pick {
            let mut snap = state.clone();
            snap.flush();
            selected = Some(snap);
        }
        A::step(problem, params, &mut state)?;
        if options.check_invariants {
            state.check_invariants()?;
        }
        observer(&state)?;
        let due = options.eval_every > 0 && done % options.eval_every == 0;
        if due || done == total {
            trace.push(evaluate::<A>(problem, options, &state, done, start)?)?;
        }
    }
    state.flush();
    let (selected, selected_iter) = match selected {
        Some(s) => (s, pick - 1),
        None => (state.clone(), total),
    };
    Ok(RunOutput {
        trace,
        last: state,
        selected,
        selected_iter,
    })
}

fn evaluate<A: Algorithm>(
    problem: &dyn ProblemOracle,
    options: &RunOptions,
    state: &A::State,
    iter: u64,
    start: Instant,
) -> Result<TraceRow> {
    let wall_ms = if options.wall_clock {
        start.elapsed().as_secs_f64() * 1e3
    } else {
        0.0
    };
    let x = state.x();
    let exact_grad_norm = if options.exact_grad {
        Some(oracle::exact_hypergradient(problem, x)?.norm())
    } else {
        None
    };
    let upper_loss = if options.upper_loss {
        Some(oracle::upper_objective(problem, x, &state.current_y()))
    } else {
        None
    };
    let (delta_y, delta_tracker) = if options.delta_y || options.delta_tracker {
        let probe = state.probe(problem)?;
        (
            options.delta_y.then_some(probe.delta_y),
            if options.delta_tracker {
                A::State::tracker_error(&probe)
            } else {
                None
            },
        )
    } else {
        (None, None)
    };
    Ok(TraceRow {
        iter,
        samples: state.samples(),
        wall_ms,
        z_norm: state.z().norm(),
        exact_grad_norm,
        upper_loss,
        delta_y,
        delta_tracker,
    })
}

/// Blocks and batches of one iteration.
#[derive(Debug, Clone)]
pub struct Draw {
    pub blocks: Vec<usize>,
    pub upper: Vec<Batch>,
    pub lower: Vec<Batch>,
}

impl Draw {
    pub fn samples(&self) -> u64 {
        self.upper.iter().chain(&self.lower).map(|b| b.len() as u64).sum()
    }
}

/// Sampled blocks and per-block batches of iteration `t`. Depends only on
/// `(seed, t)`, never on the iterates.
pub fn draw(problem: &dyn ProblemOracle, params: &HyperParams, t: u64) -> Result<Draw> {
    let m = problem.num_blocks();
    let mut rng = substream(params.seed, t, 0, Purpose::BlockSample);
    let blocks = block_sample(m, params.blocks_per_iter, &mut rng)?;
    let mut upper = Vec::with_capacity(blocks.len());
    let mut lower = Vec::with_capacity(blocks.len());
    for &i in &blocks {
        let tag = |kind| Some(BatchTag { iter: t, block: i, kind });
        let mut rng = substream(params.seed, t, i as u64, Purpose::UpperBatch);
        upper.push(problem.sample_upper_batch(i, params.batch_size, tag(BatchKind::Upper), &mut rng));
        let mut rng = substream(params.seed, t, i as u64, Purpose::LowerBatch);
        lower.push(problem.sample_lower_batch(i, params.batch_size, tag(BatchKind::Lower), &mut rng));
    }
    Ok(Draw { blocks, upper, lower })
}

/// Brings a block that last moved at `clock` up to iteration `t` while the
/// direction `s` was frozen: `K = t − clock` steps of size `step`.
/// Afterwards `y_prev` holds the iterate one step before `y`.
pub fn lazy_y_catchup(y: &mut DVector<f64>, y_prev: &mut DVector<f64>, s: &DVector<f64>, k: u64, step: f64) {
    if k == 0 {
        return;
    }
    let before = &*y - s * ((k - 1) as f64 * step);
    *y = &before - s * step;
    *y_prev = before;
}

/// Replays `k` projected steps `v ← Π(v − step u)` with `u` frozen.
pub fn delayed_v_catchup(v: &mut DVector<f64>, v_prev: &mut DVector<f64>, u: &DVector<f64>, k: u64, step: f64, radius: f64) {
    for _ in 0..k {
        let next = crate::estimators::ball_project(&(&*v - u * step), radius);
        *v_prev = std::mem::replace(v, next);
    }
}

/// Evaluates `f` on `0..n` in order, on the rayon pool when `parallel`.
pub(crate) fn map_blocks<T, F>(parallel: bool, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Mean of vectors in the given order.
pub(crate) fn ordered_mean<'a>(dim: usize, items: impl Iterator<Item = &'a DVector<f64>>) -> DVector<f64> {
    let mut acc = DVector::zeros(dim);
    let mut n = 0usize;
    for g in items {
        acc += g;
        n += 1;
    }
    if n > 0 {
        acc /= n as f64;
    }
    acc
}

pub(crate) fn initial_x(problem: &dyn ProblemOracle, x0: Option<&DVector<f64>>) -> Result<DVector<f64>> {
    let d = problem.upper_dim();
    match x0 {
        Some(x) if x.len() != d => shape_err(format!("x0 has length {}, expected {d}", x.len())),
        Some(x) if x.iter().any(|v| !v.is_finite()) => Err(Error::NonFinite("x0".into())),
        Some(x) => Ok(x.clone()),
        None => Ok(DVector::zeros(d)),
    }
}

/// Batch used to build the initial trackers of `block`.
pub(crate) fn init_batch(problem: &dyn ProblemOracle, params: &HyperParams, block: usize, kind: BatchKind) -> Batch {
    let (count, purpose) = match kind {
        BatchKind::Upper => (problem.upper_sample_count(block), Purpose::InitUpper),
        BatchKind::Lower => (problem.lower_sample_count(block), Purpose::InitLower),
    };
    match params.init_batch {
        None => Batch::full(count),
        Some(size) => {
            let mut rng = substream(params.seed, 0, block as u64, purpose);
            let tag = Some(BatchTag { iter: 0, block, kind });
            match kind {
                BatchKind::Upper => problem.sample_upper_batch(block, size, tag, &mut rng),
                BatchKind::Lower => problem.sample_lower_batch(block, size, tag, &mut rng),
            }
        }
    }
}

fn warm_step(problem: &dyn ProblemOracle, params: &HyperParams) -> f64 {
    params.warm_start_step.unwrap_or(1.0 / problem.constants().l_g)
}

/// Batch of warm-start step `k` drawn from `rng`.
fn warm_batch(
    problem: &dyn ProblemOracle,
    params: &HyperParams,
    block: usize,
    kind: BatchKind,
    rng: &mut dyn rand::RngCore,
) -> Batch {
    match (params.init_batch, kind) {
        (None, BatchKind::Upper) => problem.full_upper_batch(block),
        (None, BatchKind::Lower) => problem.full_lower_batch(block),
        (Some(size), BatchKind::Upper) => problem.sample_upper_batch(block, size, None, rng),
        (Some(size), BatchKind::Lower) => problem.sample_lower_batch(block, size, None, rng),
    }
}

/// Initial lower iterate of `block` and the samples spent on it.
pub(crate) fn warm_start_y(
    problem: &dyn ProblemOracle,
    params: &HyperParams,
    x: &DVector<f64>,
    block: usize,
    how: oracle::LinearSolve,
) -> Result<(DVector<f64>, u64)> {
    match params.warm_start {
        WarmStart::Exact => Ok((oracle::exact_lower_solve_with(problem, x, block, LOWER_TOL, how)?, 0)),
        WarmStart::Steps(n) => {
            let step = warm_step(problem, params);
            let mut y = DVector::zeros(problem.lower_dim(block));
            let mut samples = 0;
            for k in 0..n {
                let mut rng = substream(params.seed, k as u64, block as u64, Purpose::WarmStart);
                let batch = warm_batch(problem, params, block, BatchKind::Lower, &mut rng);
                samples += batch.len() as u64;
                y -= problem.grad_y_g(block, x, &y, &batch) * step;
            }
            Ok((y, samples))
        }
    }
}

/// Initial Hessian-system solution of `block` and the samples spent on it.
/// Uses Hessian-vector products only.
pub(crate) fn warm_start_v(
    problem: &dyn ProblemOracle,
    params: &HyperParams,
    x: &DVector<f64>,
    y: &DVector<f64>,
    block: usize,
    radius: f64,
) -> Result<(DVector<f64>, u64)> {
    let ball = |v: &DVector<f64>| crate::estimators::ball_project(v, radius);
    match params.warm_start {
        WarmStart::Exact => {
            let v = oracle::exact_v(problem, block, x, y, oracle::LinearSolve::ConjugateGradient)?;
            Ok((ball(&v), 0))
        }
        WarmStart::Steps(n) => {
            let step = warm_step(problem, params);
            let mut v = DVector::zeros(problem.lower_dim(block));
            let mut samples = 0;
            for k in 0..n {
                let mut rng = substream(params.seed, k as u64, block as u64, Purpose::WarmStartSubproblem);
                let lower = warm_batch(problem, params, block, BatchKind::Lower, &mut rng);
                let upper = warm_batch(problem, params, block, BatchKind::Upper, &mut rng);
                samples += (lower.len() + upper.len()) as u64;
                let grad = phi_grad(problem, block, &v, x, y, &upper, &lower);
                v = ball(&(&v - grad * step));
            }
            Ok((v, samples))
        }
    }
}

pub(crate) fn check_finite(name: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|a| a.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.into()))
    }
}

pub(crate) fn ensure_positive_radius(r: f64) -> Result<f64> {
    if r > 0.0 && r.is_finite() {
        Ok(r)
    } else {
        param_err(format!("ball radius must be positive and finite, got {r}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::make_quadratic;
    use approx::assert_relative_eq;

    fn dv(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn catchup_matches_repeated_steps() {
        let s = dv(&[1.0, -2.0]);
        let mut y = dv(&[0.5, 0.5]);
        let mut yp = y.clone();
        let mut y_ref = y.clone();
        let mut yp_ref = y.clone();
        for _ in 0..5 {
            yp_ref = y_ref.clone();
            y_ref -= &s * 0.1;
        }
        lazy_y_catchup(&mut y, &mut yp, &s, 5, 0.1);
        assert_relative_eq!(y, y_ref, epsilon = 1e-14);
        assert_relative_eq!(yp, yp_ref, epsilon = 1e-14);
    }

    #[test]
    fn zero_catchup_is_a_no_op() {
        let mut y = dv(&[1.0]);
        let mut yp = dv(&[2.0]);
        lazy_y_catchup(&mut y, &mut yp, &dv(&[3.0]), 0, 0.5);
        assert_eq!((y[0], yp[0]), (1.0, 2.0));
    }

    #[test]
    fn delayed_v_stays_in_ball() {
        let mut v = dv(&[0.0, 0.0]);
        let mut vp = v.clone();
        delayed_v_catchup(&mut v, &mut vp, &dv(&[-1.0, 0.0]), 10, 1.0, 2.5);
        assert_relative_eq!(v, dv(&[2.5, 0.0]));
        assert_relative_eq!(vp, dv(&[2.5, 0.0]));
    }

    #[test]
    fn draw_is_reproducible_and_tagged() {
        let p = make_quadratic(6, 3, 2, 0.1, 4).unwrap();
        let params = HyperParams {
            blocks_per_iter: 3,
            batch_size: 5,
            ..HyperParams::default()
        };
        let a = draw(&p, &params, 7).unwrap();
        let b = draw(&p, &params, 7).unwrap();
        assert_eq!(a.blocks, b.blocks);
        assert_eq!(a.blocks.len(), 3);
        for (k, &i) in a.blocks.iter().enumerate() {
            assert_eq!(a.upper[k].indices(), b.upper[k].indices());
            let tag = a.lower[k].tag().unwrap();
            assert_eq!((tag.iter, tag.block, tag.kind), (7, i, BatchKind::Lower));
        }
        assert_eq!(a.samples(), 30);
        assert_ne!(draw(&p, &params, 8).unwrap().upper[0].indices(), a.upper[0].indices());
    }

    #[test]
    fn x0_is_checked() {
        let p = make_quadratic(2, 3, 2, 0.0, 1).unwrap();
        assert!(initial_x(&p, Some(&dv(&[1.0]))).is_err());
        assert!(initial_x(&p, Some(&dv(&[1.0, f64::NAN, 0.0]))).is_err());
        assert_eq!(initial_x(&p, None).unwrap().len(), 3);
    }
}
