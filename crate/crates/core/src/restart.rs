//! Multi-stage restarting under a gradient-dominance (PL) condition.
//!
//! Stage `k` targets `ε_k = ε_1 / 2^{k−1}` and runs the inner solver with
//! parameters scaled to that target, starting from the state the previous
//! stage returned.

use log::warn;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::params::{tau_bar_cap, variance_factor, HyperParams};
use crate::problem::{DeclaredConstants, ProblemOracle};
use crate::rng::derive_seed;
use crate::solver::{run_from, Algorithm, RunOptions, SolverState};
use crate::trace::Trace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    V1,
    V2,
}

/// Constants of the stage schedule. The orders are fixed; these scale them.
/// The defaults were tuned once on the strongly convex quadratic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageMultipliers {
    /// `ε_1 = c_eps κ / μ`.
    pub c_eps: f64,
    /// `α_k = min{1/2, c_mix μ ε_k / κ}`.
    pub c_mix: f64,
    /// Step sizes `c_step (I/m) √α_k`. For v2 the `x` and `y` steps are also
    /// bounded by `τ̄_k`.
    pub c_step: f64,
    /// `T_k = c_len max{1/(μη_k), 1/β_k, 1/τ_k[, 1/τ̄_k]}`.
    pub c_len: f64,
    /// Lower clamp on `ε_1`.
    pub eps_floor: f64,
    /// Upper clamp on `T_k`.
    pub max_stage_iterations: u64,
}

impl Default for StageMultipliers {
    fn default() -> Self {
        Self {
            c_eps: 1.0,
            c_mix: 0.006,
            c_step: 1.0,
            c_len: 40.0,
            eps_floor: 1e-12,
            max_stage_iterations: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    pub epsilon: f64,
    pub params: HyperParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSchedule {
    pub mu: f64,
    pub epsilon_1: f64,
    pub stages: Vec<Stage>,
}

impl StageSchedule {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn total_iterations(&self) -> u64 {
        self.stages.iter().map(|s| s.params.iterations).sum()
    }
}

/// Stage count for a target: `⌈log₂(ε_1/ε)⌉ + 1`, or 1 when `ε ≥ ε_1`.
pub fn stage_count(epsilon_1: f64, eps_target: f64) -> usize {
    if eps_target >= epsilon_1 {
        1
    } else {
        (epsilon_1 / eps_target).log2().ceil() as usize + 1
    }
}

/// Stage parameters for `eps_target`. Budgets, switches and `I`, `B` come from
/// `base`; stage `k` gets seed `derive_seed(base.seed, k)`.
pub fn build_schedule(
    eps_target: f64,
    base: &HyperParams,
    m: usize,
    constants: &DeclaredConstants,
    variant: Variant,
    mult: &StageMultipliers,
) -> Result<StageSchedule> {
    let Some(mu) = constants.mu.filter(|mu| *mu > 0.0) else {
        return param_err("restart needs a positive PL constant mu; this problem declares none");
    };
    if !(eps_target > 0.0) {
        return param_err(format!("target must be positive, got {eps_target}"));
    }
    for (name, c) in [("c_eps", mult.c_eps), ("c_mix", mult.c_mix), ("c_step", mult.c_step), ("c_len", mult.c_len)] {
        if !(c > 0.0 && c.is_finite()) {
            return param_err(format!("{name} must be positive and finite, got {c}"));
        }
    }
    constants.validate()?;
    let i = base.blocks_per_iter;
    let b = base.batch_size;
    if i == 0 || i > m || b == 0 {
        return param_err(format!("restart needs 1 <= I <= m and B >= 1, got I = {i}, B = {b}"));
    }
    let kappa = variance_factor(m, i, b);
    let epsilon_1 = (mult.c_eps * kappa / mu).max(mult.eps_floor);
    let count = stage_count(epsilon_1, eps_target);
    if eps_target >= epsilon_1 {
        warn!("target {eps_target} is not below the first-stage target {epsilon_1}; using one stage");
    }
    let radius = match base.ball_radius {
        Some(r) => r,
        None => constants.ball_radius().unwrap_or(1.0 / constants.lambda),
    };
    let ratio = i as f64 / m as f64;
    let tau = 2.0 / (3.0 * constants.l_g);
    let mut stages = Vec::with_capacity(count);
    for k in 0..count {
        let epsilon = epsilon_1 / 2f64.powi(k as i32);
        let alpha = (mult.c_mix * mu * epsilon / kappa).min(0.5);
        let step = mult.c_step * ratio * alpha.sqrt();
        let tau_bar_t = step.min(tau_bar_cap(constants, radius));
        // v2 moves y and x no faster than v
        let limit = match variant {
            Variant::V1 => step,
            Variant::V2 => tau_bar_t,
        };
        let tau_t = limit.min(1.0);
        let mut eta = limit;
        if let Some(l_f) = constants.l_f {
            eta = eta.min(1.0 / (2.0 * l_f));
        }
        let mut longest = (1.0 / (mu * eta)).max(1.0 / alpha).max(1.0 / (tau * tau_t));
        if variant == Variant::V2 {
            longest = longest.max(1.0 / tau_bar_t);
        }
        let iterations = ((mult.c_len * longest).ceil() as u64).clamp(1, mult.max_stage_iterations.max(1));
        let params = HyperParams {
            alpha,
            alpha_bar: alpha,
            beta: alpha,
            tau,
            tau_t,
            tau_bar_t,
            eta,
            iterations,
            seed: derive_seed(base.seed, k as u64),
            ..base.clone()
        };
        params.validate(m, Some(constants))?;
        stages.push(Stage { epsilon, params });
    }
    Ok(StageSchedule { mu, epsilon_1, stages })
}

#[derive(Debug, Clone)]
pub struct StageOutput {
    pub epsilon: f64,
    pub trace: Trace,
    /// Upper iterate returned by the stage.
    pub x: DVector<f64>,
    /// Number of completed stage iterations in the returned state.
    pub selected_iter: u64,
    /// Cumulative samples at the returned state.
    pub samples: u64,
}

#[derive(Debug, Clone)]
pub struct RestartOutput<S> {
    pub stages: Vec<StageOutput>,
    pub last: S,
}

/// Chains the stages. With `carry` each stage continues from the full state
/// the previous stage returned; without it the solver is re-initialized at the
/// returned upper iterate.
pub fn run_restarted<A: Algorithm>(
    problem: &dyn ProblemOracle,
    schedule: &StageSchedule,
    options: &RunOptions,
    x0: Option<&DVector<f64>>,
    carry: bool,
    observer: &mut dyn FnMut(usize, &A::State) -> Result<()>,
) -> Result<RestartOutput<A::State>> {
    let Some(first) = schedule.stages.first() else {
        return param_err("empty stage schedule");
    };
    let mut state = A::init(problem, &first.params, x0)?;
    let mut stages = Vec::with_capacity(schedule.len());
    // samples spent by discarded states
    let mut offset = 0;
    for (k, stage) in schedule.stages.iter().enumerate() {
        if k > 0 {
            if carry {
                state.begin_stage();
            } else {
                offset += state.samples();
                let x = state.x().clone();
                state = A::init(problem, &stage.params, Some(&x))?;
            }
        }
        let out = run_from::<A>(problem, &stage.params, options, state, &mut |s| observer(k, s))?;
        stages.push(StageOutput {
            epsilon: stage.epsilon,
            trace: out.trace,
            x: out.selected.x().clone(),
            selected_iter: out.selected_iter,
            samples: offset + out.selected.samples(),
        });
        state = out.selected;
    }
    Ok(RestartOutput { stages, last: state })
}
