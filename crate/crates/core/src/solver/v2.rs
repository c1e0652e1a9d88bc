//! Hessian-free solver: tracks `v_i ≈ (∇²_{yy} g_i)⁻¹ ∇_y f_i` by projected
//! steps on `φ_i(v) = ½ vᵀ∇²_{yy} g_i v − vᵀ∇_y f_i`.

use nalgebra::DVector;

use super::{
    check_finite, delayed_v_catchup, draw, ensure_positive_radius, init_batch, initial_x, lazy_y_catchup, map_blocks,
    ordered_mean, warm_start_v, warm_start_y, Algorithm, Draw, SolverState,
};
use crate::block::BlockVector;
use crate::error::{Error, Result};
use crate::estimators::{ball_project, storm_update, MsvrTracker, Projection};
use crate::oracle::{estimator_error_probe, ErrorProbe, LinearSolve, SecondOrder};
use crate::params::HyperParams;
use crate::problem::{Batch, BatchKind, ProblemOracle};

/// Hessian-vector-product solver.
#[derive(Debug, Clone, Copy, Default)]
pub struct V2;

/// Stochastic `∇_v φ_i(v, x, y) = ∇²_{yy} g_i v − ∇_y f_i`.
pub fn phi_grad(
    problem: &dyn ProblemOracle,
    block: usize,
    v: &DVector<f64>,
    x: &DVector<f64>,
    y: &DVector<f64>,
    upper: &Batch,
    lower: &Batch,
) -> DVector<f64> {
    problem.hessian_yy_g_vec(block, x, y, lower, v) - problem.grad_y_f(block, x, y, upper)
}

#[derive(Debug, Clone)]
pub struct StateV2 {
    t: u64,
    x: DVector<f64>,
    x_prev: DVector<f64>,
    y: Vec<DVector<f64>>,
    y_prev: Vec<DVector<f64>>,
    y_clock: Vec<u64>,
    y_step: f64,
    v: Vec<DVector<f64>>,
    v_prev: Vec<DVector<f64>>,
    v_clock: Vec<u64>,
    v_step: f64,
    radius: f64,
    s: MsvrTracker<DVector<f64>>,
    u: MsvrTracker<DVector<f64>>,
    z: DVector<f64>,
    samples: u64,
}

struct BlockEval {
    s_new: DVector<f64>,
    s_old: DVector<f64>,
    u_new: DVector<f64>,
    u_old: DVector<f64>,
    g: DVector<f64>,
    g_tilde: DVector<f64>,
}

fn hyper_term(
    problem: &dyn ProblemOracle,
    block: usize,
    x: &DVector<f64>,
    y: &DVector<f64>,
    v: &DVector<f64>,
    upper: &Batch,
    lower: &Batch,
) -> DVector<f64> {
    problem.grad_x_f(block, x, y, upper) - problem.jacobian_xy_g_vec(block, x, y, lower, v)
}

fn radius_of(problem: &dyn ProblemOracle, params: &HyperParams) -> Result<f64> {
    match params.ball_radius {
        Some(r) => ensure_positive_radius(r),
        None => problem.constants().ball_radius(),
    }
}

impl StateV2 {
    pub fn y_stored(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn v_stored(&self) -> &[DVector<f64>] {
        &self.v
    }

    pub fn y_clock(&self) -> &[u64] {
        &self.y_clock
    }

    pub fn v_clock(&self) -> &[u64] {
        &self.v_clock
    }

    pub fn s(&self) -> &[DVector<f64>] {
        self.s.values()
    }

    pub fn u(&self) -> &[DVector<f64>] {
        self.u.values()
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// `v` with pending delayed steps applied.
    pub fn current_v(&self) -> BlockVector {
        let blocks = (0..self.v.len())
            .map(|i| {
                let mut v = self.v[i].clone();
                let mut vp = self.v_prev[i].clone();
                delayed_v_catchup(&mut v, &mut vp, self.u.value(i), self.t - self.v_clock[i], self.v_step, self.radius);
                v
            })
            .collect();
        BlockVector::new(blocks)
    }

    fn catch_up(&mut self, block: usize) {
        let k = self.t - self.y_clock[block];
        lazy_y_catchup(&mut self.y[block], &mut self.y_prev[block], self.s.value(block), k, self.y_step);
        self.y_clock[block] = self.t;
        let k = self.t - self.v_clock[block];
        delayed_v_catchup(&mut self.v[block], &mut self.v_prev[block], self.u.value(block), k, self.v_step, self.radius);
        self.v_clock[block] = self.t;
    }

    fn sync(&mut self, params: &HyperParams) {
        let y_step = params.tau * params.tau_t;
        if y_step != self.y_step || params.tau_bar_t != self.v_step || !params.lazy_y || !params.lazy_v {
            self.flush();
            self.y_step = y_step;
            self.v_step = params.tau_bar_t;
        }
    }

    fn eval_block(&self, problem: &dyn ProblemOracle, block: usize, upper: &Batch, lower: &Batch) -> BlockEval {
        let (x, xp) = (&self.x, &self.x_prev);
        let (y, yp) = (&self.y[block], &self.y_prev[block]);
        let (v, vp) = (&self.v[block], &self.v_prev[block]);
        BlockEval {
            s_new: problem.grad_y_g(block, x, y, lower),
            s_old: problem.grad_y_g(block, xp, yp, lower),
            u_new: phi_grad(problem, block, v, x, y, upper, lower),
            // the old point keeps the current upper iterate
            u_old: phi_grad(problem, block, vp, x, yp, upper, lower),
            g: hyper_term(problem, block, x, y, v, upper, lower),
            g_tilde: hyper_term(problem, block, xp, yp, vp, upper, lower),
        }
    }

    /// Mean `G` and `G̃` over the draw at the current state. Lazy blocks must
    /// already be caught up.
    pub fn compute_g_pair(&self, problem: &dyn ProblemOracle, d: &Draw) -> (DVector<f64>, DVector<f64>) {
        let evals: Vec<_> = (0..d.blocks.len())
            .map(|k| self.eval_block(problem, d.blocks[k], &d.upper[k], &d.lower[k]))
            .collect();
        let dim = self.x.len();
        (
            ordered_mean(dim, evals.iter().map(|e| &e.g)),
            ordered_mean(dim, evals.iter().map(|e| &e.g_tilde)),
        )
    }
}

impl Algorithm for V2 {
    type State = StateV2;
    const NAME: &'static str = "v2";

    fn init(problem: &dyn ProblemOracle, params: &HyperParams, x0: Option<&DVector<f64>>) -> Result<StateV2> {
        let m = problem.num_blocks();
        params.validate(m, None)?;
        let radius = radius_of(problem, params)?;
        let x = initial_x(problem, x0)?;
        let blocks = map_blocks(params.parallel, m, |i| {
            let lower = init_batch(problem, params, i, BatchKind::Lower);
            let upper = init_batch(problem, params, i, BatchKind::Upper);
            let (y, warm_y) = warm_start_y(problem, params, &x, i, LinearSolve::ConjugateGradient)?;
            let (v, warm_v) = warm_start_v(problem, params, &x, &y, i, radius)?;
            let s = problem.grad_y_g(i, &x, &y, &lower);
            let u = phi_grad(problem, i, &v, &x, &y, &upper, &lower);
            let g = hyper_term(problem, i, &x, &y, &v, &upper, &lower);
            Ok((y, v, s, u, g, warm_y + warm_v + (lower.len() + upper.len()) as u64))
        })?;
        let z = ordered_mean(x.len(), blocks.iter().map(|b| &b.4));
        check_finite("initial z", &z)?;
        let samples = blocks.iter().map(|b| b.5).sum();
        let (mut y, mut v, mut s, mut u) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (yi, vi, si, ui, _, _) in blocks {
            y.push(yi);
            v.push(vi);
            s.push(si);
            u.push(ui);
        }
        let s = MsvrTracker::with_gamma(s, params.alpha, params.effective_gamma(m)?, Projection::None)?;
        let u = MsvrTracker::with_gamma(u, params.alpha_bar, params.effective_gamma_bar(m)?, Projection::None)?;
        Ok(StateV2 {
            t: 1,
            x_prev: x.clone(),
            x,
            y_prev: y.clone(),
            y,
            y_clock: vec![1; m],
            y_step: params.tau * params.tau_t,
            v_prev: v.clone(),
            v,
            v_clock: vec![1; m],
            v_step: params.tau_bar_t,
            radius,
            s,
            u,
            z,
            samples,
        })
    }

    fn step(problem: &dyn ProblemOracle, params: &HyperParams, st: &mut StateV2) -> Result<()> {
        let m = problem.num_blocks();
        let t = st.t;
        st.sync(params);
        let d = draw(problem, params, t)?;
        for &i in &d.blocks {
            st.catch_up(i);
        }
        st.s.set_coefficients(params.alpha, params.effective_gamma(m)?)?;
        st.u.set_coefficients(params.alpha_bar, params.effective_gamma_bar(m)?)?;

        let view = &*st;
        let evals = map_blocks(params.parallel, d.blocks.len(), |k| {
            Ok(view.eval_block(problem, d.blocks[k], &d.upper[k], &d.lower[k]))
        })?;
        for (&i, e) in d.blocks.iter().zip(&evals) {
            st.s.update_block(i, &e.s_new, &e.s_old)?;
            st.u.update_block(i, &e.u_new, &e.u_old)?;
        }
        let dim = st.x.len();
        let g = ordered_mean(dim, evals.iter().map(|e| &e.g));
        let g_tilde = ordered_mean(dim, evals.iter().map(|e| &e.g_tilde));
        st.z = storm_update(&st.z, &g, &g_tilde, params.beta)?;
        check_finite("z", &st.z)?;

        if !params.lazy_y {
            for i in 0..m {
                let next = &st.y[i] - st.s.value(i) * st.y_step;
                st.y_prev[i] = std::mem::replace(&mut st.y[i], next);
                st.y_clock[i] = t + 1;
            }
        }
        if !params.lazy_v {
            for i in 0..m {
                let next = ball_project(&(&st.v[i] - st.u.value(i) * st.v_step), st.radius);
                st.v_prev[i] = std::mem::replace(&mut st.v[i], next);
                st.v_clock[i] = t + 1;
            }
        }
        debug_assert!(st.v.iter().all(|v| v.norm() <= st.radius * (1.0 + 1e-12)));
        let next = &st.x - &st.z * params.eta;
        st.x_prev = std::mem::replace(&mut st.x, next);
        st.samples += d.samples();
        st.t += 1;
        Ok(())
    }
}

impl SolverState for StateV2 {
    fn iter(&self) -> u64 {
        self.t
    }

    fn x(&self) -> &DVector<f64> {
        &self.x
    }

    fn z(&self) -> &DVector<f64> {
        &self.z
    }

    fn samples(&self) -> u64 {
        self.samples
    }

    fn current_y(&self) -> BlockVector {
        let blocks = (0..self.y.len())
            .map(|i| {
                let k = self.t - self.y_clock[i];
                &self.y[i] - self.s.value(i) * (k as f64 * self.y_step)
            })
            .collect();
        BlockVector::new(blocks)
    }

    fn flush(&mut self) {
        for i in 0..self.y.len() {
            self.catch_up(i);
        }
    }

    fn begin_stage(&mut self) {
        self.flush();
        self.t = 1;
        self.x_prev = self.x.clone();
        self.y_prev = self.y.clone();
        self.v_prev = self.v.clone();
        self.y_clock.fill(1);
        self.v_clock.fill(1);
    }

    fn check_invariants(&self) -> Result<()> {
        for (i, v) in self.current_v().iter().enumerate() {
            if v.norm() > self.radius * (1.0 + 1e-12) {
                return Err(Error::Invariant(format!(
                    "block {i}: |v| = {} exceeds radius {}",
                    v.norm(),
                    self.radius
                )));
            }
        }
        check_finite("x", &self.x)?;
        check_finite("z", &self.z)
    }

    fn probe(&self, problem: &dyn ProblemOracle) -> Result<ErrorProbe> {
        let s = BlockVector::new(self.s.values().to_vec());
        let u = BlockVector::new(self.u.values().to_vec());
        let v = self.current_v();
        estimator_error_probe(problem, &self.x, &self.current_y(), &s, SecondOrder::Subproblem { v: &v, u: &u })
    }

    fn tracker_error(probe: &ErrorProbe) -> Option<f64> {
        probe.delta_v
    }
}
