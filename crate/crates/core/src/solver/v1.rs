//! Solver with tracked per-block Hessians.

use nalgebra::{DMatrix, DVector};

use super::{
    check_finite, draw, init_batch, initial_x, lazy_y_catchup, map_blocks, ordered_mean, warm_start_y, Algorithm, Draw,
    SolverState,
};
use crate::block::BlockVector;
use crate::error::{Error, Result};
use crate::estimators::{min_eigenvalue, storm_update, MsvrTracker, Projection};
use crate::oracle::{estimator_error_probe, ErrorProbe, LinearSolve, SecondOrder};
use crate::params::HyperParams;
use crate::problem::{Batch, BatchKind, ProblemOracle};

/// Hessian-tracking solver. Needs dense lower Hessians.
#[derive(Debug, Clone, Copy, Default)]
pub struct V1;

#[derive(Debug, Clone)]
pub struct StateV1 {
    t: u64,
    x: DVector<f64>,
    x_prev: DVector<f64>,
    y: Vec<DVector<f64>>,
    y_prev: Vec<DVector<f64>>,
    /// `y[i]` is the iterate at iteration `y_clock[i]`.
    y_clock: Vec<u64>,
    y_step: f64,
    s: MsvrTracker<DVector<f64>>,
    h: MsvrTracker<DMatrix<f64>>,
    /// Value of `h` before its last update.
    h_prev: Vec<DMatrix<f64>>,
    h_updated_at: Vec<u64>,
    floor: f64,
    z: DVector<f64>,
    samples: u64,
}

/// Per-block evaluations of one iteration.
struct BlockEval {
    s_new: DVector<f64>,
    s_old: DVector<f64>,
    h_new: DMatrix<f64>,
    h_old: DMatrix<f64>,
    g: DVector<f64>,
    g_tilde: DVector<f64>,
}

fn solve(h: &DMatrix<f64>, rhs: &DVector<f64>, block: usize) -> Result<DVector<f64>> {
    let chol = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Invariant(format!("tracked Hessian of block {block} is not positive definite")))?;
    Ok(chol.solve(rhs))
}

/// `∇_x f − ∇²_{xy} g · H⁻¹ ∇_y f` on one block.
fn hyper_term(
    problem: &dyn ProblemOracle,
    block: usize,
    x: &DVector<f64>,
    y: &DVector<f64>,
    h: &DMatrix<f64>,
    upper: &Batch,
    lower: &Batch,
) -> Result<DVector<f64>> {
    let w = solve(h, &problem.grad_y_f(block, x, y, upper), block)?;
    Ok(problem.grad_x_f(block, x, y, upper) - problem.jacobian_xy_g_vec(block, x, y, lower, &w))
}

impl StateV1 {
    pub fn y_stored(&self) -> &[DVector<f64>] {
        &self.y
    }

    pub fn y_clock(&self) -> &[u64] {
        &self.y_clock
    }

    pub fn s(&self) -> &[DVector<f64>] {
        self.s.values()
    }

    pub fn h(&self) -> &[DMatrix<f64>] {
        self.h.values()
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn x_prev(&self) -> &DVector<f64> {
        &self.x_prev
    }

    /// Tracked Hessian of `block` at the start of the previous iteration.
    fn h_last(&self, block: usize) -> &DMatrix<f64> {
        if self.h_updated_at[block] + 1 == self.t {
            &self.h_prev[block]
        } else {
            self.h.value(block)
        }
    }

    fn catch_up(&mut self, block: usize) {
        let k = self.t - self.y_clock[block];
        lazy_y_catchup(&mut self.y[block], &mut self.y_prev[block], self.s.value(block), k, self.y_step);
        self.y_clock[block] = self.t;
    }

    fn sync(&mut self, params: &HyperParams) {
        let step = params.tau * params.tau_t;
        if step != self.y_step || !params.lazy_y {
            self.flush();
            self.y_step = step;
        }
    }

    fn eval_block(&self, problem: &dyn ProblemOracle, block: usize, upper: &Batch, lower: &Batch) -> Result<BlockEval> {
        let (x, xp) = (&self.x, &self.x_prev);
        let (y, yp) = (&self.y[block], &self.y_prev[block]);
        Ok(BlockEval {
            s_new: problem.grad_y_g(block, x, y, lower),
            s_old: problem.grad_y_g(block, xp, yp, lower),
            h_new: problem.hessian_yy_g(block, x, y, lower)?,
            h_old: problem.hessian_yy_g(block, xp, yp, lower)?,
            g: hyper_term(problem, block, x, y, self.h.value(block), upper, lower)?,
            g_tilde: hyper_term(problem, block, xp, yp, self.h_last(block), upper, lower)?,
        })
    }

    /// Mean `G` and `G̃` over the draw at the current state. Lazy blocks must
    /// already be caught up.
    pub fn compute_g_pair(&self, problem: &dyn ProblemOracle, d: &Draw) -> Result<(DVector<f64>, DVector<f64>)> {
        let evals = (0..d.blocks.len())
            .map(|k| self.eval_block(problem, d.blocks[k], &d.upper[k], &d.lower[k]))
            .collect::<Result<Vec<_>>>()?;
        let dim = self.x.len();
        Ok((
            ordered_mean(dim, evals.iter().map(|e| &e.g)),
            ordered_mean(dim, evals.iter().map(|e| &e.g_tilde)),
        ))
    }
}

impl Algorithm for V1 {
    type State = StateV1;
    const NAME: &'static str = "v1";

    fn init(problem: &dyn ProblemOracle, params: &HyperParams, x0: Option<&DVector<f64>>) -> Result<StateV1> {
        let m = problem.num_blocks();
        params.validate(m, None)?;
        if !problem.has_dense_hessian() {
            return Err(Error::Unsupported("dense lower Hessians"));
        }
        let x = initial_x(problem, x0)?;
        let floor = params.lambda_floor.unwrap_or(problem.constants().lambda);
        let blocks = map_blocks(params.parallel, m, |i| {
            let lower = init_batch(problem, params, i, BatchKind::Lower);
            let upper = init_batch(problem, params, i, BatchKind::Upper);
            let (y, warm) = warm_start_y(problem, params, &x, i, LinearSolve::Auto)?;
            let s = problem.grad_y_g(i, &x, &y, &lower);
            let h = crate::estimators::spectral_floor(&problem.hessian_yy_g(i, &x, &y, &lower)?, floor)?;
            let g = hyper_term(problem, i, &x, &y, &h, &upper, &lower)?;
            Ok((y, s, h, g, warm + (lower.len() + upper.len()) as u64))
        })?;
        let z = ordered_mean(x.len(), blocks.iter().map(|b| &b.3));
        check_finite("initial z", &z)?;
        let samples = blocks.iter().map(|b| b.4).sum();
        let mut y = Vec::with_capacity(m);
        let mut s = Vec::with_capacity(m);
        let mut h = Vec::with_capacity(m);
        for (yi, si, hi, _, _) in blocks {
            y.push(yi);
            s.push(si);
            h.push(hi);
        }
        let s = MsvrTracker::with_gamma(s, params.alpha, params.effective_gamma(m)?, Projection::None)?;
        let h = MsvrTracker::with_gamma(h, params.alpha_bar, params.effective_gamma_bar(m)?, Projection::SpectralFloor(floor))?;
        Ok(StateV1 {
            t: 1,
            x_prev: x.clone(),
            x,
            y_prev: y.clone(),
            y,
            y_clock: vec![1; m],
            y_step: params.tau * params.tau_t,
            h_prev: h.values().to_vec(),
            h_updated_at: vec![0; m],
            s,
            h,
            floor,
            z,
            samples,
        })
    }

    fn step(problem: &dyn ProblemOracle, params: &HyperParams, st: &mut StateV1) -> Result<()> {
        let m = problem.num_blocks();
        let t = st.t;
        st.sync(params);
        let d = draw(problem, params, t)?;
        for &i in &d.blocks {
            st.catch_up(i);
        }
        st.s.set_coefficients(params.alpha, params.effective_gamma(m)?)?;
        st.h.set_coefficients(params.alpha_bar, params.effective_gamma_bar(m)?)?;

        let view = &*st;
        let evals = map_blocks(params.parallel, d.blocks.len(), |k| {
            view.eval_block(problem, d.blocks[k], &d.upper[k], &d.lower[k])
        })?;
        for (&i, e) in d.blocks.iter().zip(&evals) {
            st.h_prev[i] = st.h.value(i).clone();
            st.h_updated_at[i] = t;
            st.s.update_block(i, &e.s_new, &e.s_old)?;
            st.h.update_block(i, &e.h_new, &e.h_old)?;
            debug_assert!(min_eigenvalue(st.h.value(i)) >= st.floor - 1e-10);
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
        let next = &st.x - &st.z * params.eta;
        st.x_prev = std::mem::replace(&mut st.x, next);
        st.samples += d.samples();
        st.t += 1;
        Ok(())
    }
}

impl SolverState for StateV1 {
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
        self.y_clock.fill(1);
        self.h_prev = self.h.values().to_vec();
        self.h_updated_at.fill(0);
    }

    fn check_invariants(&self) -> Result<()> {
        for (i, h) in self.h.values().iter().enumerate() {
            let low = min_eigenvalue(h);
            if low < self.floor - 1e-10 {
                return Err(Error::Invariant(format!(
                    "block {i}: tracked Hessian has eigenvalue {low} below floor {}",
                    self.floor
                )));
            }
        }
        check_finite("x", &self.x)?;
        check_finite("z", &self.z)
    }

    fn probe(&self, problem: &dyn ProblemOracle) -> Result<ErrorProbe> {
        let s = BlockVector::new(self.s.values().to_vec());
        estimator_error_probe(problem, &self.x, &self.current_y(), &s, SecondOrder::Hessians(self.h.values()))
    }

    fn tracker_error(probe: &ErrorProbe) -> Option<f64> {
        probe.delta_h
    }
}
