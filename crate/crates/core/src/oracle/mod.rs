//! Deterministic reference computations.
//!
//! Everything here uses full-batch oracle evaluations and direct solves, and
//! shares no code with the solvers' stochastic estimates, so agreement
//! between the two is evidence rather than tautology.

pub mod consistency;

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::block::BlockVector;
use crate::error::{Error, Result};
use crate::problem::ProblemOracle;

/// Default residual tolerance of the exact lower solve.
pub const LOWER_TOL: f64 = 1e-10;

const NEWTON_MAX_ITERS: usize = 200;
const CG_MAX_ITERS: usize = 10_000;

/// How Hessian systems are solved.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearSolve {
    /// Cholesky on the dense Hessian when the problem provides one, else CG.
    Auto,
    Dense,
    ConjugateGradient,
}

/// Conjugate gradients for a symmetric positive definite operator.
pub fn conjugate_gradient(
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    rhs: &DVector<f64>,
    tol: f64,
) -> Result<DVector<f64>> {
    let mut x = DVector::zeros(rhs.len());
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let stop = tol * tol * rhs.norm_squared().max(f64::MIN_POSITIVE);
    for _ in 0..CG_MAX_ITERS.max(rhs.len() * 4) {
        if rr <= stop {
            return Ok(x);
        }
        let ap = apply(&p);
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(Error::Invariant(format!("operator is not positive definite (pᵀAp = {pap:e})")));
        }
        let step = rr / pap;
        x.axpy(step, &p, 1.0);
        r.axpy(-step, &ap, 1.0);
        let rr_next = r.norm_squared();
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    if rr <= stop * 100.0 {
        return Ok(x);
    }
    Err(Error::NoConvergence {
        what: "conjugate gradient",
        iterations: CG_MAX_ITERS,
        residual: rr.sqrt(),
    })
}

fn cholesky(h: DMatrix<f64>, what: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(h).ok_or_else(|| Error::Invariant(format!("{what} is not positive definite")))
}

/// `[∇²_{yy} g_i(x, y)]⁻¹ rhs` with full-batch oracles.
pub fn solve_lower_hessian(
    problem: &dyn ProblemOracle,
    block: usize,
    x: &DVector<f64>,
    y: &DVector<f64>,
    rhs: &DVector<f64>,
    how: LinearSolve,
) -> Result<DVector<f64>> {
    let batch = problem.full_lower_batch(block);
    let dense = match how {
        LinearSolve::Auto => problem.has_dense_hessian(),
        LinearSolve::Dense => true,
        LinearSolve::ConjugateGradient => false,
    };
    if dense {
        let h = problem.hessian_yy_g(block, x, y, &batch)?;
        Ok(cholesky(h, "lower Hessian")?.solve(rhs))
    } else {
        conjugate_gradient(|v| problem.hessian_yy_g_vec(block, x, y, &batch, v), rhs, 1e-13)
    }
}

/// `y_i(x) = argmin_y g_i(x, y)`.
///
/// Uses the problem's closed form when it has one. Otherwise runs damped
/// Newton iterations (Cholesky or CG for the Newton system) with Armijo
/// backtracking on the lower objective, from `y = 0`, until
/// `‖∇_y g_i‖ ≤ tol`.
pub fn exact_lower_solve(problem: &dyn ProblemOracle, x: &DVector<f64>, block: usize, tol: f64) -> Result<DVector<f64>> {
    exact_lower_solve_with(problem, x, block, tol, LinearSolve::Auto)
}

/// [`exact_lower_solve`] with a choice of Newton-system solver.
pub fn exact_lower_solve_with(
    problem: &dyn ProblemOracle,
    x: &DVector<f64>,
    block: usize,
    tol: f64,
    how: LinearSolve,
) -> Result<DVector<f64>> {
    if let Some(y) = problem.closed_form_lower(block, x) {
        return Ok(y);
    }
    let batch = problem.full_lower_batch(block);
    let mut y = DVector::zeros(problem.lower_dim(block));
    let mut value = problem.lower_value(block, x, &y, &batch);
    let mut grad = problem.grad_y_g(block, x, &y, &batch);
    for _ in 0..NEWTON_MAX_ITERS {
        let gnorm = grad.norm();
        if gnorm <= tol {
            return Ok(y);
        }
        let step = solve_lower_hessian(problem, block, x, &y, &grad, how)?;
        let slope = grad.dot(&step);
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial = &y - &step * t;
            let trial_value = problem.lower_value(block, x, &trial, &batch);
            if trial_value <= value - 1e-4 * t * slope || (trial_value - value).abs() <= 1e-15 * value.abs().max(1.0) {
                y = trial;
                value = trial_value;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            y -= &step * t;
            value = problem.lower_value(block, x, &y, &batch);
        }
        grad = problem.grad_y_g(block, x, &y, &batch);
    }
    let residual = grad.norm();
    if residual <= tol {
        Ok(y)
    } else {
        Err(Error::NoConvergence {
            what: "exact lower solve",
            iterations: NEWTON_MAX_ITERS,
            residual,
        })
    }
}

/// Exact lower solutions of every block.
pub fn exact_lower_all(problem: &dyn ProblemOracle, x: &DVector<f64>, tol: f64) -> Result<BlockVector> {
    let blocks = (0..problem.num_blocks())
        .map(|i| exact_lower_solve(problem, x, i, tol))
        .collect::<Result<Vec<_>>>()?;
    Ok(BlockVector::new(blocks))
}

/// `v_i(x, y) = [∇²_{yy} g_i(x, y)]⁻¹ ∇_y f_i(x, y)` with full batches.
pub fn exact_v(problem: &dyn ProblemOracle, block: usize, x: &DVector<f64>, y: &DVector<f64>, how: LinearSolve) -> Result<DVector<f64>> {
    let gyf = problem.grad_y_f(block, x, y, &problem.full_upper_batch(block));
    solve_lower_hessian(problem, block, x, y, &gyf, how)
}

/// `(1/m) Σ_i [∇_x f_i(x, y_i) − ∇²_{xy} g_i(x, y_i) w_i]` with full batches.
///
/// With `y_i = y_i(x)` and `w_i = v_i(x, y_i)` this is the hypergradient.
pub fn hypergradient_formula(problem: &dyn ProblemOracle, x: &DVector<f64>, y: &BlockVector, w: &BlockVector) -> DVector<f64> {
    let m = problem.num_blocks();
    let mut total = DVector::zeros(problem.upper_dim());
    for i in 0..m {
        let upper = problem.full_upper_batch(i);
        let lower = problem.full_lower_batch(i);
        total += problem.grad_x_f(i, x, &y[i], &upper);
        total -= problem.jacobian_xy_g_vec(i, x, &y[i], &lower, &w[i]);
    }
    total / m as f64
}

/// `∇F(x)` by implicit differentiation through exact lower solutions.
pub fn exact_hypergradient_with(problem: &dyn ProblemOracle, x: &DVector<f64>, how: LinearSolve) -> Result<DVector<f64>> {
    let y = exact_lower_all(problem, x, LOWER_TOL)?;
    let w = (0..problem.num_blocks())
        .map(|i| exact_v(problem, i, x, &y[i], how))
        .collect::<Result<Vec<_>>>()?;
    Ok(hypergradient_formula(problem, x, &y, &BlockVector::new(w)))
}

pub fn exact_hypergradient(problem: &dyn ProblemOracle, x: &DVector<f64>) -> Result<DVector<f64>> {
    exact_hypergradient_with(problem, x, LinearSolve::Auto)
}

/// Full-batch `(1/m) Σ_i f_i(x, y_i)`.
pub fn upper_objective(problem: &dyn ProblemOracle, x: &DVector<f64>, y: &BlockVector) -> f64 {
    let m = problem.num_blocks();
    (0..m)
        .map(|i| problem.upper_value(i, x, &y[i], &problem.full_upper_batch(i)))
        .sum::<f64>()
        / m as f64
}

/// `F(x) = (1/m) Σ_i f_i(x, y_i(x))`.
pub fn exact_objective(problem: &dyn ProblemOracle, x: &DVector<f64>) -> Result<f64> {
    let y = exact_lower_all(problem, x, LOWER_TOL)?;
    Ok(upper_objective(problem, x, &y))
}

/// Central differences `(F(x + h e_k) − F(x − h e_k)) / 2h` per coordinate.
pub fn finite_difference_grad(f: impl Fn(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut out = DVector::zeros(x.len());
    let mut probe = x.clone();
    for k in 0..x.len() {
        probe[k] = x[k] + h;
        let plus = f(&probe);
        probe[k] = x[k] - h;
        let minus = f(&probe);
        probe[k] = x[k];
        out[k] = (plus - minus) / (2.0 * h);
    }
    out
}

/// Central difference of `f` along direction `d`.
pub fn directional_difference<T>(
    f: impl Fn(&DVector<f64>) -> T,
    x: &DVector<f64>,
    d: &DVector<f64>,
    h: f64,
) -> T
where
    T: std::ops::Sub<Output = T> + std::ops::Div<f64, Output = T>,
{
    let plus = f(&(x + d * h));
    let minus = f(&(x - d * h));
    (plus - minus) / (2.0 * h)
}

/// Second-order state of a solver, for [`estimator_error_probe`].
pub enum SecondOrder<'a> {
    /// Tracked Hessians `H_i`.
    Hessians(&'a [DMatrix<f64>]),
    /// Tracked Hessian-system solutions `v_i` and their gradient estimates `u_i`.
    Subproblem { v: &'a BlockVector, u: &'a BlockVector },
}

/// Exact estimator errors at one solver state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorProbe {
    /// `Σ ‖y_i − y_i(x)‖²`.
    pub delta_y: f64,
    /// `Σ ‖s_i − ∇_y g_i(x, y_i)‖²`.
    pub delta_s: f64,
    /// `Σ ‖H_i − ∇²_{yy} g_i(x, y_i)‖²_F`.
    pub delta_h: Option<f64>,
    /// `Σ ‖v_i − v_i(x, y_i)‖²`.
    pub delta_v: Option<f64>,
    /// `Σ ‖u_i − ∇_v φ_i(v_i, x, y_i)‖²`.
    pub delta_u: Option<f64>,
}

pub fn estimator_error_probe(
    problem: &dyn ProblemOracle,
    x: &DVector<f64>,
    y: &BlockVector,
    s: &BlockVector,
    second: SecondOrder<'_>,
) -> Result<ErrorProbe> {
    let m = problem.num_blocks();
    let mut probe = ErrorProbe::default();
    let (mut dh, mut dv, mut du) = (0.0, 0.0, 0.0);
    for i in 0..m {
        let lower = problem.full_lower_batch(i);
        let upper = problem.full_upper_batch(i);
        let target = exact_lower_solve(problem, x, i, LOWER_TOL)?;
        probe.delta_y += (&y[i] - target).norm_squared();
        probe.delta_s += (&s[i] - problem.grad_y_g(i, x, &y[i], &lower)).norm_squared();
        match &second {
            SecondOrder::Hessians(h) => {
                dh += (&h[i] - problem.hessian_yy_g(i, x, &y[i], &lower)?).norm_squared();
            }
            SecondOrder::Subproblem { v, u } => {
                dv += (&v[i] - exact_v(problem, i, x, &y[i], LinearSolve::Auto)?).norm_squared();
                let phi = problem.hessian_yy_g_vec(i, x, &y[i], &lower, &v[i]) - problem.grad_y_f(i, x, &y[i], &upper);
                du += (&u[i] - phi).norm_squared();
            }
        }
    }
    match second {
        SecondOrder::Hessians(_) => probe.delta_h = Some(dh),
        SecondOrder::Subproblem { .. } => {
            probe.delta_v = Some(dv);
            probe.delta_u = Some(du);
        }
    }
    Ok(probe)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖, floor)`.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(floor)
}
