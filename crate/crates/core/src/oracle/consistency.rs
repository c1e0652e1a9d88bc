//! Generic oracle-consistency suite.
//!
//! For random points it checks that batch oracles average single-sample
//! oracles (so uniformly sampled batches are unbiased) and that every
//! derivative oracle agrees with central finite differences of the oracle it
//! differentiates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use super::{directional_difference, finite_difference_grad};
use crate::error::Result;
use crate::estimators::min_eigenvalue;
use crate::problem::{Batch, ProblemOracle};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone)]
pub struct ConsistencyConfig {
    pub points: usize,
    /// Blocks checked per point, starting from block 0.
    pub max_blocks: usize,
    pub h: f64,
    pub fd_tol: f64,
    pub mean_tol: f64,
    /// Standard deviation of the random evaluation points.
    pub scale: f64,
    /// Upper dimensions above this are checked along random directions only.
    pub max_fd_coords: usize,
    pub seed: u64,
}

impl Default for ConsistencyConfig {
    fn default() -> Self {
        Self {
            points: 3,
            max_blocks: 3,
            h: 1e-5,
            fd_tol: 1e-4,
            mean_tol: 1e-12,
            scale: 0.5,
            max_fd_coords: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    /// Worst relative error over all points and blocks.
    pub error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

#[derive(Debug, Clone, Default)]
pub struct ConsistencyReport {
    pub checks: Vec<CheckResult>,
}

impl ConsistencyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed())
    }

    fn record(&mut self, name: &str, error: f64, tolerance: f64) {
        match self.checks.iter_mut().find(|c| c.name == name) {
            Some(c) => c.error = c.error.max(error),
            None => self.checks.push(CheckResult {
                name: name.to_owned(),
                error,
                tolerance,
            }),
        }
    }
}

const FLOOR: f64 = 1e-6;

fn rel(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    super::relative_error(a, b, FLOOR)
}

fn rel_scalar(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FLOOR)
}

fn gaussian(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

/// Average of `f` over one-sample batches covering every sample once.
fn sample_mean<T>(count: usize, f: impl Fn(&Batch) -> T) -> T
where
    T: std::ops::Add<Output = T> + std::ops::Div<f64, Output = T>,
{
    let mut acc = f(&Batch::new(vec![0], None));
    for j in 1..count {
        acc = acc + f(&Batch::new(vec![j], None));
    }
    acc / count as f64
}

pub fn check_problem(problem: &dyn ProblemOracle, cfg: &ConsistencyConfig) -> Result<ConsistencyReport> {
    let mut report = ConsistencyReport::default();
    let mut rng = substream(cfg.seed, 0, 0, Purpose::Data);
    let d_x = problem.upper_dim();
    let lambda = problem.constants().lambda;
    for _ in 0..cfg.points {
        let x = gaussian(&mut rng, d_x, cfg.scale);
        for i in 0..problem.num_blocks().min(cfg.max_blocks) {
            let d_y = problem.lower_dim(i);
            let y = gaussian(&mut rng, d_y, cfg.scale);
            let w = gaussian(&mut rng, d_y, 1.0);
            let upper = problem.full_upper_batch(i);
            let lower = problem.full_lower_batch(i);
            let n_up = problem.upper_sample_count(i);
            let n_low = problem.lower_sample_count(i);

            // batch oracles are sample averages
            let mean = sample_mean(n_up, |b| problem.upper_value(i, &x, &y, b));
            report.record("mean upper_value", rel_scalar(mean, problem.upper_value(i, &x, &y, &upper)), cfg.mean_tol);
            let mean = sample_mean(n_low, |b| problem.lower_value(i, &x, &y, b));
            report.record("mean lower_value", rel_scalar(mean, problem.lower_value(i, &x, &y, &lower)), cfg.mean_tol);
            let mean = sample_mean(n_up, |b| problem.grad_x_f(i, &x, &y, b));
            report.record("mean grad_x_f", rel(&mean, &problem.grad_x_f(i, &x, &y, &upper)), cfg.mean_tol);
            let mean = sample_mean(n_up, |b| problem.grad_y_f(i, &x, &y, b));
            report.record("mean grad_y_f", rel(&mean, &problem.grad_y_f(i, &x, &y, &upper)), cfg.mean_tol);
            let mean = sample_mean(n_low, |b| problem.grad_y_g(i, &x, &y, b));
            report.record("mean grad_y_g", rel(&mean, &problem.grad_y_g(i, &x, &y, &lower)), cfg.mean_tol);
            let mean = sample_mean(n_low, |b| problem.hessian_yy_g_vec(i, &x, &y, b, &w));
            report.record("mean hessian_yy_g_vec", rel(&mean, &problem.hessian_yy_g_vec(i, &x, &y, &lower, &w)), cfg.mean_tol);
            let mean = sample_mean(n_low, |b| problem.jacobian_xy_g_vec(i, &x, &y, b, &w));
            report.record("mean jacobian_xy_g_vec", rel(&mean, &problem.jacobian_xy_g_vec(i, &x, &y, &lower, &w)), cfg.mean_tol);

            // derivatives against finite differences
            let fd = finite_difference_grad(|yy| problem.lower_value(i, &x, yy, &lower), &y, cfg.h);
            report.record("fd grad_y_g", rel(&problem.grad_y_g(i, &x, &y, &lower), &fd), cfg.fd_tol);
            let fd = finite_difference_grad(|yy| problem.upper_value(i, &x, yy, &upper), &y, cfg.h);
            report.record("fd grad_y_f", rel(&problem.grad_y_f(i, &x, &y, &upper), &fd), cfg.fd_tol);
            let fd = directional_difference(|yy| problem.grad_y_g(i, &x, yy, &lower), &y, &w, cfg.h);
            report.record("fd hessian_yy_g_vec", rel(&problem.hessian_yy_g_vec(i, &x, &y, &lower, &w), &fd), cfg.fd_tol);

            let gxf = problem.grad_x_f(i, &x, &y, &upper);
            let jw = problem.jacobian_xy_g_vec(i, &x, &y, &lower, &w);
            let coupling = |xx: &DVector<f64>| problem.grad_y_g(i, xx, &y, &lower).dot(&w);
            if d_x <= cfg.max_fd_coords {
                let fd = finite_difference_grad(|xx| problem.upper_value(i, xx, &y, &upper), &x, cfg.h);
                report.record("fd grad_x_f", rel(&gxf, &fd), cfg.fd_tol);
                let fd = finite_difference_grad(coupling, &x, cfg.h);
                report.record("fd jacobian_xy_g_vec", rel(&jw, &fd), cfg.fd_tol);
            } else {
                for _ in 0..3 {
                    let d = gaussian(&mut rng, d_x, 1.0);
                    let fd = directional_difference(|xx| problem.upper_value(i, xx, &y, &upper), &x, &d, cfg.h);
                    report.record("fd grad_x_f", rel_scalar(gxf.dot(&d), fd), cfg.fd_tol);
                    let fd = directional_difference(coupling, &x, &d, cfg.h);
                    report.record("fd jacobian_xy_g_vec", rel_scalar(jw.dot(&d), fd), cfg.fd_tol);
                }
            }

            if problem.has_dense_hessian() {
                let h: DMatrix<f64> = problem.hessian_yy_g(i, &x, &y, &lower)?;
                report.record("hessian symmetric", (&h - h.transpose()).amax(), 0.0);
                report.record("dense hessian matches hvp", rel(&(&h * &w), &problem.hessian_yy_g_vec(i, &x, &y, &lower, &w)), 1e-12);
                let shortfall = (lambda - min_eigenvalue(&h)).max(0.0);
                report.record("lower strong convexity", shortfall, 1e-10);
            }
        }
    }
    Ok(report)
}
