//! Oracle verification commands.

use anyhow::Result;
use bsvrb::oracle::consistency::{check_problem, ConsistencyConfig, ConsistencyReport};
use bsvrb::oracle::{exact_hypergradient, exact_objective, finite_difference_grad, relative_error};
use bsvrb::rng::{substream, Purpose};
use bsvrb::ProblemOracle;
use nalgebra::DVector;
use rand::Rng;

pub fn verify(problem: &dyn ProblemOracle, points: usize, seed: u64) -> Result<ConsistencyReport> {
    let cfg = ConsistencyConfig {
        points,
        seed,
        ..Default::default()
    };
    Ok(check_problem(problem, &cfg)?)
}

#[derive(Debug, Clone)]
pub struct GradCheck {
    pub points: usize,
    pub worst: f64,
}

/// Compares the exact hypergradient with central differences of the exact
/// objective at `points` random points in `[-1, 1]^d`.
pub fn gradcheck(problem: &dyn ProblemOracle, points: usize, h: f64, seed: u64) -> Result<GradCheck> {
    let mut rng = substream(seed, 0, 0, Purpose::Diagnostics);
    let d = problem.upper_dim();
    let mut worst: f64 = 0.0;
    for _ in 0..points {
        let x = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0));
        let exact = exact_hypergradient(problem, &x)?;
        let fd = finite_difference_grad(|p| exact_objective(problem, p).unwrap_or(f64::NAN), &x, h);
        let err = relative_error(&exact, &fd, 1e-8);
        worst = worst.max(if err.is_finite() { err } else { f64::INFINITY });
    }
    Ok(GradCheck { points, worst })
}
