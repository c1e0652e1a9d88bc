//! Blockwise stochastic variance-reduced solvers for multi-block bilevel
//! optimization.
//!
//! The problem is
//!
//! ```text
//! min_x F(x) = (1/m) Σ_i f_i(x, y_i(x)),   y_i(x) = argmin_y g_i(x, y)
//! ```
//!
//! with every `g_i(x, ·)` strongly convex. Two single-loop solvers are
//! provided: [`solver::V1`] tracks lower-level Hessians and inverts them,
//! [`solver::V2`] tracks Hessian-inverse-vector products through a quadratic
//! subproblem and never forms a Hessian. [`restart`] chains either of them in
//! stages with geometrically shrinking targets for problems satisfying a PL
//! condition.
//!
//! [`oracle`] holds deterministic reference computations (exact lower
//! solutions, exact hypergradients, finite differences) used for
//! verification and diagnostics, and [`problems`] ships two benchmark
//! families.

pub mod block;
pub mod error;
pub mod estimators;
pub mod oracle;
pub mod params;
pub mod problem;
pub mod problems;
pub mod restart;
pub mod rng;
pub mod solver;
pub mod trace;

pub use block::{BlockMatrix, BlockVector};
pub use error::{Error, Result};
pub use params::{HyperParams, WarmStart};
pub use problem::{block_sample, Batch, BatchKind, BatchTag, CountingOracle, DeclaredConstants, ProblemOracle};
pub use solver::{Algorithm, RunOptions, RunOutput, Selection, V1, V2};
pub use trace::{Trace, TraceRow};
