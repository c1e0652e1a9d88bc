//! The stochastic oracle interface of a multi-block bilevel problem.
//!
//! A problem has one upper variable `x ∈ R^{d_x}` and `m` lower blocks
//! `y_i ∈ R^{d_{y,i}}`. Block `i` owns an upper objective `f_i(x, y_i)` and a
//! lower objective `g_i(x, y_i)`, both finite averages over per-block sample
//! sets. An oracle evaluated on a [`Batch`] returns the batch average, so
//! uniformly drawn batches give unbiased estimates and the full batch gives
//! the deterministic value.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;

use crate::error::{param_err, Error, Result};

/// Which sample set a batch was drawn from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BatchKind {
    /// Samples of the upper objective (`B_i ~ P_i`).
    Upper,
    /// Samples of the lower objective (`B̃_i ~ Q_i`).
    Lower,
}

/// Identity of a batch: the iteration and block it was drawn for.
///
/// Solvers compare tags to prove that the current-point and previous-point
/// evaluations of one iteration consumed the same data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BatchTag {
    pub iter: u64,
    pub block: usize,
    pub kind: BatchKind,
}

/// Sample indices (drawn with replacement) into one block's sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    indices: Vec<usize>,
    tag: Option<BatchTag>,
    full: bool,
}

impl Batch {
    pub fn new(indices: Vec<usize>, tag: Option<BatchTag>) -> Self {
        Self {
            indices,
            tag,
            full: false,
        }
    }

    /// Every sample exactly once: the deterministic oracle.
    pub fn full(count: usize) -> Self {
        Self {
            indices: (0..count).collect(),
            tag: None,
            full: true,
        }
    }

    /// `size` indices drawn uniformly with replacement from `0..count`.
    pub fn sample<R: Rng + ?Sized>(count: usize, size: usize, tag: Option<BatchTag>, rng: &mut R) -> Self {
        assert!(count > 0, "cannot sample from an empty sample set");
        Self::new((0..size).map(|_| rng.random_range(0..count)).collect(), tag)
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.full
    }

    pub fn tag(&self) -> Option<BatchTag> {
        self.tag
    }
}

/// Problem constants consumed by parameter derivation.
///
/// `lambda` and `l_g` bound the lower Hessians (`λI ⪯ ∇²_{yy} g_i ⪯ L_g I`),
/// `c_fy` bounds `‖∇_y f_i‖`, `c_gyy_tilde` bounds the stochastic lower
/// Hessians and `sigma` the oracle noise. `mu` is set only for problems whose
/// overall objective satisfies a PL condition.
#[derive(Debug, Clone, PartialEq)]
pub struct DeclaredConstants {
    pub lambda: f64,
    pub l_g: f64,
    pub sigma: f64,
    pub c_fy: Option<f64>,
    pub c_gyy_tilde: f64,
    pub l_fy: f64,
    pub l_gyy: f64,
    pub l_f: Option<f64>,
    pub mu: Option<f64>,
}

impl DeclaredConstants {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return param_err(format!("declared lambda must be positive, got {}", self.lambda));
        }
        if self.l_g < self.lambda {
            return param_err(format!(
                "declared L_g = {} is below lambda = {}",
                self.l_g, self.lambda
            ));
        }
        Ok(())
    }

    /// Radius of the ball containing every `[∇²_{yy} g_i]⁻¹ ∇_y f_i`.
    pub fn ball_radius(&self) -> Result<f64> {
        match self.c_fy {
            Some(c) => Ok(c / self.lambda),
            None => param_err("C_fy is not declared for this problem; set an explicit ball radius"),
        }
    }
}

/// Stochastic first- and second-order oracle for a multi-block bilevel problem.
///
/// Implementations are immutable after construction and safe to call
/// concurrently. The mixed Jacobian is only ever exposed as its action on a
/// lower-dimensional vector.
pub trait ProblemOracle: Send + Sync {
    fn num_blocks(&self) -> usize;
    fn upper_dim(&self) -> usize;
    fn lower_dim(&self, block: usize) -> usize;
    fn constants(&self) -> &DeclaredConstants;

    fn upper_sample_count(&self, block: usize) -> usize;
    fn lower_sample_count(&self, block: usize) -> usize;

    fn sample_upper_batch(&self, block: usize, size: usize, tag: Option<BatchTag>, rng: &mut dyn rand::RngCore) -> Batch {
        Batch::sample(self.upper_sample_count(block), size, tag, rng)
    }

    fn sample_lower_batch(&self, block: usize, size: usize, tag: Option<BatchTag>, rng: &mut dyn rand::RngCore) -> Batch {
        Batch::sample(self.lower_sample_count(block), size, tag, rng)
    }

    fn full_upper_batch(&self, block: usize) -> Batch {
        Batch::full(self.upper_sample_count(block))
    }

    fn full_lower_batch(&self, block: usize) -> Batch {
        Batch::full(self.lower_sample_count(block))
    }

    fn upper_value(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> f64;
    fn lower_value(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> f64;

    fn grad_x_f(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64>;
    fn grad_y_f(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64>;
    fn grad_y_g(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64>;

    /// `∇²_{xy} g_i(x, y; batch) · w` for `w ∈ R^{d_{y,i}}`; the result lives in `R^{d_x}`.
    fn jacobian_xy_g_vec(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch, w: &DVector<f64>) -> DVector<f64>;

    /// `∇²_{yy} g_i(x, y; batch) · v`.
    fn hessian_yy_g_vec(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch, v: &DVector<f64>) -> DVector<f64>;

    /// Dense lower Hessian. Problems with large lower blocks may decline.
    fn hessian_yy_g(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> Result<DMatrix<f64>> {
        let _ = (block, x, y, batch);
        Err(Error::Unsupported("hessian_yy_g"))
    }

    fn has_dense_hessian(&self) -> bool {
        false
    }

    /// Closed-form lower solution `y_i(x)`, when the problem knows one.
    fn closed_form_lower(&self, block: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        let _ = (block, x);
        None
    }

    fn lower_dims(&self) -> Vec<usize> {
        (0..self.num_blocks()).map(|i| self.lower_dim(i)).collect()
    }
}

/// Draws `count` distinct blocks uniformly without replacement from `0..m`,
/// returned in increasing order.
pub fn block_sample<R: Rng + ?Sized>(m: usize, count: usize, rng: &mut R) -> Result<Vec<usize>> {
    if count == 0 || count > m {
        return param_err(format!("cannot sample {count} blocks out of {m}"));
    }
    if count == m {
        return Ok((0..m).collect());
    }
    let mut picked = index::sample(rng, m, count).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

/// Per-method call counters for an oracle.
#[derive(Debug, Default)]
pub struct CallCounts {
    pub upper_value: AtomicU64,
    pub lower_value: AtomicU64,
    pub grad_x_f: AtomicU64,
    pub grad_y_f: AtomicU64,
    pub grad_y_g: AtomicU64,
    pub jacobian_xy_g_vec: AtomicU64,
    pub hessian_yy_g_vec: AtomicU64,
    pub hessian_yy_g: AtomicU64,
}

impl CallCounts {
    pub fn get(counter: &AtomicU64) -> u64 {
        counter.load(Ordering::Relaxed)
    }
}

/// Wraps an oracle and counts every call, e.g. to prove that a solver never
/// asks for a dense Hessian.
pub struct CountingOracle<P> {
    inner: P,
    counts: CallCounts,
}

impl<P: ProblemOracle> CountingOracle<P> {
    pub fn new(inner: P) -> Self {
        Self {
            inner,
            counts: CallCounts::default(),
        }
    }

    pub fn counts(&self) -> &CallCounts {
        &self.counts
    }

    pub fn dense_hessian_calls(&self) -> u64 {
        CallCounts::get(&self.counts.hessian_yy_g)
    }

    pub fn inner(&self) -> &P {
        &self.inner
    }
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::Relaxed);
}

impl<P: ProblemOracle> ProblemOracle for CountingOracle<P> {
    fn num_blocks(&self) -> usize {
        self.inner.num_blocks()
    }
    fn upper_dim(&self) -> usize {
        self.inner.upper_dim()
    }
    fn lower_dim(&self, block: usize) -> usize {
        self.inner.lower_dim(block)
    }
    fn constants(&self) -> &DeclaredConstants {
        self.inner.constants()
    }
    fn upper_sample_count(&self, block: usize) -> usize {
        self.inner.upper_sample_count(block)
    }
    fn lower_sample_count(&self, block: usize) -> usize {
        self.inner.lower_sample_count(block)
    }
    fn sample_upper_batch(&self, block: usize, size: usize, tag: Option<BatchTag>, rng: &mut dyn rand::RngCore) -> Batch {
        self.inner.sample_upper_batch(block, size, tag, rng)
    }
    fn sample_lower_batch(&self, block: usize, size: usize, tag: Option<BatchTag>, rng: &mut dyn rand::RngCore) -> Batch {
        self.inner.sample_lower_batch(block, size, tag, rng)
    }
    fn full_upper_batch(&self, block: usize) -> Batch {
        self.inner.full_upper_batch(block)
    }
    fn full_lower_batch(&self, block: usize) -> Batch {
        self.inner.full_lower_batch(block)
    }
    fn upper_value(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> f64 {
        bump(&self.counts.upper_value);
        self.inner.upper_value(block, x, y, batch)
    }
    fn lower_value(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> f64 {
        bump(&self.counts.lower_value);
        self.inner.lower_value(block, x, y, batch)
    }
    fn grad_x_f(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        bump(&self.counts.grad_x_f);
        self.inner.grad_x_f(block, x, y, batch)
    }
    fn grad_y_f(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        bump(&self.counts.grad_y_f);
        self.inner.grad_y_f(block, x, y, batch)
    }
    fn grad_y_g(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        bump(&self.counts.grad_y_g);
        self.inner.grad_y_g(block, x, y, batch)
    }
    fn jacobian_xy_g_vec(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch, w: &DVector<f64>) -> DVector<f64> {
        bump(&self.counts.jacobian_xy_g_vec);
        self.inner.jacobian_xy_g_vec(block, x, y, batch, w)
    }
    fn hessian_yy_g_vec(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch, v: &DVector<f64>) -> DVector<f64> {
        bump(&self.counts.hessian_yy_g_vec);
        self.inner.hessian_yy_g_vec(block, x, y, batch, v)
    }
    fn hessian_yy_g(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> Result<DMatrix<f64>> {
        bump(&self.counts.hessian_yy_g);
        self.inner.hessian_yy_g(block, x, y, batch)
    }
    fn has_dense_hessian(&self) -> bool {
        self.inner.has_dense_hessian()
    }
    fn closed_form_lower(&self, block: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        self.inner.closed_form_lower(block, x)
    }
}

impl<P: ProblemOracle + ?Sized> ProblemOracle for &P {
    fn num_blocks(&self) -> usize {
        (**self).num_blocks()
    }
    fn upper_dim(&self) -> usize {
        (**self).upper_dim()
    }
    fn lower_dim(&self, block: usize) -> usize {
        (**self).lower_dim(block)
    }
    fn constants(&self) -> &DeclaredConstants {
        (**self).constants()
    }
    fn upper_sample_count(&self, block: usize) -> usize {
        (**self).upper_sample_count(block)
    }
    fn lower_sample_count(&self, block: usize) -> usize {
        (**self).lower_sample_count(block)
    }
    fn sample_upper_batch(&self, block: usize, size: usize, tag: Option<BatchTag>, rng: &mut dyn rand::RngCore) -> Batch {
        (**self).sample_upper_batch(block, size, tag, rng)
    }
    fn sample_lower_batch(&self, block: usize, size: usize, tag: Option<BatchTag>, rng: &mut dyn rand::RngCore) -> Batch {
        (**self).sample_lower_batch(block, size, tag, rng)
    }
    fn full_upper_batch(&self, block: usize) -> Batch {
        (**self).full_upper_batch(block)
    }
    fn full_lower_batch(&self, block: usize) -> Batch {
        (**self).full_lower_batch(block)
    }
    fn upper_value(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> f64 {
        (**self).upper_value(block, x, y, batch)
    }
    fn lower_value(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> f64 {
        (**self).lower_value(block, x, y, batch)
    }
    fn grad_x_f(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        (**self).grad_x_f(block, x, y, batch)
    }
    fn grad_y_f(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        (**self).grad_y_f(block, x, y, batch)
    }
    fn grad_y_g(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        (**self).grad_y_g(block, x, y, batch)
    }
    fn jacobian_xy_g_vec(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch, w: &DVector<f64>) -> DVector<f64> {
        (**self).jacobian_xy_g_vec(block, x, y, batch, w)
    }
    fn hessian_yy_g_vec(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch, v: &DVector<f64>) -> DVector<f64> {
        (**self).hessian_yy_g_vec(block, x, y, batch, v)
    }
    fn hessian_yy_g(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> Result<DMatrix<f64>> {
        (**self).hessian_yy_g(block, x, y, batch)
    }
    fn has_dense_hessian(&self) -> bool {
        (**self).has_dense_hessian()
    }
    fn closed_form_lower(&self, block: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        (**self).closed_form_lower(block, x)
    }
}
