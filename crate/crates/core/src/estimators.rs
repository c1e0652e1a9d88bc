//! Variance-reduced tracking estimators and the projections they use.
//!
//! [`MsvrTracker`] keeps one estimate per block and refreshes only the blocks
//! sampled at an iteration:
//!
//! ```text
//! h_i ← Π[(1 − α) h_i + α·new_i + γ (new_i − old_i)]
//! ```
//!
//! where `new_i` and `old_i` are evaluated on the same mini-batch at the
//! current and previous points. With `γ = (m − I)/(I(1 − α)) + (1 − α)` the
//! correction also compensates for block sampling. [`storm_update`] is the
//! single-block special case used for the hypergradient estimate `z`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::block::symmetrize;
use crate::error::{param_err, shape_err, Error, Result};

/// MSVR correction coefficient `(m − I)/(I(1 − α)) + (1 − α)`.
///
/// With `I = m` the first term vanishes and any `α ∈ (0, 1]` is accepted.
pub fn msvr_gamma(m: usize, sampled: usize, alpha: f64) -> Result<f64> {
    if sampled == 0 || sampled > m {
        return param_err(format!("need 1 <= I <= m, got I = {sampled}, m = {m}"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return param_err(format!("alpha must lie in (0, 1], got {alpha}"));
    }
    if sampled == m {
        return Ok(1.0 - alpha);
    }
    if alpha >= 1.0 {
        return param_err("alpha = 1 makes the block-sampling correction infinite when I < m");
    }
    Ok((m - sampled) as f64 / (sampled as f64 * (1.0 - alpha)) + (1.0 - alpha))
}

/// Feasible set applied after every tracker update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    None,
    /// `{X symmetric : X ⪰ λI}`, matrices only.
    SpectralFloor(f64),
    /// `{v : ‖v‖₂ ≤ V}`, vectors only.
    Ball(f64),
}

/// Values an [`MsvrTracker`] can hold.
pub trait Tracked: Clone + Send + Sync {
    fn shape(&self) -> (usize, usize);

    /// `(1 − α)·self + α·new + γ·(new − old)`.
    fn combine(&self, new: &Self, old: &Self, alpha: f64, gamma: f64) -> Self;

    fn project(self, projection: Projection) -> Result<Self>;
}

fn combine_slices(out: &mut [f64], value: &[f64], new: &[f64], old: &[f64], alpha: f64, gamma: f64) {
    let keep = 1.0 - alpha;
    for (((o, &h), &n), &p) in out.iter_mut().zip(value).zip(new).zip(old) {
        *o = keep * h + alpha * n + gamma * (n - p);
    }
}

impl Tracked for DVector<f64> {
    fn shape(&self) -> (usize, usize) {
        self.shape()
    }

    fn combine(&self, new: &Self, old: &Self, alpha: f64, gamma: f64) -> Self {
        let mut out = DVector::zeros(self.len());
        combine_slices(out.as_mut_slice(), self.as_slice(), new.as_slice(), old.as_slice(), alpha, gamma);
        out
    }

    fn project(self, projection: Projection) -> Result<Self> {
        match projection {
            Projection::None => Ok(self),
            Projection::Ball(radius) => Ok(ball_project(&self, radius)),
            Projection::SpectralFloor(_) => param_err("spectral floor applies to matrices, not vectors"),
        }
    }
}

impl Tracked for DMatrix<f64> {
    fn shape(&self) -> (usize, usize) {
        self.shape()
    }

    fn combine(&self, new: &Self, old: &Self, alpha: f64, gamma: f64) -> Self {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        combine_slices(out.as_mut_slice(), self.as_slice(), new.as_slice(), old.as_slice(), alpha, gamma);
        out
    }

    fn project(self, projection: Projection) -> Result<Self> {
        match projection {
            Projection::None => Ok(self),
            Projection::SpectralFloor(lambda) => spectral_floor(&self, lambda),
            Projection::Ball(_) => param_err("ball projection applies to vectors, not matrices"),
        }
    }
}

/// STORM recursion `(1 − β)(z − G̃) + G`.
///
/// Evaluated through the same kernel as the MSVR update with `α = β` and
/// `γ = 1 − β`, so a single-block MSVR tracker and this function agree
/// bitwise.
pub fn storm_update(z: &DVector<f64>, g: &DVector<f64>, g_tilde: &DVector<f64>, beta: f64) -> Result<DVector<f64>> {
    if z.len() != g.len() || z.len() != g_tilde.len() {
        return shape_err(format!(
            "storm update on lengths {}, {}, {}",
            z.len(),
            g.len(),
            g_tilde.len()
        ));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return param_err(format!("beta must lie in (0, 1], got {beta}"));
    }
    Ok(z.combine(g, g_tilde, beta, 1.0 - beta))
}

/// Projection onto `{X ⪰ λI}` in Frobenius norm: eigenvalues below `λ` are
/// raised to `λ`. Inputs already in the set are returned (symmetrized) as is.
pub fn spectral_floor(x: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if !x.is_square() {
        return shape_err(format!("spectral floor of a {}x{} matrix", x.nrows(), x.ncols()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("matrix passed to spectral floor".into()));
    }
    let sym = symmetrize(x);
    let eig = SymmetricEigen::new(sym.clone());
    if eig.eigenvalues.iter().all(|&e| e >= lambda) {
        return Ok(sym);
    }
    let clipped = eig.eigenvalues.map(|e| e.max(lambda));
    let q = &eig.eigenvectors;
    let out = q * DMatrix::from_diagonal(&clipped) * q.transpose();
    Ok(symmetrize(&out))
}

/// Euclidean projection onto the ball of radius `radius` around the origin.
pub fn ball_project(v: &DVector<f64>, radius: f64) -> DVector<f64> {
    let norm = v.norm();
    if norm <= radius {
        v.clone()
    } else {
        v * (radius / norm)
    }
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(x: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(symmetrize(x)).eigenvalues.min()
}

/// Blockwise MSVR tracker.
#[derive(Debug, Clone)]
pub struct MsvrTracker<T> {
    values: Vec<T>,
    alpha: f64,
    gamma: f64,
    projection: Projection,
}

impl<T: Tracked> MsvrTracker<T> {
    /// Tracker with the sampling-corrected `γ` for `sampled` of `m` blocks.
    pub fn sampling_corrected(values: Vec<T>, sampled: usize, alpha: f64, projection: Projection) -> Result<Self> {
        let gamma = msvr_gamma(values.len(), sampled, alpha)?;
        Self::with_gamma(values, alpha, gamma, projection)
    }

    /// Tracker with a free `γ`, e.g. `γ = 0` for a plain moving average.
    pub fn with_gamma(values: Vec<T>, alpha: f64, gamma: f64, projection: Projection) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return param_err(format!("alpha must lie in (0, 1], got {alpha}"));
        }
        if !gamma.is_finite() {
            return param_err(format!("gamma must be finite, got {gamma}"));
        }
        let values = values
            .into_iter()
            .map(|v| v.project(projection))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            values,
            alpha,
            gamma,
            projection,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn projection(&self) -> Projection {
        self.projection
    }

    /// Changes the coefficients, e.g. between restart stages. Stored values are kept.
    pub fn set_coefficients(&mut self, alpha: f64, gamma: f64) -> Result<()> {
        if !(alpha > 0.0 && alpha <= 1.0) || !gamma.is_finite() {
            return param_err(format!("invalid MSVR coefficients alpha = {alpha}, gamma = {gamma}"));
        }
        self.alpha = alpha;
        self.gamma = gamma;
        Ok(())
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn value(&self, block: usize) -> &T {
        &self.values[block]
    }

    pub fn num_blocks(&self) -> usize {
        self.values.len()
    }

    /// Refreshes a single block from a same-batch pair of evaluations.
    pub fn update_block(&mut self, block: usize, new: &T, old: &T) -> Result<()> {
        let current = &self.values[block];
        if new.shape() != current.shape() || old.shape() != current.shape() {
            return shape_err(format!(
                "block {block}: tracker {:?}, new {:?}, old {:?}",
                current.shape(),
                new.shape(),
                old.shape()
            ));
        }
        let next = current.combine(new, old, self.alpha, self.gamma).project(self.projection)?;
        self.values[block] = next;
        Ok(())
    }

    /// Refreshes every block in `sampled`; `new` and `old` are aligned with it.
    pub fn update(&mut self, sampled: &[usize], new: &[T], old: &[T]) -> Result<()> {
        if new.len() != sampled.len() || old.len() != sampled.len() {
            return shape_err(format!(
                "{} sampled blocks but {} new and {} old evaluations",
                sampled.len(),
                new.len(),
                old.len()
            ));
        }
        for ((&i, n), o) in sampled.iter().zip(new).zip(old) {
            self.update_block(i, n, o)?;
        }
        Ok(())
    }
}
