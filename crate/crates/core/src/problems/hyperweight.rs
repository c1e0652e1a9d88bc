//! Data reweighting with a family of temperature-scaled logistic losses.
//!
//! The upper variable `p ∈ R^n` assigns training example `j` the weight
//! `σ(p_j)`. Block `i` fits a linear model `w_i` with the loss
//! `L_τ(w; x, y) = log(1 + exp(−y wᵀx/τ_i))`:
//!
//! ```text
//! g_i(p, w) = (1/n) Σ_j σ(p_j) L_τi(w; x_j, y_j) + (λ/2)‖w‖²
//! f_i(p, w) = (1/n_val) Σ_k L_τi(w; x_k, y_k)
//! ```
//!
//! A constant feature is appended to every example so the intercept is part
//! of `w`. Lower samples index training rows, upper samples validation rows.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::dataset::Dataset;
use crate::error::{param_err, Error, Result};
use crate::problem::{Batch, DeclaredConstants, ProblemOracle};
use crate::rng::{substream, Purpose};

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
pub struct HyperWeightOptions {
    pub lambda_reg: f64,
    /// Pin every weight to 1; the lower problems become plain ridge
    /// logistic regressions and the Jacobian vanishes.
    pub unit_weights: bool,
    /// Whether [`ProblemOracle::hessian_yy_g`] is offered.
    pub dense_hessian: bool,
}

impl Default for HyperWeightOptions {
    fn default() -> Self {
        Self {
            lambda_reg: 1e-3,
            unit_weights: false,
            dense_hessian: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HyperWeightMbbo {
    /// Training examples as columns, `d × n`.
    train: DMatrix<f64>,
    train_y: Vec<f64>,
    val: DMatrix<f64>,
    val_y: Vec<f64>,
    temps: Vec<f64>,
    opts: HyperWeightOptions,
    constants: DeclaredConstants,
}

impl HyperWeightMbbo {
    /// One block per temperature. Uses the dataset's training and validation splits.
    pub fn with_temperatures(dataset: &Dataset, temps: Vec<f64>, opts: HyperWeightOptions) -> Result<Self> {
        let split = dataset.split();
        if split.train.is_empty() || split.val.is_empty() {
            return param_err("the dataset needs nonempty training and validation splits");
        }
        if temps.is_empty() || temps.iter().any(|&t| !(t > 0.0)) {
            return param_err("temperatures must be positive and nonempty");
        }
        if !(opts.lambda_reg > 0.0) {
            return param_err(format!("lambda_reg must be positive, got {}", opts.lambda_reg));
        }
        let train = dataset.dense_with_intercept(&split.train).transpose();
        let val = dataset.dense_with_intercept(&split.val).transpose();
        let max_sq = |m: &DMatrix<f64>| m.column_iter().map(|c| c.norm_squared()).fold(0.0, f64::max);
        let (tr_sq, val_sq) = (max_sq(&train), max_sq(&val));
        let t_min = temps.iter().copied().fold(f64::INFINITY, f64::min);
        let lambda = opts.lambda_reg;
        let l_g = tr_sq / (4.0 * t_min * t_min) + lambda;
        let c_fy = val_sq.sqrt() / t_min;
        let constants = DeclaredConstants {
            lambda,
            l_g,
            sigma: c_fy,
            c_fy: Some(c_fy),
            c_gyy_tilde: l_g,
            l_fy: val_sq / (4.0 * t_min * t_min),
            l_gyy: 0.1 * tr_sq.powf(1.5) / t_min.powi(3),
            l_f: None,
            mu: None,
        };
        Ok(Self {
            train_y: dataset.labels_of(&split.train),
            val_y: dataset.labels_of(&split.val),
            train,
            val,
            temps,
            opts,
            constants,
        })
    }

    /// `m` temperatures drawn uniformly from `[lo, hi)` with `seed`.
    pub fn new(dataset: &Dataset, m: usize, temp_range: (f64, f64), seed: u64, opts: HyperWeightOptions) -> Result<Self> {
        let (lo, hi) = temp_range;
        if m == 0 || !(lo > 0.0 && hi > lo) {
            return param_err(format!("need m >= 1 and 0 < lo < hi, got m = {m}, range [{lo}, {hi})"));
        }
        let mut rng = substream(seed, 0, 0, Purpose::Problem);
        let temps = (0..m).map(|_| rng.random_range(lo..hi)).collect();
        Self::with_temperatures(dataset, temps, opts)
    }

    pub fn temperatures(&self) -> &[f64] {
        &self.temps
    }

    pub fn train_size(&self) -> usize {
        self.train.ncols()
    }

    fn weight(&self, p: &DVector<f64>, j: usize) -> f64 {
        if self.opts.unit_weights {
            1.0
        } else {
            sigmoid(p[j])
        }
    }

    /// Loss-derivative pieces at one example: returns `(u, σ(u))` with `u = −y wᵀx/τ`.
    fn margin(x: nalgebra::DVectorView<'_, f64>, label: f64, w: &DVector<f64>, tau: f64) -> (f64, f64) {
        let u = -label * x.dot(w) / tau;
        (u, sigmoid(u))
    }

    fn loss_mean(&self, data: &DMatrix<f64>, labels: &[f64], idx: &[usize], w: &DVector<f64>, tau: f64, weights: Option<&DVector<f64>>) -> f64 {
        let mut total = 0.0;
        for &j in idx {
            let (u, _) = Self::margin(data.column(j), labels[j], w, tau);
            let wt = weights.map_or(1.0, |p| self.weight(p, j));
            total += wt * softplus(u);
        }
        total / idx.len() as f64
    }

    fn loss_grad_mean(&self, data: &DMatrix<f64>, labels: &[f64], idx: &[usize], w: &DVector<f64>, tau: f64, weights: Option<&DVector<f64>>) -> DVector<f64> {
        let mut g = DVector::zeros(w.len());
        for &j in idx {
            let col = data.column(j);
            let (_, s) = Self::margin(col, labels[j], w, tau);
            let wt = weights.map_or(1.0, |p| self.weight(p, j));
            g.axpy(-wt * s * labels[j] / tau, &col, 1.0);
        }
        g / idx.len() as f64
    }

    /// Fraction of columns of `data` classified correctly by `sign(wᵀx)`.
    pub fn accuracy(data: &DMatrix<f64>, labels: &[f64], w: &DVector<f64>) -> f64 {
        let correct = data
            .column_iter()
            .zip(labels)
            .filter(|(c, &l)| c.dot(w) * l > 0.0)
            .count();
        correct as f64 / labels.len() as f64
    }

    pub fn validation_accuracy(&self, w: &DVector<f64>) -> f64 {
        Self::accuracy(&self.val, &self.val_y, w)
    }
}

impl ProblemOracle for HyperWeightMbbo {
    fn num_blocks(&self) -> usize {
        self.temps.len()
    }

    fn upper_dim(&self) -> usize {
        self.train.ncols()
    }

    fn lower_dim(&self, _block: usize) -> usize {
        self.train.nrows()
    }

    fn constants(&self) -> &DeclaredConstants {
        &self.constants
    }

    fn upper_sample_count(&self, _block: usize) -> usize {
        self.val.ncols()
    }

    fn lower_sample_count(&self, _block: usize) -> usize {
        self.train.ncols()
    }

    fn upper_value(&self, block: usize, _x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> f64 {
        self.loss_mean(&self.val, &self.val_y, batch.indices(), y, self.temps[block], None)
    }

    fn lower_value(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> f64 {
        self.loss_mean(&self.train, &self.train_y, batch.indices(), y, self.temps[block], Some(x))
            + 0.5 * self.opts.lambda_reg * y.norm_squared()
    }

    fn grad_x_f(&self, _block: usize, _x: &DVector<f64>, _y: &DVector<f64>, _batch: &Batch) -> DVector<f64> {
        DVector::zeros(self.train.ncols())
    }

    fn grad_y_f(&self, block: usize, _x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        self.loss_grad_mean(&self.val, &self.val_y, batch.indices(), y, self.temps[block], None)
    }

    fn grad_y_g(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        let mut g = self.loss_grad_mean(&self.train, &self.train_y, batch.indices(), y, self.temps[block], Some(x));
        g.axpy(self.opts.lambda_reg, y, 1.0);
        g
    }

    fn jacobian_xy_g_vec(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch, w: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.train.ncols());
        if self.opts.unit_weights {
            return out;
        }
        let tau = self.temps[block];
        let scale = 1.0 / batch.len() as f64;
        for &j in batch.indices() {
            let col = self.train.column(j);
            let (_, s) = Self::margin(col, self.train_y[j], y, tau);
            let sp = sigmoid(x[j]);
            out[j] += scale * sp * (1.0 - sp) * (-s * self.train_y[j] / tau) * col.dot(w);
        }
        out
    }

    fn hessian_yy_g_vec(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch, v: &DVector<f64>) -> DVector<f64> {
        let tau = self.temps[block];
        let mut out = DVector::zeros(v.len());
        for &j in batch.indices() {
            let col = self.train.column(j);
            let (_, s) = Self::margin(col, self.train_y[j], y, tau);
            let c = self.weight(x, j) * s * (1.0 - s) / (tau * tau);
            out.axpy(c * col.dot(v), &col, 1.0);
        }
        out /= batch.len() as f64;
        out.axpy(self.opts.lambda_reg, v, 1.0);
        out
    }

    fn hessian_yy_g(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> Result<DMatrix<f64>> {
        if !self.opts.dense_hessian {
            return Err(Error::Unsupported("hessian_yy_g"));
        }
        let tau = self.temps[block];
        let d = y.len();
        let mut h = DMatrix::zeros(d, d);
        let scale = 1.0 / batch.len() as f64;
        for &j in batch.indices() {
            let col = self.train.column(j);
            let (_, s) = Self::margin(col, self.train_y[j], y, tau);
            let c = scale * self.weight(x, j) * s * (1.0 - s) / (tau * tau);
            h.ger(c, &col, &col, 1.0);
        }
        for k in 0..d {
            h[(k, k)] += self.opts.lambda_reg;
        }
        Ok(crate::block::symmetrize(&h))
    }

    fn has_dense_hessian(&self) -> bool {
        self.opts.dense_hessian
    }
}

/// `m` blocks with temperatures in `temp_range`.
pub fn make_hyperweight(dataset: &Dataset, m: usize, lambda_reg: f64, temp_range: (f64, f64), seed: u64) -> Result<HyperWeightMbbo> {
    HyperWeightMbbo::new(
        dataset,
        m,
        temp_range,
        seed,
        HyperWeightOptions {
            lambda_reg,
            ..Default::default()
        },
    )
}
