//! Quadratic testbed with closed-form lower solutions and hypergradient.
//!
//! Block `i` has
//!
//! ```text
//! f_i(x, y) = ½‖y − b_i‖²
//! g_i(x, y) = ½‖y − A_i x‖² + (λ_reg/2)‖y‖²
//! ```
//!
//! so `y_i(x) = A_i x/(1 + λ_reg)` and `F` is a convex quadratic. Sample `j`
//! perturbs every oracle with zero-mean noise:
//!
//! ```text
//! f_ij(x, y) = f_i(x, y) − ζ_jᵀy + c_jᵀx
//! g_ij(x, y) = g_i(x, y) + ½yᵀN_j y − yᵀM_j x − ξ_jᵀy
//! ```
//!
//! The noise arrays are centered exactly over each sample set, so full-batch
//! oracles are the noiseless ones.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{param_err, shape_err, Result};
use crate::problem::{Batch, DeclaredConstants, ProblemOracle};
use crate::rng::{substream, Purpose};

#[derive(Debug, Clone)]
struct Noise {
    zeta: Vec<DVector<f64>>,
    c: Vec<DVector<f64>>,
    xi: Vec<DVector<f64>>,
    n: Vec<DMatrix<f64>>,
    m: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
struct Block {
    a: DMatrix<f64>,
    b: DVector<f64>,
    noise: Option<Noise>,
}

/// Options of [`QuadraticMbbo::from_parts`].
#[derive(Debug, Clone)]
pub struct QuadraticOptions {
    pub lambda_reg: f64,
    /// Per-oracle noise level: each perturbation has `E‖·‖² = σ²`.
    pub noise_sigma: f64,
    /// Samples per block, shared by the upper and lower sample sets.
    pub samples: usize,
    pub seed: u64,
}

impl Default for QuadraticOptions {
    fn default() -> Self {
        Self {
            lambda_reg: 0.0,
            noise_sigma: 0.0,
            samples: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadraticMbbo {
    blocks: Vec<Block>,
    d_x: usize,
    lambda_reg: f64,
    samples: usize,
    constants: DeclaredConstants,
    q: DMatrix<f64>,
    r: DVector<f64>,
    x_star: DVector<f64>,
    f_star: f64,
}

fn gaussian_vec(rng: &mut impl Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn gaussian_mat(rng: &mut impl Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn centered<T>(mut xs: Vec<T>) -> Vec<T>
where
    T: Clone + std::ops::SubAssign<T> + std::ops::Div<f64, Output = T> + std::ops::Add<Output = T>,
{
    let n = xs.len() as f64;
    let mean = xs.iter().skip(1).fold(xs[0].clone(), |acc, x| acc + x.clone()) / n;
    for x in &mut xs {
        *x -= mean.clone();
    }
    xs
}

fn batch_mean_vec(items: &[DVector<f64>], batch: &Batch) -> DVector<f64> {
    let mut acc = DVector::zeros(items[0].len());
    for &j in batch.indices() {
        acc += &items[j];
    }
    acc / batch.len() as f64
}

fn batch_mean_mat(items: &[DMatrix<f64>], batch: &Batch) -> DMatrix<f64> {
    let (r, c) = items[0].shape();
    let mut acc = DMatrix::zeros(r, c);
    for &j in batch.indices() {
        acc += &items[j];
    }
    acc / batch.len() as f64
}

impl QuadraticMbbo {
    /// Random instance: `A_i` has `N(0, 1/d_x)` entries, `b_i ~ N(0, I)`.
    pub fn random(m: usize, d_x: usize, d_y: usize, opts: QuadraticOptions) -> Result<Self> {
        if m == 0 || d_x == 0 || d_y == 0 {
            return param_err(format!("quadratic problem needs positive sizes, got m = {m}, d_x = {d_x}, d_y = {d_y}"));
        }
        let mut rng = substream(opts.seed, 0, 0, Purpose::Problem);
        let scale = 1.0 / (d_x as f64).sqrt();
        let mut a = Vec::with_capacity(m);
        let mut b = Vec::with_capacity(m);
        for _ in 0..m {
            a.push(gaussian_mat(&mut rng, d_y, d_x, scale));
            b.push(gaussian_vec(&mut rng, d_y, 1.0));
        }
        Self::from_parts(a, b, opts)
    }

    pub fn from_parts(a: Vec<DMatrix<f64>>, b: Vec<DVector<f64>>, opts: QuadraticOptions) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return param_err(format!("need one target per block, got {} matrices and {} targets", a.len(), b.len()));
        }
        if opts.lambda_reg < 0.0 || opts.noise_sigma < 0.0 {
            return param_err("lambda_reg and noise_sigma must be nonnegative");
        }
        if opts.samples == 0 {
            return param_err("need at least one sample per block");
        }
        let d_x = a[0].ncols();
        for (i, (ai, bi)) in a.iter().zip(&b).enumerate() {
            if ai.ncols() != d_x || ai.nrows() != bi.len() {
                return shape_err(format!("block {i}: A is {:?}, b has length {}", ai.shape(), bi.len()));
            }
        }
        let m = a.len();
        let sigma = opts.noise_sigma;
        let scale = 1.0 + opts.lambda_reg;

        let mut blocks = Vec::with_capacity(m);
        let mut worst_noise_hessian: f64 = 0.0;
        for (i, (ai, bi)) in a.into_iter().zip(b).enumerate() {
            let d_y = ai.nrows();
            let noise = if sigma > 0.0 {
                let mut rng = substream(opts.seed, 1, i as u64, Purpose::Problem);
                let n = opts.samples;
                let vs = |rng: &mut _, d: usize| centered((0..n).map(|_| gaussian_vec(rng, d, sigma / (d as f64).sqrt())).collect());
                let zeta = vs(&mut rng, d_y);
                let c = vs(&mut rng, d_x);
                let xi = vs(&mut rng, d_y);
                let hess = centered(
                    (0..n)
                        .map(|_| {
                            let g = gaussian_mat(&mut rng, d_y, d_y, sigma / (2.0 * d_y as f64).sqrt());
                            crate::block::symmetrize(&(&g + g.transpose()))
                        })
                        .collect(),
                );
                let jac = centered(
                    (0..n)
                        .map(|_| gaussian_mat(&mut rng, d_y, d_x, sigma / ((d_x * d_y) as f64).sqrt()))
                        .collect(),
                );
                for h in &hess {
                    worst_noise_hessian = worst_noise_hessian.max(h.norm());
                }
                Some(Noise {
                    zeta,
                    c,
                    xi,
                    n: hess.into_iter().map(|h| crate::block::symmetrize(&h)).collect(),
                    m: jac,
                })
            } else {
                None
            };
            blocks.push(Block { a: ai, b: bi, noise });
        }

        let mut q = DMatrix::zeros(d_x, d_x);
        let mut r = DVector::zeros(d_x);
        for blk in &blocks {
            q += blk.a.transpose() * &blk.a;
            r += blk.a.transpose() * &blk.b;
        }
        q /= m as f64 * scale * scale;
        r /= m as f64 * scale;
        let eig = SymmetricEigen::new(q.clone());
        let (lo, hi) = (eig.eigenvalues.min(), eig.eigenvalues.max());
        if !(lo > 1e-12 * hi.max(1.0)) {
            return param_err("the upper objective is not strongly convex; use more blocks or a larger d_y");
        }
        let x_star = q.clone().cholesky().expect("Q is positive definite").solve(&r);

        let radius = 2.0 * x_star.norm() + 1.0;
        let c_fy = 2.0
            * blocks
                .iter()
                .map(|blk| blk.a.norm() * radius / scale + blk.b.norm())
                .fold(0.0, f64::max)
            + sigma;
        let constants = DeclaredConstants {
            lambda: scale,
            l_g: scale,
            sigma,
            c_fy: Some(c_fy),
            c_gyy_tilde: scale + worst_noise_hessian,
            l_fy: 1.0,
            l_gyy: 0.0,
            l_f: Some(hi),
            mu: Some(2.0 * lo),
        };
        let mut out = Self {
            blocks,
            d_x,
            lambda_reg: opts.lambda_reg,
            samples: opts.samples,
            constants,
            q,
            r,
            x_star,
            f_star: 0.0,
        };
        out.f_star = out.objective(&out.x_star.clone());
        Ok(out)
    }

    pub fn lambda_reg(&self) -> f64 {
        self.lambda_reg
    }

    /// `F(x)` in closed form.
    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let scale = 1.0 + self.lambda_reg;
        self.blocks
            .iter()
            .map(|blk| 0.5 * (&blk.a * x / scale - &blk.b).norm_squared())
            .sum::<f64>()
            / self.blocks.len() as f64
    }

    /// `∇F(x) = Q x − r`.
    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x - &self.r
    }

    /// Hessian `Q` of `F`.
    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn minimizer(&self) -> &DVector<f64> {
        &self.x_star
    }

    pub fn min_value(&self) -> f64 {
        self.f_star
    }
}

impl ProblemOracle for QuadraticMbbo {
    fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn upper_dim(&self) -> usize {
        self.d_x
    }

    fn lower_dim(&self, block: usize) -> usize {
        self.blocks[block].b.len()
    }

    fn constants(&self) -> &DeclaredConstants {
        &self.constants
    }

    fn upper_sample_count(&self, _block: usize) -> usize {
        self.samples
    }

    fn lower_sample_count(&self, _block: usize) -> usize {
        self.samples
    }

    fn upper_value(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> f64 {
        let blk = &self.blocks[block];
        let mut v = 0.5 * (y - &blk.b).norm_squared();
        if let Some(n) = &blk.noise {
            v += -batch_mean_vec(&n.zeta, batch).dot(y) + batch_mean_vec(&n.c, batch).dot(x);
        }
        v
    }

    fn lower_value(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> f64 {
        let blk = &self.blocks[block];
        let ax = &blk.a * x;
        let mut v = 0.5 * (y - &ax).norm_squared() + 0.5 * self.lambda_reg * y.norm_squared();
        if let Some(n) = &blk.noise {
            let nm = batch_mean_mat(&n.n, batch);
            let mm = batch_mean_mat(&n.m, batch);
            v += 0.5 * y.dot(&(nm * y)) - y.dot(&(mm * x)) - batch_mean_vec(&n.xi, batch).dot(y);
        }
        v
    }

    fn grad_x_f(&self, block: usize, _x: &DVector<f64>, _y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        match &self.blocks[block].noise {
            Some(n) => batch_mean_vec(&n.c, batch),
            None => DVector::zeros(self.d_x),
        }
    }

    fn grad_y_f(&self, block: usize, _x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        let blk = &self.blocks[block];
        let mut g = y - &blk.b;
        if let Some(n) = &blk.noise {
            g -= batch_mean_vec(&n.zeta, batch);
        }
        g
    }

    fn grad_y_g(&self, block: usize, x: &DVector<f64>, y: &DVector<f64>, batch: &Batch) -> DVector<f64> {
        let blk = &self.blocks[block];
        let mut g = y * (1.0 + self.lambda_reg) - &blk.a * x;
        if let Some(n) = &blk.noise {
            g += batch_mean_mat(&n.n, batch) * y - batch_mean_mat(&n.m, batch) * x - batch_mean_vec(&n.xi, batch);
        }
        g
    }

    fn jacobian_xy_g_vec(&self, block: usize, _x: &DVector<f64>, _y: &DVector<f64>, batch: &Batch, w: &DVector<f64>) -> DVector<f64> {
        let blk = &self.blocks[block];
        let mut out = -(blk.a.tr_mul(w));
        if let Some(n) = &blk.noise {
            out -= batch_mean_mat(&n.m, batch).tr_mul(w);
        }
        out
    }

    fn hessian_yy_g_vec(&self, block: usize, _x: &DVector<f64>, _y: &DVector<f64>, batch: &Batch, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v * (1.0 + self.lambda_reg);
        if let Some(n) = &self.blocks[block].noise {
            out += batch_mean_mat(&n.n, batch) * v;
        }
        out
    }

    fn hessian_yy_g(&self, block: usize, _x: &DVector<f64>, _y: &DVector<f64>, batch: &Batch) -> Result<DMatrix<f64>> {
        let d = self.lower_dim(block);
        let mut h = DMatrix::identity(d, d) * (1.0 + self.lambda_reg);
        if let Some(n) = &self.blocks[block].noise {
            h += batch_mean_mat(&n.n, batch);
        }
        Ok(crate::block::symmetrize(&h))
    }

    fn has_dense_hessian(&self) -> bool {
        true
    }

    fn closed_form_lower(&self, block: usize, x: &DVector<f64>) -> Option<DVector<f64>> {
        Some(&self.blocks[block].a * x / (1.0 + self.lambda_reg))
    }
}

/// Random quadratic instance with `λ_reg = 0`.
pub fn make_quadratic(m: usize, d_x: usize, d_y: usize, noise_sigma: f64, seed: u64) -> Result<QuadraticMbbo> {
    QuadraticMbbo::random(
        m,
        d_x,
        d_y,
        QuadraticOptions {
            noise_sigma,
            seed,
            ..Default::default()
        },
    )
}
