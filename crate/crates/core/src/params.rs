//! Solver hyperparameters and their theory-mode derivation.

use serde::{Deserialize, Serialize};

use crate::error::{param_err, Result};
use crate::problem::DeclaredConstants;

/// How the lower variables (and `v` for the second solver) are initialized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WarmStart {
    /// Run this many (projected) gradient steps with `init_batch`-sized batches.
    Steps(usize),
    /// Solve each lower problem (and the Hessian system) to high accuracy
    /// with deterministic oracles.
    Exact,
}

/// Step sizes, mixing coefficients and budgets for one solver run.
///
/// The lower step is `tau * tau_t`: `tau` is the dimensionless scale bounded
/// by `2/(3 L_g)` in the analysis and `tau_t` the schedule-controlled factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HyperParams {
    pub alpha: f64,
    pub alpha_bar: f64,
    pub beta: f64,
    pub tau: f64,
    pub tau_t: f64,
    pub tau_bar_t: f64,
    pub eta: f64,
    /// `I`, blocks sampled per iteration.
    pub blocks_per_iter: usize,
    /// `B`, samples per batch.
    pub batch_size: usize,
    /// `T`.
    pub iterations: u64,
    /// Batch size for initialization; `None` uses every sample.
    pub init_batch: Option<usize>,
    pub warm_start: WarmStart,
    /// Step of the warm-start gradient iterations; defaults to `1/L_g`.
    pub warm_start_step: Option<f64>,
    /// Defer the all-block `y` step of unsampled blocks until they are sampled.
    pub lazy_y: bool,
    /// Same for the `v` step of the second solver.
    pub lazy_v: bool,
    pub seed: u64,
    /// Replaces the sampling-corrected `γ` of the `s` tracker.
    pub gamma_override: Option<f64>,
    /// Replaces `γ̄` of the `H` tracker (first solver) and the `u` tracker (second solver).
    pub gamma_bar_override: Option<f64>,
    /// Radius of the ball for `v`; defaults to `C_fy/λ`.
    pub ball_radius: Option<f64>,
    /// Eigenvalue floor for `H`; defaults to the declared `λ`.
    pub lambda_floor: Option<f64>,
    /// Evaluate the sampled blocks of an iteration on the rayon pool. Results
    /// are identical to the sequential schedule.
    pub parallel: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            alpha_bar: 0.1,
            beta: 0.1,
            tau: 1.0,
            tau_t: 0.5,
            tau_bar_t: 0.5,
            eta: 0.01,
            blocks_per_iter: 1,
            batch_size: 32,
            iterations: 1000,
            init_batch: None,
            warm_start: WarmStart::Steps(100),
            warm_start_step: None,
            lazy_y: true,
            lazy_v: true,
            seed: 0,
            gamma_override: None,
            gamma_bar_override: None,
            ball_radius: None,
            lambda_floor: None,
            parallel: false,
        }
    }
}

fn in_unit(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x <= 1.0 {
        Ok(())
    } else {
        param_err(format!("{name} must lie in (0, 1], got {x}"))
    }
}

fn positive(name: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        param_err(format!("{name} must be positive and finite, got {x}"))
    }
}

/// `𝕀(I < m)/I + 1/B`, the variance factor shared by every parameter order.
pub fn variance_factor(m: usize, blocks_per_iter: usize, batch_size: usize) -> f64 {
    let block_term = if blocks_per_iter < m {
        1.0 / blocks_per_iter as f64
    } else {
        0.0
    };
    block_term + 1.0 / batch_size as f64
}

/// `L_φv = sqrt(max{4 L_gyy² V² + 2 L_fy², 4 C̃_gyy²})`, the smoothness of the
/// quadratic subproblem gradient in `(v, x, y)`.
pub fn phi_smoothness(constants: &DeclaredConstants, radius: f64) -> f64 {
    let a = 4.0 * constants.l_gyy.powi(2) * radius.powi(2) + 2.0 * constants.l_fy.powi(2);
    let b = 4.0 * constants.c_gyy_tilde.powi(2);
    a.max(b).sqrt()
}

/// Largest `τ̄` allowed by the subproblem contraction argument.
pub fn tau_bar_cap(constants: &DeclaredConstants, radius: f64) -> f64 {
    let lambda = constants.lambda;
    let l = phi_smoothness(constants, radius);
    let mut cap = (lambda / 2.0).min(1.0 / lambda);
    if l > 0.0 {
        cap = cap.min(lambda / (8.0 * l * l));
    }
    cap
}

/// Multipliers on the order-only theory formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TheoryMultipliers {
    pub c_mix: f64,
    pub c_step: f64,
}

impl Default for TheoryMultipliers {
    fn default() -> Self {
        Self {
            c_mix: 1.0,
            c_step: 1.0,
        }
    }
}

impl HyperParams {
    /// Checks ranges. With `theory` set, also enforces `τ ≤ 2/(3 L_g)`.
    pub fn validate(&self, m: usize, theory: Option<&DeclaredConstants>) -> Result<()> {
        if self.blocks_per_iter == 0 || self.blocks_per_iter > m {
            return param_err(format!(
                "blocks_per_iter must lie in 1..={m}, got {}",
                self.blocks_per_iter
            ));
        }
        if self.batch_size == 0 {
            return param_err("batch_size must be at least 1");
        }
        if self.init_batch == Some(0) {
            return param_err("init_batch must be at least 1");
        }
        in_unit("alpha", self.alpha)?;
        in_unit("alpha_bar", self.alpha_bar)?;
        in_unit("beta", self.beta)?;
        positive("tau", self.tau)?;
        positive("tau_t", self.tau_t)?;
        positive("tau_bar_t", self.tau_bar_t)?;
        positive("eta", self.eta)?;
        if let Some(step) = self.warm_start_step {
            positive("warm_start_step", step)?;
        }
        if let Some(r) = self.ball_radius {
            positive("ball_radius", r)?;
        }
        if let Some(l) = self.lambda_floor {
            positive("lambda_floor", l)?;
        }
        for (name, g) in [("gamma_override", self.gamma_override), ("gamma_bar_override", self.gamma_bar_override)] {
            if let Some(g) = g {
                if !g.is_finite() {
                    return param_err(format!("{name} must be finite"));
                }
            }
        }
        if let Some(c) = theory {
            c.validate()?;
            let cap = 2.0 / (3.0 * c.l_g);
            if self.tau > cap * (1.0 + 1e-12) {
                return param_err(format!("tau = {} exceeds 2/(3 L_g) = {cap}", self.tau));
            }
        }
        Ok(())
    }

    /// Parameters at the orders required for an `ε`-stationary point.
    ///
    /// ```text
    /// α = min{1/2, c_mix B ε²}           ᾱ = min{1/2, c_mix ε²/κ}
    /// β = min{1, c_mix ε²/κ}             τ = 2/(3 L_g)
    /// τ_t = min{1, c_step √(I/m) ε/√κ}   τ̄_t = min{cap, c_step √(I/m) ε/√κ}
    /// η = min{1/(2 L_F), c_step (I/m) ε/√κ}
    /// ```
    ///
    /// with `κ = 𝕀(I < m)/I + 1/B`. Budgets, seeds and switches are copied
    /// from `base`.
    pub fn theory(
        base: &HyperParams,
        epsilon: f64,
        m: usize,
        constants: &DeclaredConstants,
        mult: TheoryMultipliers,
    ) -> Result<HyperParams> {
        positive("epsilon", epsilon)?;
        constants.validate()?;
        let i = base.blocks_per_iter;
        let b = base.batch_size;
        if i == 0 || i > m || b == 0 {
            return param_err(format!("theory mode needs 1 <= I <= m and B >= 1, got I = {i}, B = {b}"));
        }
        let kappa = variance_factor(m, i, b);
        let eps2 = epsilon * epsilon;
        let ratio = i as f64 / m as f64;
        let lower_step = mult.c_step * ratio.sqrt() * epsilon / kappa.sqrt();
        let radius = match base.ball_radius {
            Some(r) => r,
            None => constants.ball_radius().unwrap_or(1.0 / constants.lambda),
        };
        let mut eta = mult.c_step * ratio * epsilon / kappa.sqrt();
        if let Some(l_f) = constants.l_f {
            eta = eta.min(1.0 / (2.0 * l_f));
        }
        Ok(HyperParams {
            alpha: (mult.c_mix * b as f64 * eps2).min(0.5),
            alpha_bar: (mult.c_mix * eps2 / kappa).min(0.5),
            beta: (mult.c_mix * eps2 / kappa).min(1.0),
            tau: 2.0 / (3.0 * constants.l_g),
            tau_t: lower_step.min(1.0),
            tau_bar_t: lower_step.min(tau_bar_cap(constants, radius)),
            eta,
            ..base.clone()
        })
    }

    /// `γ` of the `s` tracker.
    pub fn effective_gamma(&self, m: usize) -> Result<f64> {
        match self.gamma_override {
            Some(g) => Ok(g),
            None => crate::estimators::msvr_gamma(m, self.blocks_per_iter, self.alpha),
        }
    }

    /// `γ̄` of the `H` and `u` trackers.
    pub fn effective_gamma_bar(&self, m: usize) -> Result<f64> {
        match self.gamma_bar_override {
            Some(g) => Ok(g),
            None => crate::estimators::msvr_gamma(m, self.blocks_per_iter, self.alpha_bar),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constants() -> DeclaredConstants {
        DeclaredConstants {
            lambda: 1.0,
            l_g: 2.0,
            sigma: 0.1,
            c_fy: Some(3.0),
            c_gyy_tilde: 2.0,
            l_fy: 1.0,
            l_gyy: 0.0,
            l_f: Some(4.0),
            mu: Some(0.5),
        }
    }

    #[test]
    fn defaults_validate() {
        HyperParams::default().validate(1, None).unwrap();
    }

    #[test]
    fn rejects_out_of_range() {
        let p = HyperParams {
            blocks_per_iter: 5,
            ..Default::default()
        };
        assert!(p.validate(4, None).is_err());
        let p = HyperParams {
            alpha: 0.0,
            ..Default::default()
        };
        assert!(p.validate(4, None).is_err());
        let p = HyperParams {
            beta: 1.5,
            ..Default::default()
        };
        assert!(p.validate(4, None).is_err());
        let p = HyperParams {
            eta: -1.0,
            ..Default::default()
        };
        assert!(p.validate(4, None).is_err());
    }

    #[test]
    fn theory_mode_enforces_tau_cap() {
        let p = HyperParams::default();
        assert!(p.validate(1, Some(&constants())).is_err());
        let p = HyperParams {
            tau: 1.0 / 3.0,
            ..Default::default()
        };
        p.validate(1, Some(&constants())).unwrap();
    }

    #[test]
    fn variance_factor_drops_block_term_at_full_sampling() {
        assert_eq!(variance_factor(10, 10, 4), 0.25);
        assert_eq!(variance_factor(10, 2, 4), 0.75);
    }

    #[test]
    fn theory_orders() {
        let base = HyperParams {
            blocks_per_iter: 5,
            batch_size: 8,
            ..Default::default()
        };
        let c = constants();
        let p = HyperParams::theory(&base, 0.1, 20, &c, TheoryMultipliers::default()).unwrap();
        let kappa: f64 = 0.2 + 0.125;
        assert!((p.alpha - 8.0 * 0.01).abs() < 1e-15);
        assert!((p.alpha_bar - 0.01 / kappa).abs() < 1e-15);
        assert!((p.beta - 0.01 / kappa).abs() < 1e-15);
        assert!((p.tau - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.tau_t - (0.25f64).sqrt() * 0.1 / kappa.sqrt()).abs() < 1e-15);
        assert!((p.eta - 0.25 * 0.1 / kappa.sqrt()).abs() < 1e-15);
        // cap = min{λ/(8 L_φv²), λ/2, 1/λ} with L_φv² = max{2, 16} = 16.
        assert!((p.tau_bar_t - (1.0f64 / 128.0)).abs() < 1e-15);
        p.validate(20, Some(&c)).unwrap();

        // halving ε quarters the mixing coefficients and halves the steps
        let q = HyperParams::theory(&base, 0.05, 20, &c, TheoryMultipliers::default()).unwrap();
        assert!((p.beta / q.beta - 4.0).abs() < 1e-12);
        assert!((p.eta / q.eta - 2.0).abs() < 1e-12);
    }
}
