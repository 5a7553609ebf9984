//! Regularized least squares with self-normalized confidence widths.
//!
//! Each backward stage regresses the next-stage safety value on the
//! state-action features of its own data block:
//!
//! ```text
//! V = λI + Σ φ_t φ_tᵀ,   θ̂ = V⁻¹ Σ φ_t y_t,   σ(φ) = √(φᵀ V⁻¹ φ)
//! ℓ(φ) = θ̂ᵀφ − penalty − β σ(φ)
//! ```
//!
//! The inverse is maintained with Sherman–Morrison updates and rebuilt from a
//! fresh Cholesky factorization every `refactor_every` absorptions. For
//! dimensions above [`CHOLESKY_SIGMA_THRESHOLD`] widths are evaluated through
//! the Cholesky factor instead of the explicit inverse.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, invalid, Error, Result};
use crate::linalg::{dot, Cholesky, SquareMatrix};

/// Above this feature dimension, `σ` is computed by a triangular solve.
pub const CHOLESKY_SIGMA_THRESHOLD: usize = 32;

/// Default number of rank-one updates between full refactorizations.
pub const DEFAULT_REFACTOR_EVERY: usize = 1_000;

/// Per-stage regression state.
#[derive(Debug, Clone)]
pub struct RidgeStage {
    gram: SquareMatrix,
    gram_inverse: SquareMatrix,
    cholesky: Option<Cholesky>,
    cross: Vec<f64>,
    theta_hat: Vec<f64>,
    beta: f64,
    sample_count: usize,
    ridge_lambda: f64,
    refactor_every: usize,
    since_refactor: usize,
}

impl RidgeStage {
    /// Empty-data stage: `V = λI`, `θ̂ = 0`.
    pub fn new(dimension: usize, ridge_lambda: f64) -> Result<Self> {
        if dimension == 0 {
            return Err(invalid("ridge dimension must be at least 1"));
        }
        if !(ridge_lambda > 0.0) || !ridge_lambda.is_finite() {
            return Err(invalid("ridge lambda must be positive and finite"));
        }
        let gram = SquareMatrix::scaled_identity(dimension, ridge_lambda);
        let gram_inverse = SquareMatrix::scaled_identity(dimension, 1.0 / ridge_lambda);
        let cholesky = (dimension > CHOLESKY_SIGMA_THRESHOLD)
            .then(|| Cholesky::factor(&gram).expect("scaled identity is SPD"));
        Ok(Self {
            gram,
            gram_inverse,
            cholesky,
            cross: vec![0.0; dimension],
            theta_hat: vec![0.0; dimension],
            beta: 0.0,
            sample_count: 0,
            ridge_lambda,
            refactor_every: DEFAULT_REFACTOR_EVERY,
            since_refactor: 0,
        })
    }

    pub fn with_refactor_every(mut self, every: usize) -> Self {
        self.refactor_every = every.max(1);
        self
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn dimension(&self) -> usize {
        self.theta_hat.len()
    }

    pub fn gram(&self) -> &SquareMatrix {
        &self.gram
    }

    pub fn gram_inverse(&self) -> &SquareMatrix {
        &self.gram_inverse
    }

    pub fn theta_hat(&self) -> &[f64] {
        &self.theta_hat
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn ridge_lambda(&self) -> f64 {
        self.ridge_lambda
    }

    /// Returns a new stage with the batch absorbed. The receiver is left untouched.
    pub fn fit<R: AsRef<[f64]>>(&self, features: &[R], targets: &[f64]) -> Result<Self> {
        check_dim(features.len(), targets.len())?;
        let mut next = self.clone();
        for (row, &y) in features.iter().zip(targets) {
            next.absorb_row(row.as_ref(), y)?;
        }
        next.solve_theta();
        Ok(next)
    }

    /// Keeps the design (Gram, inverse, count) and replaces the targets.
    ///
    /// `features` must be the exact rows absorbed since initialization;
    /// this is what lets a fixed-point search reuse one factorization
    /// across reference sets.
    pub fn refit_targets<R: AsRef<[f64]>>(&self, features: &[R], targets: &[f64]) -> Result<Self> {
        check_dim(self.sample_count, features.len())?;
        check_dim(features.len(), targets.len())?;
        let mut next = self.clone();
        next.cross.iter_mut().for_each(|c| *c = 0.0);
        for (row, &y) in features.iter().zip(targets) {
            let row = row.as_ref();
            check_target(y)?;
            for (c, &f) in next.cross.iter_mut().zip(row) {
                *c += f * y;
            }
        }
        next.solve_theta();
        Ok(next)
    }

    fn absorb_row(&mut self, row: &[f64], y: f64) -> Result<()> {
        check_dim(self.dimension(), row.len())?;
        check_target(y)?;
        self.gram.add_outer(row, 1.0);
        self.gram_inverse.sherman_morrison_update(row);
        for (c, &f) in self.cross.iter_mut().zip(row) {
            *c += f * y;
        }
        self.sample_count += 1;
        self.since_refactor += 1;
        if self.since_refactor >= self.refactor_every {
            self.refactor()?;
        }
        Ok(())
    }

    fn refactor(&mut self) -> Result<()> {
        let chol = Cholesky::factor(&self.gram)?;
        self.gram_inverse = chol.inverse();
        self.since_refactor = 0;
        Ok(())
    }

    fn solve_theta(&mut self) {
        if self.dimension() > CHOLESKY_SIGMA_THRESHOLD {
            let chol = Cholesky::factor(&self.gram).expect("ridge Gram is SPD");
            self.theta_hat = chol.solve(&self.cross);
            self.cholesky = Some(chol);
        } else {
            self.theta_hat = self.gram_inverse.mul_vec(&self.cross);
        }
    }

    /// Self-normalized width `√(φᵀ V⁻¹ φ)`.
    pub fn sigma(&self, feature: &[f64]) -> Result<f64> {
        check_dim(self.dimension(), feature.len())?;
        let q = match &self.cholesky {
            Some(chol) => chol.inverse_quadratic_form(feature),
            None => self.gram_inverse.quadratic_form(feature),
        };
        Ok(libm::sqrt(q.max(0.0)))
    }

    /// Width through the maintained explicit inverse.
    pub fn sigma_via_inverse(&self, feature: &[f64]) -> Result<f64> {
        check_dim(self.dimension(), feature.len())?;
        Ok(libm::sqrt(self.gram_inverse.quadratic_form(feature).max(0.0)))
    }

    /// Width through a fresh Cholesky factor of the Gram.
    pub fn sigma_via_cholesky(&self, feature: &[f64]) -> Result<f64> {
        check_dim(self.dimension(), feature.len())?;
        let chol = Cholesky::factor(&self.gram)?;
        Ok(libm::sqrt(chol.inverse_quadratic_form(feature).max(0.0)))
    }

    pub fn predict(&self, feature: &[f64]) -> Result<f64> {
        check_dim(self.dimension(), feature.len())?;
        Ok(dot(&self.theta_hat, feature))
    }

    /// `θ̂ᵀφ − penalty − β σ(φ)`, unclipped.
    pub fn lower_confidence(&self, feature: &[f64], discretization_penalty: f64) -> Result<f64> {
        let mean = self.predict(feature)?;
        let width = self.sigma(feature)?;
        Ok(mean - discretization_penalty - self.beta * width)
    }
}

fn check_target(y: f64) -> Result<()> {
    if (0.0..=1.0).contains(&y) {
        Ok(())
    } else {
        Err(Error::ContractViolation(alloc::format!(
            "regression target {y} outside [0, 1]"
        )))
    }
}

/// Confidence bookkeeping shared by every stage of one operator evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceParams {
    pub epsilon: f64,
    pub eta: f64,
    pub per_stage_delta: Vec<f64>,
    pub horizon: usize,
    pub sub_gaussian_r: f64,
    pub theta_norm_bound: f64,
}

impl ConfidenceParams {
    /// Uniform split `δ_j = (1 − η)/N`, `R = 1/2`, `S = √d`.
    pub fn uniform(epsilon: f64, eta: f64, horizon: usize, dimension: usize) -> Result<Self> {
        if horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        let delta = (1.0 - eta) / horizon as f64;
        let params = Self {
            epsilon,
            eta,
            per_stage_delta: vec![delta; horizon],
            horizon,
            sub_gaussian_r: 0.5,
            theta_norm_bound: libm::sqrt(dimension as f64),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(invalid("horizon must be at least 1"));
        }
        check_dim(self.horizon, self.per_stage_delta.len())?;
        // ε = 0 and ε = 1 are accepted as degenerate thresholds.
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(invalid("epsilon must lie in [0, 1]"));
        }
        if !(self.eta > 0.0 && self.eta < 1.0) {
            return Err(invalid("eta must lie in (0, 1)"));
        }
        if self.per_stage_delta.iter().any(|&d| !(d > 0.0 && d < 1.0)) {
            return Err(invalid("every per-stage delta must lie in (0, 1)"));
        }
        let total: f64 = self.per_stage_delta.iter().sum();
        if total > 1.0 - self.eta + 1e-12 {
            return Err(invalid("per-stage deltas must sum to at most 1 - eta"));
        }
        if !(self.sub_gaussian_r > 0.0) || !(self.theta_norm_bound > 0.0) {
            return Err(invalid("R and S must be positive"));
        }
        Ok(())
    }

    /// Safety threshold `1 − ε`.
    pub fn threshold(&self) -> f64 {
        1.0 - self.epsilon
    }
}

/// `β_j = R √(d ln((1 + T_j/λ)/δ_j)) + √λ S`.
pub fn beta_default(
    params: &ConfidenceParams,
    stage_index: usize,
    sample_count: usize,
    ridge_lambda: f64,
    dimension: usize,
) -> Result<f64> {
    if stage_index >= params.horizon {
        return Err(invalid("stage index out of range"));
    }
    let delta = params.per_stage_delta[stage_index];
    beta_closed_form(
        params.sub_gaussian_r,
        params.theta_norm_bound,
        delta,
        sample_count,
        ridge_lambda,
        dimension,
    )
}

pub fn beta_closed_form(
    sub_gaussian_r: f64,
    theta_norm_bound: f64,
    delta: f64,
    sample_count: usize,
    ridge_lambda: f64,
    dimension: usize,
) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    if !(ridge_lambda > 0.0) {
        return Err(invalid("ridge lambda must be positive"));
    }
    let log_term = libm::log((1.0 + sample_count as f64 / ridge_lambda) / delta);
    Ok(sub_gaussian_r * libm::sqrt(dimension as f64 * log_term)
        + libm::sqrt(ridge_lambda) * theta_norm_bound)
}
