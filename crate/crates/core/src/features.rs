//! State-action feature maps with analytic Lipschitz constants.
//!
//! Two constructions are provided:
//!
//! * a Fourier basis over a normalized state box, block-embedded by action
//!   (`φ(s, u) = e_u ⊗ ψ(s)`), and
//! * a one-hot tabular map over a finite state set, for which the linear-MDP
//!   factorization holds exactly.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{check_dim, invalid, Result};

/// Axis-aligned box `[lower, upper]` in state units.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl StateBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(invalid("state box must have at least one axis"));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l < u)) {
            return Err(invalid("state box requires lower < upper on every axis"));
        }
        Ok(Self { lower, upper })
    }

    /// The MountainCar safe set `[-1.5, 0.6] × [-0.07, 0.07]`.
    pub fn mountain_car_safe_set() -> Self {
        Self::new(vec![-1.5, -0.07], vec![0.6, 0.07]).expect("valid constant box")
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn width(&self, axis: usize) -> f64 {
        self.upper[axis] - self.lower[axis]
    }

    pub fn contains(&self, state: &[f64]) -> bool {
        state.len() == self.dim()
            && state
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&x, (&l, &u))| x >= l && x <= u)
    }

    pub fn clamp(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(&x, (&l, &u))| x.clamp(l, u))
            .collect()
    }

    /// Affine map of a (clamped) state onto `[0, 1]^n`.
    pub fn normalize(&self, state: &[f64]) -> Vec<f64> {
        state
            .iter()
            .enumerate()
            .map(|(i, &x)| (x.clamp(self.lower[i], self.upper[i]) - self.lower[i]) / self.width(i))
            .collect()
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureKind {
    Fourier {
        state_box: StateBox,
        max_order: u32,
        /// Frequency vectors `c`, lexicographic with the first axis most significant.
        coefficients: Vec<Vec<u32>>,
        /// Uniform block scaling; `1/√|C|` when normalized, else 1.
        scale: f64,
    },
    OneHotTabular {
        state_count: usize,
    },
}

/// A feature map `φ(x, u) ∈ R^d` over a finite action set.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    dimension: usize,
    action_count: usize,
    lipschitz_bound: f64,
    norm_bound: f64,
    kind: FeatureKind,
}

impl FeatureMap {
    /// Fourier basis of order `max_order` on `state_box`.
    ///
    /// With `normalized`, every block is scaled by `1/√((max_order+1)^n)` so
    /// that `‖φ‖₂ ≤ 1`; predictions are unchanged up to a rescaling of `θ`.
    pub fn fourier(state_box: StateBox, action_count: usize, max_order: u32, normalized: bool) -> Result<Self> {
        if action_count == 0 {
            return Err(invalid("feature map needs at least one action"));
        }
        let coefficients = fourier_coefficients(state_box.dim(), max_order);
        let block = coefficients.len();
        let scale = if normalized { 1.0 / libm::sqrt(block as f64) } else { 1.0 };
        let lipschitz = scale
            * coefficients
                .iter()
                .map(|c| {
                    PI * c
                        .iter()
                        .enumerate()
                        .map(|(i, &ci)| ci as f64 / state_box.width(i))
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
        Ok(Self {
            dimension: action_count * block,
            action_count,
            lipschitz_bound: lipschitz,
            norm_bound: scale * libm::sqrt(block as f64),
            kind: FeatureKind::Fourier { state_box, max_order, coefficients, scale },
        })
    }

    /// One-hot features over `state_count × action_count` pairs.
    pub fn one_hot(state_count: usize, action_count: usize) -> Result<Self> {
        if state_count == 0 || action_count == 0 {
            return Err(invalid("one-hot map needs at least one state and one action"));
        }
        Ok(Self {
            dimension: state_count * action_count,
            action_count,
            lipschitz_bound: 0.0,
            norm_bound: 1.0,
            kind: FeatureKind::OneHotTabular { state_count },
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// `L_φ` with respect to the ∞-norm in state.
    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    /// Supremum of `‖φ(x, u)‖₂`.
    pub fn norm_bound(&self) -> f64 {
        self.norm_bound
    }

    pub fn kind(&self) -> &FeatureKind {
        &self.kind
    }

    pub fn is_tabular(&self) -> bool {
        matches!(self.kind, FeatureKind::OneHotTabular { .. })
    }

    /// Size of the per-action block (the state-only feature `ψ`).
    pub fn block_size(&self) -> usize {
        self.dimension / self.action_count
    }

    /// Evaluates `φ(state, action)` into `out`, which must have length `d`.
    pub fn eval_into(&self, state: &[f64], action: usize, out: &mut [f64]) -> Result<()> {
        check_dim(self.dimension, out.len())?;
        if action >= self.action_count {
            return Err(invalid("action index out of range"));
        }
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.kind {
            FeatureKind::Fourier { state_box, .. } => {
                check_dim(state_box.dim(), state.len())?;
                let block = self.block_size();
                self.fourier_state_into(state, &mut out[action * block..(action + 1) * block]);
            }
            FeatureKind::OneHotTabular { state_count } => {
                let index = tabular_index(state, *state_count)?;
                out[index * self.action_count + action] = 1.0;
            }
        }
        Ok(())
    }

    pub fn eval(&self, state: &[f64], action: usize) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dimension];
        self.eval_into(state, action, &mut out)?;
        Ok(out)
    }

    /// State-only features `ψ(s)`; for tabular maps, a one-hot state indicator.
    pub fn state_features(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.block_size()];
        match &self.kind {
            FeatureKind::Fourier { state_box, .. } => {
                check_dim(state_box.dim(), state.len())?;
                self.fourier_state_into(state, &mut out);
            }
            FeatureKind::OneHotTabular { state_count } => {
                out[tabular_index(state, *state_count)?] = 1.0;
            }
        }
        Ok(out)
    }

    fn fourier_state_into(&self, state: &[f64], out: &mut [f64]) {
        if let FeatureKind::Fourier { state_box, coefficients, scale, .. } = &self.kind {
            let s = state_box.normalize(state);
            for (slot, c) in out.iter_mut().zip(coefficients) {
                let arg: f64 = c.iter().zip(&s).map(|(&ci, &si)| ci as f64 * si).sum();
                *slot = scale * libm::cos(PI * arg);
            }
        }
    }
}

fn tabular_index(state: &[f64], state_count: usize) -> Result<usize> {
    check_dim(1, state.len())?;
    let x = libm::round(state[0]);
    if !(x >= 0.0 && x < state_count as f64) {
        return Err(invalid("tabular state index out of range"));
    }
    Ok(x as usize)
}

/// All `c ∈ {0, …, max_order}^n`.
pub fn fourier_coefficients(state_dim: usize, max_order: u32) -> Vec<Vec<u32>> {
    let base = max_order as usize + 1;
    let count = base.pow(state_dim as u32);
    (0..count)
        .map(|mut k| {
            let mut c = vec![0u32; state_dim];
            for axis in (0..state_dim).rev() {
                c[axis] = (k % base) as u32;
                k /= base;
            }
            c
        })
        .collect()
}

/// `φ(x, u)` for the one-hot map: `e_{x·|U| + u}`.
pub fn one_hot_feature(state: usize, action: usize, state_count: usize, action_count: usize) -> Result<Vec<f64>> {
    if state >= state_count || action >= action_count {
        return Err(invalid("one-hot index out of range"));
    }
    let mut out = vec![0.0; state_count * action_count];
    out[state * action_count + action] = 1.0;
    Ok(out)
}

/// Standalone Fourier evaluation; `normalized = false`.
pub fn fourier_feature(state: &[f64], action: usize, state_box: &StateBox, action_count: usize, max_order: u32) -> Result<Vec<f64>> {
    FeatureMap::fourier(state_box.clone(), action_count, max_order, false)?.eval(state, action)
}
