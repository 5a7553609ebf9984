//! Randomized conservatism checks against the exact finite-MDP operator.

use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::split_stagewise;
use crate::error::Result;
use crate::lattice::LatticeMask;
use crate::operator::ConservativeOperator;
use crate::oracle::{exact_q_operator, random_model, sample_transitions, FiniteMdpModel, RandomModelSpec};
use crate::ridge::ConfidenceParams;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub horizon: usize,
    pub epsilon: f64,
    pub samples_per_stage: usize,
    pub q_tilde: Vec<bool>,
    pub q_exact: Vec<bool>,
}

impl TrialOutcome {
    /// `Q̃ ⊆ Q`.
    pub fn contained(&self) -> bool {
        self.q_tilde.iter().zip(&self.q_exact).all(|(a, b)| !a || *b)
    }
}

/// One data-driven evaluation on `Ω = safe states` compared with the exact operator.
pub fn conservatism_trial<R: Rng + ?Sized>(
    model: &FiniteMdpModel,
    horizon: usize,
    epsilon: f64,
    eta: f64,
    samples_per_stage: usize,
    rng: &mut R,
) -> Result<TrialOutcome> {
    let map = model.feature_map();
    let params = ConfidenceParams::uniform(epsilon, eta, horizon, map.dimension())?;
    let op = ConservativeOperator::new(map, model.grid(), params)?;
    let data = sample_transitions(model, samples_per_stage * horizon, rng);
    let omega = model.safe_mask();
    let result = op.apply_exact(&omega, &split_stagewise(data.transitions(), horizon))?;
    Ok(TrialOutcome {
        horizon,
        epsilon,
        samples_per_stage,
        q_tilde: result.q_set.bits().to_vec(),
        q_exact: exact_q_operator(model, omega.bits(), horizon, epsilon),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageSummary {
    pub trials: usize,
    pub contained: usize,
    pub eta: f64,
    /// Trials where `Q̃` was nonempty.
    pub nonempty: usize,
}

impl CoverageSummary {
    pub fn rate(&self) -> f64 {
        self.contained as f64 / self.trials as f64
    }

    /// `η − 3√(η(1 − η)/trials)`.
    pub fn lower_acceptance(&self) -> f64 {
        self.eta - 3.0 * libm::sqrt(self.eta * (1.0 - self.eta) / self.trials as f64)
    }
}

/// Random models with `≤ 6` states, `≤ 3` actions, `N ∈ {1, 2, 3}`,
/// `ε ∈ [0.05, 0.5)` and log-uniform `20..=20000` samples per stage.
pub fn coverage_sweep<R: Rng + ?Sized>(trials: usize, eta: f64, rng: &mut R) -> Result<CoverageSummary> {
    let spec = RandomModelSpec::default();
    let (mut contained, mut nonempty) = (0, 0);
    for _ in 0..trials {
        let model = random_model(&spec, rng);
        let horizon = rng.random_range(1..=3);
        let epsilon = rng.random_range(0.05..0.5);
        let per_stage = log_uniform_samples(rng);
        let t = conservatism_trial(&model, horizon, epsilon, eta, per_stage, rng)?;
        contained += usize::from(t.contained());
        nonempty += usize::from(t.q_tilde.iter().any(|&b| b));
    }
    Ok(CoverageSummary { trials, contained, eta, nonempty })
}

/// Sample sizes spanning the data-starved and the ample regimes.
pub fn log_uniform_samples<R: Rng + ?Sized>(rng: &mut R) -> usize {
    libm::round(libm::exp(rng.random_range(libm::log(20.0)..=libm::log(20_000.0)))) as usize
}

/// `true` when the mask equals the exact operator applied to itself.
pub fn is_exact_fixed_point(model: &FiniteMdpModel, mask: &LatticeMask, horizon: usize, epsilon: f64) -> bool {
    exact_q_operator(model, mask.bits(), horizon, epsilon) == mask.bits()
}
