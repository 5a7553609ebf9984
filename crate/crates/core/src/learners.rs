//! Proposal learners. The shield treats these as black boxes: it only needs
//! action-value estimates and an ε-greedy proposal.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::DataOrigin;
use crate::error::{invalid, Result};
use crate::features::FeatureMap;
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExplorationSchedule {
    /// `ε(t) = ε_min + (ε_max − ε_min) e^{−t/τ}`.
    Exponential { eps_max: f64, eps_min: f64, tau: f64 },
    /// Linear interpolation from `eps_max` to `eps_min` over `span` steps, then constant.
    Linear { eps_max: f64, eps_min: f64, span: f64 },
    Constant(f64),
}

impl ExplorationSchedule {
    /// `ε_max = 1`, `ε_min = 0.01`, `τ = 1000`.
    pub fn paper_exponential() -> Self {
        Self::Exponential { eps_max: 1.0, eps_min: 0.01, tau: 1000.0 }
    }

    pub fn epsilon_at(&self, t: u64) -> f64 {
        let t = t as f64;
        match *self {
            Self::Exponential { eps_max, eps_min, tau } => eps_min + (eps_max - eps_min) * libm::exp(-t / tau),
            Self::Linear { eps_max, eps_min, span } => {
                if span <= 0.0 || t >= span {
                    eps_min
                } else {
                    eps_max + (eps_min - eps_max) * (t / span)
                }
            }
            Self::Constant(eps) => eps,
        }
    }
}

/// One executed transition handed to a learner.
#[derive(Debug, Clone, Copy)]
pub struct Experience<'a> {
    pub state: &'a [f64],
    pub action: usize,
    pub reward: f64,
    pub next_state: &'a [f64],
    /// The executed next action for on-policy updates; `None` at episode end.
    pub next_action: Option<usize>,
    pub terminal: bool,
    pub origin: DataOrigin,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub trait Learner {
    fn action_count(&self) -> usize;

    fn action_values(&self, state: &[f64]) -> Vec<f64>;

    fn exploration(&self) -> &ExplorationSchedule;

    /// ε-greedy proposal at global step `t`.
    fn propose(&self, state: &[f64], rng: &mut StreamRng, t: u64) -> usize {
        let eps = self.exploration().epsilon_at(t);
        if eps > 0.0 && rng.random::<f64>() < eps {
            rng.random_range(0..self.action_count())
        } else {
            argmax(&self.action_values(state))
        }
    }

    fn begin_episode(&mut self);

    /// Learns from an executed transition.
    ///
    /// # Panics
    /// When handed certification data.
    fn update(&mut self, experience: &Experience<'_>);
}

fn assert_trainable(experience: &Experience<'_>) {
    assert!(
        experience.origin != DataOrigin::Certification,
        "certification transitions must never reach a learner update"
    );
}

/// Linear true-online SARSA(λ) with `Q(s, u) = w_uᵀ ψ(s)` and dutch traces.
#[derive(Debug, Clone)]
pub struct TrueOnlineSarsa {
    features: FeatureMap,
    weights: Vec<f64>,
    traces: Vec<f64>,
    q_old: f64,
    alpha: f64,
    gamma: f64,
    lambda: f64,
    exploration: ExplorationSchedule,
}

impl TrueOnlineSarsa {
    /// `features` supplies the state features `ψ`; its action count sets `|U|`.
    pub fn new(features: FeatureMap, alpha: f64, gamma: f64, lambda: f64, exploration: ExplorationSchedule) -> Result<Self> {
        if !(alpha >= 0.0) || !(0.0..=1.0).contains(&gamma) || !(0.0..=1.0).contains(&lambda) {
            return Err(invalid("SARSA needs alpha >= 0 and gamma, lambda in [0, 1]"));
        }
        let d = features.block_size() * features.action_count();
        Ok(Self {
            features,
            weights: vec![0.0; d],
            traces: vec![0.0; d],
            q_old: 0.0,
            alpha,
            gamma,
            lambda,
            exploration,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn set_weights(&mut self, weights: Vec<f64>) {
        assert_eq!(weights.len(), self.weights.len());
        self.weights = weights;
    }

    pub fn traces(&self) -> &[f64] {
        &self.traces
    }

    fn psi(&self, state: &[f64]) -> Vec<f64> {
        self.features.state_features(state).expect("state matches the SARSA feature map")
    }

    fn block(&self, action: usize) -> core::ops::Range<usize> {
        let b = self.features.block_size();
        action * b..(action + 1) * b
    }

    fn q(&self, psi: &[f64], action: usize) -> f64 {
        self.weights[self.block(action)].iter().zip(psi).map(|(w, p)| w * p).sum()
    }
}

impl Learner for TrueOnlineSarsa {
    fn action_count(&self) -> usize {
        self.features.action_count()
    }

    fn action_values(&self, state: &[f64]) -> Vec<f64> {
        let psi = self.psi(state);
        (0..self.action_count()).map(|u| self.q(&psi, u)).collect()
    }

    fn exploration(&self) -> &ExplorationSchedule {
        &self.exploration
    }

    fn begin_episode(&mut self) {
        self.traces.iter_mut().for_each(|z| *z = 0.0);
        self.q_old = 0.0;
    }

    fn update(&mut self, e: &Experience<'_>) {
        assert_trainable(e);
        let psi = self.psi(e.state);
        let q = self.q(&psi, e.action);
        let q_next = match (e.terminal, e.next_action) {
            (false, Some(u_next)) => {
                let psi_next = self.psi(e.next_state);
                self.q(&psi_next, u_next)
            }
            _ => 0.0,
        };
        let delta = e.reward + self.gamma * q_next - q;
        let block = self.block(e.action);
        // z·x only involves the executed action's block.
        let zx: f64 = self.traces[block.clone()].iter().zip(&psi).map(|(z, p)| z * p).sum();
        let decay = self.gamma * self.lambda;
        let coef = 1.0 - self.alpha * decay * zx;
        self.traces.iter_mut().for_each(|z| *z *= decay);
        for (z, p) in self.traces[block.clone()].iter_mut().zip(&psi) {
            *z += coef * p;
        }
        let a = self.alpha * (delta + q - self.q_old);
        for (w, z) in self.weights.iter_mut().zip(&self.traces) {
            *w += a * z;
        }
        let b = self.alpha * (q - self.q_old);
        for (w, p) in self.weights[block].iter_mut().zip(&psi) {
            *w -= b * p;
        }
        self.q_old = q_next;
        if e.terminal || e.next_action.is_none() {
            self.begin_episode();
        }
    }
}

/// One-step tabular Q-learning over a finite state set.
#[derive(Debug, Clone)]
pub struct TabularQ {
    state_count: usize,
    action_count: usize,
    values: Vec<f64>,
    alpha: f64,
    gamma: f64,
    exploration: ExplorationSchedule,
}

impl TabularQ {
    pub fn new(state_count: usize, action_count: usize, alpha: f64, gamma: f64, exploration: ExplorationSchedule) -> Self {
        Self { state_count, action_count, values: vec![0.0; state_count * action_count], alpha, gamma, exploration }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, state: usize, action: usize) -> f64 {
        self.values[state * self.action_count + action]
    }

    fn index(&self, state: &[f64]) -> Option<usize> {
        let x = libm::round(*state.first()?);
        (x >= 0.0 && x < self.state_count as f64).then_some(x as usize)
    }
}

impl Learner for TabularQ {
    fn action_count(&self) -> usize {
        self.action_count
    }

    fn action_values(&self, state: &[f64]) -> Vec<f64> {
        match self.index(state) {
            Some(x) => self.values[x * self.action_count..(x + 1) * self.action_count].to_vec(),
            None => vec![0.0; self.action_count],
        }
    }

    fn exploration(&self) -> &ExplorationSchedule {
        &self.exploration
    }

    fn begin_episode(&mut self) {}

    fn update(&mut self, e: &Experience<'_>) {
        assert_trainable(e);
        let Some(x) = self.index(e.state) else { return };
        let bootstrap = match (e.terminal, self.index(e.next_state)) {
            (false, Some(x_next)) => self.action_values(&[x_next as f64]).into_iter().fold(f64::NEG_INFINITY, f64::max),
            _ => 0.0,
        };
        let k = x * self.action_count + e.action;
        let target = e.reward + self.gamma * bootstrap;
        self.values[k] += self.alpha * (target - self.values[k]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::StateBox;
    use crate::rng::RngStreams;

    fn exp<'a>(s: &'a [f64], u: usize, r: f64, s2: &'a [f64], u2: Option<usize>, terminal: bool) -> Experience<'a> {
        Experience { state: s, action: u, reward: r, next_state: s2, next_action: u2, terminal, origin: DataOrigin::Grow }
    }

    #[test]
    fn exponential_schedule_values() {
        let s = ExplorationSchedule::paper_exponential();
        assert_eq!(s.epsilon_at(0), 1.0);
        assert!((s.epsilon_at(1000) - (0.01 + 0.99 * libm::exp(-1.0))).abs() < 1e-15);
        assert!((s.epsilon_at(1_000_000) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn linear_schedule_values() {
        let s = ExplorationSchedule::Linear { eps_max: 0.5, eps_min: 0.01, span: 100.0 };
        assert_eq!(s.epsilon_at(0), 0.5);
        assert!((s.epsilon_at(50) - 0.255).abs() < 1e-15);
        assert_eq!(s.epsilon_at(100), 0.01);
        assert_eq!(s.epsilon_at(10_000), 0.01);
    }

    #[test]
    fn greedy_ties_go_low() {
        assert_eq!(argmax(&[0.0, 0.0, 0.0]), 0);
        assert_eq!(argmax(&[0.1, 0.9, 0.9]), 1);
        let q = TabularQ::new(2, 3, 0.1, 0.9, ExplorationSchedule::Constant(0.0));
        let mut rng = RngStreams::new(0).stream("explore");
        assert_eq!(q.propose(&[0.0], &mut rng, 0), 0);
    }

    #[test]
    fn tabular_degenerate_steps() {
        let mut q = TabularQ::new(2, 2, 0.0, 0.9, ExplorationSchedule::Constant(0.0));
        q.update(&exp(&[0.0], 1, 5.0, &[1.0], None, false));
        assert_eq!(q.values(), &[0.0; 4]);
        let mut q = TabularQ::new(2, 2, 1.0, 0.9, ExplorationSchedule::Constant(0.0));
        q.update(&exp(&[0.0], 1, 5.0, &[1.0], None, true));
        assert_eq!(q.value(0, 1), 5.0);
    }

    #[test]
    fn sarsa_reduces_to_lms_without_traces() {
        let b = StateBox::new(vec![0.0], vec![1.0]).unwrap();
        let map = FeatureMap::fourier(b, 2, 1, false).unwrap();
        let mut l = TrueOnlineSarsa::new(map.clone(), 0.1, 0.0, 0.0, ExplorationSchedule::Constant(0.0)).unwrap();
        l.set_weights(vec![0.2, -0.1, 0.4, 0.3]);
        let s = [0.25];
        let psi = map.state_features(&s).unwrap();
        let q: f64 = 0.4 * psi[0] + 0.3 * psi[1];
        let mut expected = l.weights().to_vec();
        for (k, p) in psi.iter().enumerate() {
            expected[2 + k] += 0.1 * (1.5 - q) * p;
        }
        l.update(&exp(&s, 1, 1.5, &[0.7], Some(0), false));
        for (w, e) in l.weights().iter().zip(&expected) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    #[should_panic(expected = "certification transitions")]
    fn certification_update_panics() {
        let mut q = TabularQ::new(2, 2, 0.5, 0.9, ExplorationSchedule::Constant(0.0));
        let mut e = exp(&[0.0], 0, 0.0, &[1.0], None, true);
        e.origin = DataOrigin::Certification;
        q.update(&e);
    }
}
