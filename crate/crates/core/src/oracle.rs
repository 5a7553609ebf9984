//! Ground truth on finite MDPs with known kernels.
//!
//! States are `0..S`; leaving the safe region is modelled by an explicit
//! absorbing sink (column `S` of every kernel row). In the lattice encoding
//! state `i` is the point `[i]` and the sink is the coordinate `[-1]`, which
//! lies outside the lattice box.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Gamma};

use crate::dataset::{DataOrigin, Transition, TransitionDataset};
use crate::error::{check_dim, invalid, Result};
use crate::features::FeatureMap;
use crate::lattice::{LatticeGrid, LatticeMask};

/// Coordinate used for the sink in transition data.
pub const SINK_COORDINATE: f64 = -1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdpModel {
    state_count: usize,
    action_count: usize,
    /// Row `(x, u)` holds `S + 1` probabilities; the last entry is the sink.
    kernel: Vec<f64>,
    safe_states: Vec<bool>,
}

impl FiniteMdpModel {
    pub fn new(state_count: usize, action_count: usize, kernel: Vec<f64>, safe_states: Vec<bool>) -> Result<Self> {
        if state_count < 2 || action_count == 0 {
            return Err(invalid("finite model needs at least two states and one action"));
        }
        check_dim(state_count * action_count * (state_count + 1), kernel.len())?;
        check_dim(state_count, safe_states.len())?;
        let model = Self { state_count, action_count, kernel, safe_states };
        for x in 0..state_count {
            for u in 0..action_count {
                let row = model.row(x, u);
                if row.iter().any(|&p| !(p >= 0.0)) {
                    return Err(invalid("kernel entries must be nonnegative"));
                }
                let total: f64 = row.iter().sum();
                if libm::fabs(total - 1.0) > 1e-12 {
                    return Err(invalid("kernel rows must sum to one"));
                }
            }
        }
        Ok(model)
    }

    /// Builds a model from a closure returning each row.
    pub fn from_rows(
        state_count: usize,
        action_count: usize,
        safe_states: Vec<bool>,
        mut row: impl FnMut(usize, usize) -> Vec<f64>,
    ) -> Result<Self> {
        let mut kernel = Vec::with_capacity(state_count * action_count * (state_count + 1));
        for x in 0..state_count {
            for u in 0..action_count {
                let r = row(x, u);
                check_dim(state_count + 1, r.len())?;
                kernel.extend(r);
            }
        }
        Self::new(state_count, action_count, kernel, safe_states)
    }

    pub fn state_count(&self) -> usize {
        self.state_count
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn safe_states(&self) -> &[bool] {
        &self.safe_states
    }

    /// `P(· | x, u)` over states followed by the sink.
    pub fn row(&self, x: usize, u: usize) -> &[f64] {
        let w = self.state_count + 1;
        let start = (x * self.action_count + u) * w;
        &self.kernel[start..start + w]
    }

    pub fn grid(&self) -> LatticeGrid {
        LatticeGrid::finite(self.state_count).expect("models have at least two states")
    }

    pub fn feature_map(&self) -> FeatureMap {
        FeatureMap::one_hot(self.state_count, self.action_count).expect("nonempty model")
    }

    pub fn safe_mask(&self) -> LatticeMask {
        LatticeMask::from_bits(self.safe_states.clone())
    }

    /// Draws `x′ ~ P(· | x, u)`; `None` is the sink.
    pub fn sample_next<R: Rng + ?Sized>(&self, x: usize, u: usize, rng: &mut R) -> Option<usize> {
        let r: f64 = rng.random();
        let row = self.row(x, u);
        let mut acc = 0.0;
        for (k, &p) in row.iter().enumerate() {
            acc += p;
            if r < acc {
                return (k < self.state_count).then_some(k);
            }
        }
        // Round-off: fall back to the last outcome with positive mass.
        let k = row.iter().rposition(|&p| p > 0.0).unwrap_or(self.state_count);
        (k < self.state_count).then_some(k)
    }
}

/// All stage values `p_j^Ω`, `j = 0..=N`, of the exact recursion.
pub fn exact_dp_stages(model: &FiniteMdpModel, omega: &[bool], horizon: usize) -> Vec<Vec<f64>> {
    assert_eq!(omega.len(), model.state_count);
    let s = model.state_count;
    let mut stages = vec![vec![0.0; s]; horizon + 1];
    stages[horizon] = omega.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    for j in (0..horizon).rev() {
        for x in 0..s {
            if !omega[x] {
                continue;
            }
            let best = (0..model.action_count)
                .map(|u| {
                    model.row(x, u)[..s]
                        .iter()
                        .zip(&stages[j + 1])
                        .map(|(p, v)| p * v)
                        .sum::<f64>()
                })
                .fold(0.0, f64::max);
            stages[j][x] = best.min(1.0);
        }
    }
    stages
}

/// `p_0^Ω` under the true kernel.
pub fn exact_dp(model: &FiniteMdpModel, omega: &[bool], horizon: usize) -> Vec<f64> {
    exact_dp_stages(model, omega, horizon).swap_remove(0)
}

/// `Q^N_ε(Ω) = {x ∈ Ω : p_0^Ω(x) ≥ 1 − ε}`.
pub fn exact_q_operator(model: &FiniteMdpModel, omega: &[bool], horizon: usize, epsilon: f64) -> Vec<bool> {
    let p0 = exact_dp(model, omega, horizon);
    omega
        .iter()
        .zip(&p0)
        .map(|(&inside, &p)| inside && p >= 1.0 - epsilon)
        .collect()
}

/// Maximal `(N, ε)`-PCIS: iterate `Q` from the safe states to stabilization.
pub fn maximal_pcis(model: &FiniteMdpModel, horizon: usize, epsilon: f64) -> Vec<bool> {
    let mut omega = model.safe_states.clone();
    loop {
        let next = exact_q_operator(model, &omega, horizon, epsilon);
        if next == omega {
            debug_assert_eq!(exact_q_operator(model, &next, horizon, epsilon), next);
            return next;
        }
        omega = next;
    }
}

/// Lattice encoding of a finite state (sink included).
pub fn state_coordinate(state: Option<usize>) -> Vec<f64> {
    vec![state.map_or(SINK_COORDINATE, |x| x as f64)]
}

/// i.i.d. one-step samples: start uniform over safe states (all states if
/// none is safe), act uniformly at random, step the true kernel.
pub fn sample_transitions<R: Rng + ?Sized>(model: &FiniteMdpModel, count: usize, rng: &mut R) -> TransitionDataset {
    let starts: Vec<usize> = {
        let safe: Vec<usize> = (0..model.state_count).filter(|&x| model.safe_states[x]).collect();
        if safe.is_empty() {
            (0..model.state_count).collect()
        } else {
            safe
        }
    };
    let mut data = TransitionDataset::new(DataOrigin::Offline);
    for _ in 0..count {
        let x = starts[rng.random_range(0..starts.len())];
        let u = rng.random_range(0..model.action_count);
        let next = model.sample_next(x, u, rng);
        data.push(Transition::new(state_coordinate(Some(x)), u, state_coordinate(next)));
    }
    data
}

/// Knobs for random model generation.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomModelSpec {
    pub min_states: usize,
    pub max_states: usize,
    pub min_actions: usize,
    pub max_actions: usize,
    /// Dirichlet concentration of stochastic rows.
    pub concentration: f64,
    /// Probability that a row is near-deterministic.
    pub deterministic_fraction: f64,
    /// Upper bound on the sink mass of a stochastic row.
    pub max_sink_mass: f64,
    /// Probability that a state is marked unsafe.
    pub unsafe_fraction: f64,
}

impl Default for RandomModelSpec {
    fn default() -> Self {
        Self {
            min_states: 2,
            max_states: 6,
            min_actions: 1,
            max_actions: 3,
            concentration: 0.5,
            deterministic_fraction: 0.4,
            max_sink_mass: 0.3,
            unsafe_fraction: 0.15,
        }
    }
}

/// Seeded random model: Dirichlet rows mixed with near-deterministic ones.
pub fn random_model<R: Rng + ?Sized>(spec: &RandomModelSpec, rng: &mut R) -> FiniteMdpModel {
    let s = rng.random_range(spec.min_states.max(2)..=spec.max_states.max(2));
    let a = rng.random_range(spec.min_actions.max(1)..=spec.max_actions.max(1));
    let gamma = Gamma::new(spec.concentration, 1.0).expect("positive concentration");
    let mut safe: Vec<bool> = (0..s).map(|_| !rng.random_bool(spec.unsafe_fraction)).collect();
    if !safe.iter().any(|&b| b) {
        safe[0] = true;
    }
    let mut kernel = Vec::with_capacity(s * a * (s + 1));
    for _ in 0..s * a {
        let mut row = vec![0.0; s + 1];
        if rng.random_bool(spec.deterministic_fraction) {
            let target = rng.random_range(0..s);
            let leak: f64 = if rng.random_bool(0.5) { 0.0 } else { rng.random_range(0.0..0.05) };
            row[target] = 1.0 - leak;
            row[s] = leak;
        } else {
            let draws: Vec<f64> = (0..s).map(|_| gamma.sample(rng) + 1e-12).collect();
            let total: f64 = draws.iter().sum();
            let sink = rng.random_range(0.0..spec.max_sink_mass);
            for (k, w) in draws.iter().enumerate() {
                row[k] = (1.0 - sink) * w / total;
            }
            row[s] = sink;
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|p| *p /= total);
        // Absorb the remaining round-off into the largest entry.
        let residual = 1.0 - row.iter().sum::<f64>();
        let k = (0..=s).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
        row[k] += residual;
        kernel.extend(row);
    }
    FiniteMdpModel::new(s, a, kernel, safe).expect("generator produces stochastic rows")
}
