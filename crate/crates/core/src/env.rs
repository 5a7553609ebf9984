//! Simulated environments behind one stepping interface.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::features::StateBox;
use crate::oracle::{state_coordinate, FiniteMdpModel};
use crate::rng::StreamRng;

/// Result of one executed step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub observation: Vec<f64>,
    pub reward: f64,
    /// Goal reached; the episode ends.
    pub terminal: bool,
    /// The new state left the safe set.
    pub unsafe_exit: bool,
}

pub trait Environment {
    fn action_count(&self) -> usize;

    fn safe_box(&self) -> &StateBox;

    /// Draws a fresh initial state from the environment's own stream.
    fn reset(&mut self) -> Vec<f64>;

    fn step(&mut self, action: usize) -> EnvState;

    fn observation(&self) -> Vec<f64>;

    /// A new, independent instance of the same task on another stream.
    fn fresh_instance(&self, rng: StreamRng) -> Self
    where
        Self: Sized;
}

#[derive(Debug, Clone, PartialEq)]
pub struct MountainCarConfig {
    pub thrust_gain: f64,
    pub gravity_gain: f64,
    pub goal_position: f64,
    pub goal_min_velocity: f64,
    pub safe_box: StateBox,
    pub init_position_range: (f64, f64),
    pub init_velocity: f64,
}

impl Default for MountainCarConfig {
    fn default() -> Self {
        Self {
            thrust_gain: 1e-3,
            gravity_gain: 2.5e-3,
            goal_position: 0.5,
            goal_min_velocity: 0.0,
            safe_box: StateBox::mountain_car_safe_set(),
            init_position_range: (-0.6, -0.4),
            init_velocity: 0.0,
        }
    }
}

/// One step of the unclipped dynamics
/// `v′ = v + k_u (u − 1) − k_g cos(3x)`, `x′ = x + v′`.
pub fn mc_step(state: [f64; 2], action: usize, config: &MountainCarConfig) -> EnvState {
    assert!(action < 3, "MountainCar has three actions");
    let [x, v] = state;
    let v_next = v + config.thrust_gain * (action as f64 - 1.0) - config.gravity_gain * libm::cos(3.0 * x);
    let x_next = x + v_next;
    let observation = vec![x_next, v_next];
    let terminal = x_next >= config.goal_position && v_next >= config.goal_min_velocity;
    let unsafe_exit = !config.safe_box.contains(&observation);
    EnvState { observation, reward: if terminal { 0.0 } else { -1.0 }, terminal, unsafe_exit }
}

/// Initial state `x₀ ~ U(range)`, `v₀ = init_velocity`.
pub fn mc_reset<R: Rng + ?Sized>(config: &MountainCarConfig, rng: &mut R) -> [f64; 2] {
    let (lo, hi) = config.init_position_range;
    [rng.random_range(lo..hi), config.init_velocity]
}

/// Thrust along the velocity w.p. 0.5, otherwise a uniform action.
pub fn mc_pumping_policy(state: &[f64], rng: &mut StreamRng) -> usize {
    if rng.random::<f64>() < 0.5 {
        rng.random_range(0..3)
    } else if state[1] >= 0.0 {
        2
    } else {
        0
    }
}

#[derive(Debug, Clone)]
pub struct MountainCar {
    config: MountainCarConfig,
    state: [f64; 2],
    rng: StreamRng,
}

impl MountainCar {
    pub fn new(config: MountainCarConfig, mut rng: StreamRng) -> Self {
        let state = mc_reset(&config, &mut rng);
        Self { config, state, rng }
    }

    pub fn config(&self) -> &MountainCarConfig {
        &self.config
    }
}

impl Environment for MountainCar {
    fn action_count(&self) -> usize {
        3
    }

    fn safe_box(&self) -> &StateBox {
        &self.config.safe_box
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = mc_reset(&self.config, &mut self.rng);
        self.state.to_vec()
    }

    fn step(&mut self, action: usize) -> EnvState {
        let out = mc_step(self.state, action, &self.config);
        self.state = [out.observation[0], out.observation[1]];
        out
    }

    fn observation(&self) -> Vec<f64> {
        self.state.to_vec()
    }

    fn fresh_instance(&self, rng: StreamRng) -> Self {
        Self::new(self.config.clone(), rng)
    }
}

/// A finite MDP stepped through its true kernel. Entering the sink or an
/// unsafe state is an unsafe exit; after the sink the observation is the
/// sink coordinate.
#[derive(Debug, Clone)]
pub struct FiniteEnv {
    model: FiniteMdpModel,
    safe_box: StateBox,
    rewards: Option<Vec<f64>>,
    goal_states: Vec<bool>,
    state: Option<usize>,
    rng: StreamRng,
}

impl FiniteEnv {
    pub fn new(model: FiniteMdpModel, mut rng: StreamRng) -> Self {
        let safe_box = model.grid().state_box().clone();
        let goal_states = vec![false; model.state_count()];
        let state = Some(Self::draw_start(&model, &mut rng));
        Self { model, safe_box, rewards: None, goal_states, state, rng }
    }

    /// Per-`(x, u)` rewards, row-major; the default is −1 everywhere.
    pub fn with_rewards(mut self, rewards: Vec<f64>) -> Self {
        assert_eq!(rewards.len(), self.model.state_count() * self.model.action_count());
        self.rewards = Some(rewards);
        self
    }

    /// Entering any of these states ends the episode.
    pub fn with_goal_states(mut self, goals: Vec<bool>) -> Self {
        assert_eq!(goals.len(), self.model.state_count());
        self.goal_states = goals;
        self
    }

    pub fn model(&self) -> &FiniteMdpModel {
        &self.model
    }

    pub fn current(&self) -> Option<usize> {
        self.state
    }

    fn draw_start(model: &FiniteMdpModel, rng: &mut StreamRng) -> usize {
        let safe: Vec<usize> = (0..model.state_count()).filter(|&x| model.safe_states()[x]).collect();
        if safe.is_empty() {
            rng.random_range(0..model.state_count())
        } else {
            safe[rng.random_range(0..safe.len())]
        }
    }
}

impl Environment for FiniteEnv {
    fn action_count(&self) -> usize {
        self.model.action_count()
    }

    fn safe_box(&self) -> &StateBox {
        &self.safe_box
    }

    fn reset(&mut self) -> Vec<f64> {
        self.state = Some(Self::draw_start(&self.model, &mut self.rng));
        self.observation()
    }

    fn step(&mut self, action: usize) -> EnvState {
        let x = self.state.expect("step called after leaving the state space; reset first");
        let next = self.model.sample_next(x, action, &mut self.rng);
        self.state = next;
        let reward = self
            .rewards
            .as_ref()
            .map_or(-1.0, |r| r[x * self.model.action_count() + action]);
        EnvState {
            observation: state_coordinate(next),
            reward,
            terminal: next.is_some_and(|k| self.goal_states[k]),
            unsafe_exit: next.is_none_or(|k| !self.model.safe_states()[k]),
        }
    }

    fn observation(&self) -> Vec<f64> {
        state_coordinate(self.state)
    }

    fn fresh_instance(&self, rng: StreamRng) -> Self {
        let mut env = Self::new(self.model.clone(), rng);
        env.rewards = self.rewards.clone();
        env.goal_states = self.goal_states.clone();
        env
    }
}
