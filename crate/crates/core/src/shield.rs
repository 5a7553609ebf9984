//! Runtime shield: action filtering, receding-horizon stage cycling, and the
//! grow/certify training loop that replaces the shield on acceptance.

use alloc::vec::Vec;

use rand::Rng;

use crate::dataset::{DataOrigin, Transition, TransitionDataset};
use crate::env::Environment;
use crate::error::{check_dim, invalid, Result};
use crate::lattice::{LatticeGrid, LatticeMask};
use crate::learners::{Experience, Learner};
use crate::operator::{ActionMaps, ConservativeOperator};
use crate::rng::{RngStreams, StreamRng};

/// The currently deployed shield `(Ω̂, S)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ShieldState {
    omega_hat: LatticeMask,
    action_maps: ActionMaps,
    stage_pointer: usize,
    update_index: usize,
    anomalies: u64,
}

impl ShieldState {
    pub fn new(omega_hat: LatticeMask, action_maps: ActionMaps) -> Result<Self> {
        check_dim(action_maps.points(), omega_hat.len())?;
        if action_maps.horizon() == 0 {
            return Err(invalid("shield horizon must be at least 1"));
        }
        Ok(Self { omega_hat, action_maps, stage_pointer: 0, update_index: 0, anomalies: 0 })
    }

    /// Every lattice point, every action allowed.
    pub fn full_lattice(grid: &LatticeGrid, horizon: usize, action_count: usize) -> Result<Self> {
        Self::new(LatticeMask::full(grid.len()), ActionMaps::permissive(horizon, grid.len(), action_count))
    }

    /// Lattice points inside `[lower, upper]` with the given actions allowed everywhere.
    pub fn seed_box(
        grid: &LatticeGrid,
        lower: &[f64],
        upper: &[f64],
        horizon: usize,
        action_count: usize,
        allowed: &[usize],
    ) -> Result<Self> {
        check_dim(grid.dim(), lower.len())?;
        check_dim(grid.dim(), upper.len())?;
        let mask = LatticeMask::from_bits(
            grid.points().map(|p| p.iter().zip(lower).zip(upper).all(|((x, lo), hi)| lo <= x && x <= hi)).collect(),
        );
        if mask.count() == 0 {
            return Err(invalid("seed box contains no lattice point"));
        }
        let mut bits = 0u32;
        for &u in allowed {
            if u >= action_count {
                return Err(invalid("seed action out of range"));
            }
            bits |= 1 << u;
        }
        if bits == 0 {
            return Err(invalid("seed action set is empty"));
        }
        let mut maps = ActionMaps::new(horizon, grid.len(), action_count);
        let first = allowed.iter().copied().min().unwrap_or(0);
        for j in 0..horizon {
            for i in mask.indices() {
                maps.set_bits(j, i, bits);
                maps.set_selector(j, i, first);
            }
        }
        Self::new(mask, maps)
    }

    pub fn omega_hat(&self) -> &LatticeMask {
        &self.omega_hat
    }

    pub fn action_maps(&self) -> &ActionMaps {
        &self.action_maps
    }

    pub fn horizon(&self) -> usize {
        self.action_maps.horizon()
    }

    pub fn stage_pointer(&self) -> usize {
        self.stage_pointer
    }

    /// Number of accepted shield replacements.
    pub fn update_index(&self) -> usize {
        self.update_index
    }

    /// Filter calls that met an empty safe-action set inside `Ω̂`.
    pub fn anomalies(&self) -> u64 {
        self.anomalies
    }

    pub fn contains(&self, grid: &LatticeGrid, state: &[f64]) -> bool {
        grid.mask_contains_state(&self.omega_hat, state)
    }

    pub fn reset_stage(&mut self) {
        self.stage_pointer = 0;
    }

    /// `j ← (j + 1) mod N`.
    pub fn advance_stage(&mut self) {
        self.stage_pointer = (self.stage_pointer + 1) % self.horizon();
    }

    /// Deploys a new shield and restarts the stage cycle.
    pub fn accept(&mut self, omega_hat: LatticeMask, action_maps: ActionMaps) -> Result<()> {
        check_dim(self.omega_hat.len(), omega_hat.len())?;
        check_dim(self.omega_hat.len(), action_maps.points())?;
        self.omega_hat = omega_hat;
        self.action_maps = action_maps;
        self.stage_pointer = 0;
        self.update_index += 1;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterDecision {
    pub action: usize,
    pub intervened: bool,
    pub anomaly: bool,
}

/// Passes `proposal` when the current stage allows it at the quantized state,
/// otherwise the allowed action with the largest value (ties low). An empty
/// allowed set falls back to the stored continuation selector.
pub fn shield_filter(
    shield: &mut ShieldState,
    grid: &LatticeGrid,
    state: &[f64],
    proposal: usize,
    values: &[f64],
) -> FilterDecision {
    let point = grid.quantize(state);
    let stage = shield.stage_pointer;
    let bits = shield.action_maps.bits(stage, point);
    if bits & (1 << proposal) != 0 {
        return FilterDecision { action: proposal, intervened: false, anomaly: false };
    }
    if bits == 0 {
        shield.anomalies += 1;
        let action = shield.action_maps.selector(stage, point);
        return FilterDecision { action, intervened: action != proposal, anomaly: true };
    }
    let mut best: Option<usize> = None;
    for u in (0..shield.action_maps.action_count()).filter(|u| bits & (1 << u) != 0) {
        if best.is_none_or(|b| values[u] > values[b]) {
            best = Some(u);
        }
    }
    FilterDecision { action: best.expect("nonempty action set"), intervened: true, anomaly: false }
}

/// Behaviour policy for hold-out data collection.
#[derive(Debug, Clone, Copy)]
pub enum CertPolicy {
    /// Uniform over all actions; independent of anything learned.
    Uniform,
    /// Uniform over the tentative set's stage-0 safe actions when nonempty,
    /// else uniform over all actions. Rollouts restart on leaving the tentative set.
    TentativeSafeUniform,
    /// A fixed state-feedback behaviour chosen before training.
    Fixed(fn(&[f64], &mut StreamRng) -> usize),
}

impl PartialEq for CertPolicy {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (Self::Uniform, Self::Uniform) | (Self::TentativeSafeUniform, Self::TentativeSafeUniform) => true,
            (Self::Fixed(a), Self::Fixed(b)) => core::ptr::fn_addr_eq(*a, *b),
            _ => false,
        }
    }
}

/// Tentative shield the certification protocol may consult.
#[derive(Debug, Clone, Copy)]
pub struct Tentative<'a> {
    pub omega: &'a LatticeMask,
    pub action_maps: &'a ActionMaps,
}

#[derive(Debug, Clone)]
pub struct CertCollection {
    pub dataset: TransitionDataset,
    /// Steps of the collection rollouts that left the safe box.
    pub unsafe_exits: usize,
}

/// `count` certification transitions from fresh resets of `env`.
pub fn collect_certification_data<E: Environment>(
    env: &mut E,
    policy: CertPolicy,
    tentative: Option<Tentative<'_>>,
    grid: &LatticeGrid,
    count: usize,
    rng: &mut StreamRng,
) -> CertCollection {
    let mut dataset = TransitionDataset::new(DataOrigin::Certification);
    let mut unsafe_exits = 0;
    if count == 0 {
        return CertCollection { dataset, unsafe_exits };
    }
    let actions = env.action_count();
    let mut state = env.reset();
    for _ in 0..count {
        let bits = match (policy, tentative) {
            (CertPolicy::TentativeSafeUniform, Some(t)) if grid.mask_contains_state(t.omega, &state) => {
                t.action_maps.bits(0, grid.quantize(&state))
            }
            _ => 0,
        };
        let action = if let CertPolicy::Fixed(policy) = policy {
            policy(&state, rng)
        } else if bits == 0 {
            rng.random_range(0..actions)
        } else {
            let allowed: Vec<usize> = (0..actions).filter(|u| bits & (1 << u) != 0).collect();
            allowed[rng.random_range(0..allowed.len())]
        };
        let out = env.step(action);
        unsafe_exits += usize::from(out.unsafe_exit);
        let left_tentative = matches!(policy, CertPolicy::TentativeSafeUniform)
            && tentative.is_some_and(|t| !grid.mask_contains_state(t.omega, &out.observation));
        dataset.push(Transition::new(state, action, out.observation.clone()));
        state = if out.terminal || out.unsafe_exit || left_tentative { env.reset() } else { out.observation };
    }
    CertCollection { dataset, unsafe_exits }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Executed steps per grow interval.
    pub grow_steps: usize,
    /// Certification transitions per update attempt.
    pub cert_steps: usize,
    /// Total executed training steps.
    pub budget: usize,
    /// `false` bypasses the filter and all shield updates.
    pub shielded: bool,
    /// Accept only tentative sets containing the current `Ω̂`.
    pub monotone_guard: bool,
    pub cert_policy: CertPolicy,
    /// Resets drawn while looking for an initial state inside `Ω̂`.
    pub max_reset_attempts: usize,
    /// Keep a per-step trajectory log in the run record.
    pub record_trajectory: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            grow_steps: 300,
            cert_steps: 1000,
            budget: 4000,
            shielded: true,
            monotone_guard: true,
            cert_policy: CertPolicy::TentativeSafeUniform,
            max_reset_attempts: 100,
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalRecord {
    pub interval: usize,
    pub steps: usize,
    pub interval_return: f64,
    pub cumulative_return: f64,
    pub unsafe_steps: usize,
    pub goal_reached: bool,
    pub episodes_started: usize,
    pub interventions: usize,
    /// `|Ω̂|` after the update attempt.
    pub omega_size: usize,
    pub tentative_size: Option<usize>,
    pub certified: Option<bool>,
    /// `|Ω_tent \ Ω_cert|`; zero exactly when certification passes.
    pub cert_missing: Option<usize>,
    pub accepted: bool,
}

/// One executed training step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub step: usize,
    pub state: Vec<f64>,
    pub proposed: usize,
    pub executed: usize,
    pub reward: f64,
    /// The state lay in `Ω̂` when the action was chosen.
    pub in_omega: bool,
    pub unsafe_exit: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub intervals: Vec<IntervalRecord>,
    pub executed_steps: usize,
    pub total_unsafe_steps: usize,
    pub goal_events: usize,
    pub cert_unsafe_exits: usize,
    pub cert_transitions: usize,
    pub interventions: usize,
    pub anomalies: u64,
    /// Rollouts that started outside `Ω̂` after exhausting the reset attempts.
    pub outside_resets: usize,
    /// `(interval, Ω̂)` after every accepted update.
    pub snapshots: Vec<(usize, LatticeMask)>,
    pub final_shield: ShieldState,
    /// Every executed training transition, in order.
    pub grow: TransitionDataset,
    /// Empty unless `record_trajectory` is set.
    pub trajectory: Vec<TrajectoryStep>,
}

impl RunRecord {
    pub fn fully_safe(&self) -> bool {
        self.total_unsafe_steps == 0
    }

    pub fn goal_reached(&self) -> bool {
        self.goal_events > 0
    }
}

/// Algorithm state threaded through one training run.
struct Runner<'a, E, L> {
    env: &'a mut E,
    learner: &'a mut L,
    operator: &'a ConservativeOperator,
    config: &'a TrainingConfig,
    shield: ShieldState,
    explore: StreamRng,
    state: Vec<f64>,
    /// Next decision, chosen before the learner update.
    pending: Option<Choice>,
    need_reset: bool,
    steps: u64,
    episodes: usize,
    interventions: usize,
    outside_resets: usize,
}

#[derive(Debug, Clone, Copy)]
struct Choice {
    action: usize,
    proposed: usize,
    intervened: bool,
    in_omega: bool,
}

impl<E: Environment, L: Learner> Runner<'_, E, L> {
    fn choose(&mut self, state: &[f64]) -> Choice {
        let proposed = self.learner.propose(state, &mut self.explore, self.steps);
        let in_omega = self.shield.contains(self.operator.grid(), state);
        if !self.config.shielded || !in_omega {
            return Choice { action: proposed, proposed, intervened: false, in_omega };
        }
        let values = self.learner.action_values(state);
        let d = shield_filter(&mut self.shield, self.operator.grid(), state, proposed, &values);
        Choice { action: d.action, proposed, intervened: d.intervened, in_omega }
    }

    fn start_rollout(&mut self) {
        let mut state = self.env.reset();
        if self.config.shielded {
            let mut attempts = 1;
            while !self.shield.contains(self.operator.grid(), &state) && attempts < self.config.max_reset_attempts {
                state = self.env.reset();
                attempts += 1;
            }
            if !self.shield.contains(self.operator.grid(), &state) {
                self.outside_resets += 1;
            }
        }
        self.state = state;
        self.pending = None;
        self.need_reset = false;
        self.episodes += 1;
        self.learner.begin_episode();
        self.shield.reset_stage();
    }

    /// Executes one step; returns `(reward, unsafe, goal, intervened)`.
    fn step(&mut self, grow: &mut TransitionDataset, log: Option<&mut Vec<TrajectoryStep>>) -> (f64, bool, bool, bool) {
        if self.need_reset {
            self.start_rollout();
        }
        let state = core::mem::take(&mut self.state);
        let choice = match self.pending.take() {
            Some(c) => c,
            None => self.choose(&state),
        };
        let action = choice.action;
        let out = self.env.step(action);
        if let Some(log) = log {
            log.push(TrajectoryStep {
                step: self.steps as usize,
                state: state.clone(),
                proposed: choice.proposed,
                executed: action,
                reward: out.reward,
                in_omega: choice.in_omega,
                unsafe_exit: out.unsafe_exit,
            });
        }
        self.steps += 1;
        grow.push(Transition::new(state.clone(), action, out.observation.clone()));
        let left_shield = self.config.shielded
            && !out.unsafe_exit
            && !self.shield.contains(self.operator.grid(), &out.observation);
        let end = out.terminal || out.unsafe_exit || left_shield;
        self.shield.advance_stage();
        let next = if end { None } else { Some(self.choose(&out.observation)) };
        self.learner.update(&Experience {
            state: &state,
            action,
            reward: out.reward,
            next_state: &out.observation,
            next_action: next.map(|c| c.action),
            terminal: end,
            origin: grow.origin(),
        });
        self.pending = next;
        self.need_reset = end;
        self.state = out.observation;
        (out.reward, out.unsafe_exit, out.terminal, choice.intervened)
    }
}

/// Grow/certify training loop. Each interval executes `grow_steps` learner
/// steps (filtered when shielded), recomputes the conservative fixed point on
/// the cumulative grow data, certifies it on fresh hold-out data and deploys
/// the certification maps on acceptance.
pub fn run_shielded_training<E: Environment, L: Learner>(
    env: &mut E,
    learner: &mut L,
    seed: ShieldState,
    operator: &ConservativeOperator,
    streams: &RngStreams,
    config: &TrainingConfig,
) -> Result<RunRecord> {
    check_dim(operator.map().action_count(), env.action_count())?;
    check_dim(operator.grid().len(), seed.omega_hat().len())?;
    if config.shielded && seed.omega_hat().count() == 0 {
        return Err(invalid("the initial shield set must be nonempty"));
    }
    if config.grow_steps == 0 && config.budget > 0 {
        return Err(invalid("grow interval length must be positive"));
    }
    let grid = operator.grid();
    let safe_mask = LatticeMask::full(grid.len());
    let mut runner = Runner {
        env,
        learner,
        operator,
        config,
        shield: seed,
        explore: streams.stream("explore"),
        state: Vec::new(),
        pending: None,
        need_reset: true,
        steps: 0,
        episodes: 0,
        interventions: 0,
        outside_resets: 0,
    };
    let mut grow = TransitionDataset::new(DataOrigin::Grow);
    let mut intervals = Vec::new();
    let mut snapshots = Vec::new();
    let mut cumulative_return = 0.0;
    let mut total_unsafe = 0;
    let mut goal_events = 0;
    let mut cert_unsafe_exits = 0;
    let mut cert_transitions = 0;
    let mut executed = 0;
    let mut trajectory = Vec::new();

    while executed < config.budget {
        let index = intervals.len();
        let steps = config.grow_steps.min(config.budget - executed);
        let episodes_before = runner.episodes;
        let (mut ret, mut unsafe_steps, mut goal, mut interventions) = (0.0, 0, false, 0);
        for _ in 0..steps {
            let (r, u, g, i) = runner.step(&mut grow, config.record_trajectory.then_some(&mut trajectory));
            ret += r;
            unsafe_steps += usize::from(u);
            goal_events += usize::from(g);
            goal |= g;
            interventions += usize::from(i);
        }
        executed += steps;
        cumulative_return += ret;
        total_unsafe += unsafe_steps;
        runner.interventions += interventions;

        let (mut tentative_size, mut certified, mut cert_missing, mut accepted) = (None, None, None, false);
        if config.shielded {
            let tent = operator.con_inv_dataset(&grow, &safe_mask)?;
            tentative_size = Some(tent.fixed_point.count());
            let mut cert_env = runner.env.fresh_instance(streams.indexed("cert-env", index as u64));
            let mut cert_rng = streams.indexed("cert-policy", index as u64);
            let cert = collect_certification_data(
                &mut cert_env,
                config.cert_policy,
                Some(Tentative { omega: &tent.fixed_point, action_maps: &tent.result.action_maps }),
                grid,
                config.cert_steps,
                &mut cert_rng,
            );
            cert_unsafe_exits += cert.unsafe_exits;
            cert_transitions += cert.dataset.len();
            let outcome = operator.certify(&cert.dataset, &tent.fixed_point)?;
            certified = Some(outcome.accepted);
            cert_missing = Some(tent.fixed_point.indices().filter(|&i| !outcome.cert_set.contains(i)).count());
            let guard_ok = !config.monotone_guard || runner.shield.omega_hat().is_subset_of(&tent.fixed_point);
            if outcome.accepted && guard_ok && tent.fixed_point.count() > 0 {
                runner.shield.accept(tent.fixed_point.clone(), outcome.result.action_maps.clone())?;
                snapshots.push((index, tent.fixed_point));
                accepted = true;
                // The pending action was filtered by the previous shield.
                if !runner.need_reset {
                    if runner.shield.contains(grid, &runner.state) {
                        let state = runner.state.clone();
                        runner.pending = Some(runner.choose(&state));
                    } else {
                        runner.need_reset = true;
                    }
                }
            }
        }
        intervals.push(IntervalRecord {
            interval: index,
            steps,
            interval_return: ret,
            cumulative_return,
            unsafe_steps,
            goal_reached: goal,
            episodes_started: runner.episodes - episodes_before,
            interventions,
            omega_size: runner.shield.omega_hat().count(),
            tentative_size,
            certified,
            cert_missing,
            accepted,
        });
    }

    Ok(RunRecord {
        intervals,
        executed_steps: executed,
        total_unsafe_steps: total_unsafe,
        goal_events,
        cert_unsafe_exits,
        cert_transitions,
        interventions: runner.interventions,
        anomalies: runner.shield.anomalies(),
        outside_resets: runner.outside_resets,
        snapshots,
        final_shield: runner.shield,
        grow,
        trajectory,
    })
}
