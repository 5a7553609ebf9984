//! Experiment configuration: one TOML file, unknown keys rejected, every
//! referenced spec validated before any run starts.

use std::path::Path;

use pcis_core::env::{mc_pumping_policy, MountainCarConfig};
use pcis_core::fixtures::{four_state, peeling_chain, stay_chain};
use pcis_core::learners::ExplorationSchedule;
use pcis_core::oracle::{random_model, FiniteMdpModel, RandomModelSpec};
use pcis_core::shield::{CertPolicy, ShieldState, TrainingConfig};
use pcis_core::{
    BetaMode, ConfidenceParams, ConservativeOperator, FeatureMap, LatticeGrid, LatticeMask, PenaltyMode, RngStreams,
    StateBox,
};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{config_err, PcisError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSpec,
    pub features: FeatureSpec,
    #[serde(default)]
    pub grid: GridSpec,
    pub confidence: ConfidenceSpec,
    pub learner: LearnerSpec,
    pub schedule: ScheduleSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub shield: ShieldSpec,
    #[serde(default)]
    pub verify: VerifySpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvironmentKind {
    MountainCar,
    FourState,
    StayChain,
    PeelingChain,
    RandomFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub kind: EnvironmentKind,
    /// `stay-chain` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stay: Option<f64>,
    /// `peeling-chain` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    /// `random-finite` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKindSpec {
    Fourier,
    OneHot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSpec {
    pub kind: FeatureKindSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<u32>,
    #[serde(default)]
    pub normalized: bool,
}

/// MountainCar lattice; finite environments always use one point per state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfidenceSpec {
    pub horizon: usize,
    pub epsilon: f64,
    pub eta: f64,
    #[serde(default = "one")]
    pub ridge_lambda: f64,
    /// Per-stage failure budgets; defaults to the uniform split `(1 − η)/N`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
    /// Fixed confidence multiplier replacing the self-normalized one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Fixed discretization penalty replacing `d · L_φ · δ_x`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<f64>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LearnerKind {
    Sarsa,
    TabularQ,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub alpha: f64,
    pub gamma: f64,
    /// Trace decay; SARSA only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    pub exploration: ExplorationSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExplorationKind {
    Linear,
    Exponential,
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplorationSpec {
    pub kind: ExplorationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_min: Option<f64>,
    /// `linear` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub span: Option<f64>,
    /// `exponential` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    /// `constant` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub grow_steps: usize,
    pub cert_steps: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub seeds: Vec<u64>,
    /// Worker threads for the seed fan-out; 0 picks the available parallelism.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub record_trajectory: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CertPolicySpec {
    TentativeSafeUniform,
    Uniform,
    /// MountainCar only: thrust along the velocity half the time.
    Pumping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialShield {
    FullLattice,
    Box,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShieldSpec {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "yes")]
    pub monotone_guard: bool,
    #[serde(default = "default_cert_policy")]
    pub cert_policy: CertPolicySpec,
    #[serde(default = "default_initial")]
    pub initial: InitialShield,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_lower: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_upper: Option<Vec<f64>>,
    /// Actions allowed inside the seed box; all actions when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub box_actions: Option<Vec<usize>>,
    #[serde(default = "default_reset_attempts")]
    pub max_reset_attempts: usize,
}

fn yes() -> bool {
    true
}

fn default_cert_policy() -> CertPolicySpec {
    CertPolicySpec::TentativeSafeUniform
}

fn default_initial() -> InitialShield {
    InitialShield::FullLattice
}

fn default_reset_attempts() -> usize {
    100
}

impl Default for ShieldSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            monotone_guard: true,
            cert_policy: default_cert_policy(),
            initial: default_initial(),
            box_lower: None,
            box_upper: None,
            box_actions: None,
            max_reset_attempts: default_reset_attempts(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
}

fn default_trials() -> usize {
    300
}

fn default_eta() -> f64 {
    0.9
}

impl Default for VerifySpec {
    fn default() -> Self {
        Self { trials: default_trials(), eta: default_eta() }
    }
}

impl ExperimentConfig {
    /// The MountainCar shielding experiment: order-5 unnormalized Fourier
    /// features, a 200 × 30 lattice, `N = 1`, `ε = 0.3`, fixed `β = 0.1`,
    /// zero lattice penalty, true-online SARSA(λ), 300-step grow intervals
    /// and a 4000-step budget, shielded from a small box around the reset region.
    pub fn mountain_car() -> Self {
        Self {
            environment: EnvironmentSpec { kind: EnvironmentKind::MountainCar, stay: None, length: None, model_seed: None },
            features: FeatureSpec { kind: FeatureKindSpec::Fourier, order: Some(5), normalized: false },
            grid: GridSpec { points: Some(vec![200, 30]), lower: None, upper: None },
            confidence: ConfidenceSpec {
                horizon: 1,
                epsilon: 0.3,
                eta: 0.9,
                ridge_lambda: 1.0,
                deltas: None,
                beta: Some(0.1),
                penalty: Some(0.0),
            },
            learner: LearnerSpec {
                kind: LearnerKind::Sarsa,
                alpha: 1e-3,
                gamma: 0.99,
                lambda: Some(0.9),
                exploration: ExplorationSpec {
                    kind: ExplorationKind::Linear,
                    eps_max: Some(0.5),
                    eps_min: Some(0.01),
                    span: Some(4000.0),
                    tau: None,
                    value: None,
                },
            },
            schedule: ScheduleSpec { grow_steps: 300, cert_steps: 1000, budget: 4000 },
            run: RunSpec { seeds: (0..10).collect(), workers: 0, record_trajectory: false },
            shield: ShieldSpec {
                initial: InitialShield::Box,
                box_lower: Some(vec![-0.7, -0.02]),
                box_upper: Some(vec![-0.3, 0.02]),
                ..ShieldSpec::default()
            },
            verify: VerifySpec::default(),
        }
    }

    /// The four-state fixture with one-hot features, `N = 1`, `ε = 0.25`.
    pub fn four_state() -> Self {
        Self {
            environment: EnvironmentSpec { kind: EnvironmentKind::FourState, stay: None, length: None, model_seed: None },
            features: FeatureSpec { kind: FeatureKindSpec::OneHot, order: None, normalized: false },
            grid: GridSpec::default(),
            confidence: ConfidenceSpec {
                horizon: 1,
                epsilon: 0.25,
                eta: 0.9,
                ridge_lambda: 1.0,
                deltas: None,
                beta: None,
                penalty: None,
            },
            learner: LearnerSpec {
                kind: LearnerKind::TabularQ,
                alpha: 0.1,
                gamma: 0.99,
                lambda: None,
                exploration: ExplorationSpec {
                    kind: ExplorationKind::Constant,
                    eps_max: None,
                    eps_min: None,
                    span: None,
                    tau: None,
                    value: Some(0.2),
                },
            },
            schedule: ScheduleSpec { grow_steps: 500, cert_steps: 4000, budget: 4000 },
            run: RunSpec { seeds: vec![0], workers: 0, record_trajectory: false },
            shield: ShieldSpec::default(),
            verify: VerifySpec::default(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "mountain-car" => Ok(Self::mountain_car()),
            "four-state" => Ok(Self::four_state()),
            other => Err(config_err(format!("unknown preset `{other}` (expected mountain-car or four-state)"))),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| PcisError::io(path, e))?;
        toml::from_str(&text).map_err(|e| config_err(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs always serialize")
    }

    /// SHA-256 of the canonical serialization, lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.environment.kind != EnvironmentKind::MountainCar
    }

    /// Validates every spec and builds the runtime objects.
    pub fn resolve(&self) -> Result<Experiment> {
        let model = self.finite_model()?;
        let (grid, map) = match &model {
            Some(m) => {
                if self.grid != GridSpec::default() {
                    return Err(config_err("[grid] applies to mountain-car only"));
                }
                if self.features.kind != FeatureKindSpec::OneHot {
                    return Err(config_err("finite environments need features.kind = \"one-hot\""));
                }
                if self.features.order.is_some() || self.features.normalized {
                    return Err(config_err("features.order and features.normalized apply to fourier features only"));
                }
                (m.grid(), m.feature_map())
            }
            None => {
                if self.features.kind != FeatureKindSpec::Fourier {
                    return Err(config_err("mountain-car needs features.kind = \"fourier\""));
                }
                let order = self.features.order.ok_or_else(|| config_err("features.order is required for fourier features"))?;
                let state_box = match (&self.grid.lower, &self.grid.upper) {
                    (None, None) => StateBox::mountain_car_safe_set(),
                    (Some(lo), Some(hi)) => StateBox::new(lo.clone(), hi.clone())?,
                    _ => return Err(config_err("grid.lower and grid.upper must be given together")),
                };
                if state_box.dim() != 2 {
                    return Err(config_err("mountain-car states are two-dimensional"));
                }
                let points = self.grid.points.clone().unwrap_or_else(|| vec![200, 30]);
                let grid = LatticeGrid::new(state_box.clone(), points)?;
                (grid, FeatureMap::fourier(state_box, 3, order, self.features.normalized)?)
            }
        };

        let c = &self.confidence;
        let deltas = match &c.deltas {
            Some(d) => d.clone(),
            None if c.horizon == 0 => Vec::new(),
            None => vec![(1.0 - c.eta) / c.horizon as f64; c.horizon],
        };
        let mut params = ConfidenceParams::uniform(c.epsilon, c.eta, c.horizon.max(1), map.dimension())?;
        params.horizon = c.horizon;
        params.per_stage_delta = deltas;
        params.validate()?;
        let mut operator = ConservativeOperator::new(map.clone(), grid.clone(), params)?.with_ridge_lambda(c.ridge_lambda)?;
        if let Some(beta) = c.beta {
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(config_err("confidence.beta must be finite and nonnegative"));
            }
            operator = operator.with_beta_mode(BetaMode::Fixed(beta));
        }
        if let Some(penalty) = c.penalty {
            if !(penalty >= 0.0 && penalty.is_finite()) {
                return Err(config_err("confidence.penalty must be finite and nonnegative"));
            }
            operator = operator.with_penalty_mode(PenaltyMode::Fixed(penalty));
        }

        let exploration = self.exploration()?;
        let l = &self.learner;
        match l.kind {
            LearnerKind::Sarsa if l.lambda.is_none() => return Err(config_err("learner.lambda is required for sarsa")),
            LearnerKind::TabularQ if l.lambda.is_some() => return Err(config_err("learner.lambda applies to sarsa only")),
            LearnerKind::TabularQ if model.is_none() => return Err(config_err("tabular-q needs a finite environment")),
            _ => {}
        }
        if !(l.alpha >= 0.0) || !(0.0..=1.0).contains(&l.gamma) || !l.lambda.is_none_or(|x| (0.0..=1.0).contains(&x)) {
            return Err(config_err("learner needs alpha >= 0 and gamma, lambda in [0, 1]"));
        }

        let s = &self.schedule;
        if s.grow_steps == 0 {
            return Err(config_err("schedule.grow_steps must be positive"));
        }
        if self.run.seeds.is_empty() {
            return Err(config_err("run.seeds must list at least one seed"));
        }
        let mut sorted = self.run.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.run.seeds.len() {
            return Err(config_err("run.seeds must not repeat"));
        }
        if !(self.verify.eta > 0.0 && self.verify.eta < 1.0) {
            return Err(config_err("verify.eta must lie in (0, 1)"));
        }

        let sh = &self.shield;
        if sh.cert_policy == CertPolicySpec::Pumping && model.is_some() {
            return Err(config_err("the pumping certification policy needs mountain-car"));
        }
        let box_given = sh.box_lower.is_some() || sh.box_upper.is_some() || sh.box_actions.is_some();
        if sh.initial == InitialShield::FullLattice && box_given {
            return Err(config_err("shield.box_* apply to initial = \"box\" only"));
        }
        let training = TrainingConfig {
            grow_steps: s.grow_steps,
            cert_steps: s.cert_steps,
            budget: s.budget,
            shielded: sh.enabled,
            monotone_guard: sh.monotone_guard,
            cert_policy: match sh.cert_policy {
                CertPolicySpec::TentativeSafeUniform => CertPolicy::TentativeSafeUniform,
                CertPolicySpec::Uniform => CertPolicy::Uniform,
                CertPolicySpec::Pumping => CertPolicy::Fixed(mc_pumping_policy),
            },
            max_reset_attempts: sh.max_reset_attempts.max(1),
            record_trajectory: self.run.record_trajectory,
        };
        let experiment = Experiment {
            config: self.clone(),
            hash: self.hash(),
            model,
            grid,
            map,
            operator,
            exploration,
            training,
        };
        experiment.seed_shield()?;
        Ok(experiment)
    }

    fn finite_model(&self) -> Result<Option<FiniteMdpModel>> {
        let e = &self.environment;
        let expect = |stay: bool, length: bool, seed: bool| -> Result<()> {
            if e.stay.is_some() != stay || e.length.is_some() != length || e.model_seed.is_some() != seed {
                return Err(config_err(format!(
                    "environment {:?} takes {}",
                    e.kind,
                    match (stay, length, seed) {
                        (true, _, _) => "exactly the `stay` parameter",
                        (_, true, _) => "exactly the `length` parameter",
                        (_, _, true) => "exactly the `model_seed` parameter",
                        _ => "no parameters",
                    }
                )));
            }
            Ok(())
        };
        Ok(match e.kind {
            EnvironmentKind::MountainCar => {
                expect(false, false, false)?;
                None
            }
            EnvironmentKind::FourState => {
                expect(false, false, false)?;
                Some(four_state())
            }
            EnvironmentKind::StayChain => {
                expect(true, false, false)?;
                let stay = e.stay.unwrap_or_default();
                if !(0.0..=1.0).contains(&stay) {
                    return Err(config_err("environment.stay must lie in [0, 1]"));
                }
                Some(stay_chain(stay))
            }
            EnvironmentKind::PeelingChain => {
                expect(false, true, false)?;
                let k = e.length.unwrap_or_default();
                if k == 0 {
                    return Err(config_err("environment.length must be positive"));
                }
                Some(peeling_chain(k))
            }
            EnvironmentKind::RandomFinite => {
                expect(false, false, true)?;
                let mut rng = RngStreams::new(e.model_seed.unwrap_or_default()).stream("model");
                Some(random_model(&RandomModelSpec::default(), &mut rng))
            }
        })
    }

    fn exploration(&self) -> Result<ExplorationSchedule> {
        let x = &self.learner.exploration;
        let need = |v: Option<f64>, name: &str| v.ok_or_else(|| config_err(format!("learner.exploration.{name} is required")));
        let schedule = match x.kind {
            ExplorationKind::Linear => {
                if x.tau.is_some() || x.value.is_some() {
                    return Err(config_err("linear exploration takes eps_max, eps_min and span"));
                }
                ExplorationSchedule::Linear { eps_max: need(x.eps_max, "eps_max")?, eps_min: need(x.eps_min, "eps_min")?, span: need(x.span, "span")? }
            }
            ExplorationKind::Exponential => {
                if x.span.is_some() || x.value.is_some() {
                    return Err(config_err("exponential exploration takes eps_max, eps_min and tau"));
                }
                ExplorationSchedule::Exponential { eps_max: need(x.eps_max, "eps_max")?, eps_min: need(x.eps_min, "eps_min")?, tau: need(x.tau, "tau")? }
            }
            ExplorationKind::Constant => {
                if x.eps_max.is_some() || x.eps_min.is_some() || x.span.is_some() || x.tau.is_some() {
                    return Err(config_err("constant exploration takes value only"));
                }
                ExplorationSchedule::Constant(need(x.value, "value")?)
            }
        };
        let in_unit = |v: Option<f64>| v.is_none_or(|v| (0.0..=1.0).contains(&v));
        if !(in_unit(x.eps_max) && in_unit(x.eps_min) && in_unit(x.value)) {
            return Err(config_err("exploration rates must lie in [0, 1]"));
        }
        if x.tau.is_some_and(|t| !(t > 0.0)) || x.span.is_some_and(|s| !(s >= 0.0)) {
            return Err(config_err("exploration tau must be positive and span nonnegative"));
        }
        Ok(schedule)
    }
}

/// A validated configuration with its runtime objects.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub hash: String,
    /// Present for finite environments.
    pub model: Option<FiniteMdpModel>,
    pub grid: LatticeGrid,
    pub map: FeatureMap,
    pub operator: ConservativeOperator,
    pub exploration: ExplorationSchedule,
    pub training: TrainingConfig,
}

impl Experiment {
    pub fn state_dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn action_count(&self) -> usize {
        self.map.action_count()
    }

    pub fn first_seed(&self) -> u64 {
        self.config.run.seeds[0]
    }

    pub fn mountain_car(&self) -> MountainCarConfig {
        let mut config = MountainCarConfig::default();
        config.safe_box = self.grid.state_box().clone();
        config
    }

    /// The reference set ConInv starts from: the safe states of a finite
    /// model, the whole lattice otherwise.
    pub fn safe_mask(&self) -> LatticeMask {
        match &self.model {
            Some(m) => m.safe_mask(),
            None => LatticeMask::full(self.grid.len()),
        }
    }

    pub fn seed_shield(&self) -> Result<ShieldState> {
        let sh = &self.config.shield;
        let n = self.config.confidence.horizon;
        let u = self.action_count();
        match sh.initial {
            InitialShield::FullLattice => Ok(ShieldState::full_lattice(&self.grid, n, u)?),
            InitialShield::Box => {
                let lower = sh.box_lower.as_ref().ok_or_else(|| config_err("shield.box_lower is required"))?;
                let upper = sh.box_upper.as_ref().ok_or_else(|| config_err("shield.box_upper is required"))?;
                let all: Vec<usize> = (0..u).collect();
                let actions = sh.box_actions.as_ref().unwrap_or(&all);
                Ok(ShieldState::seed_box(&self.grid, lower, upper, n, u, actions)?)
            }
        }
    }
}
