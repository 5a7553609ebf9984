//! Conservative backward recursion over a lattice reference set.
//!
//! For a reference set `Ω` (a lattice mask) and stage data blocks
//! `D_0, …, D_{N-1}` the operator runs, for `j = N-1 … 0`,
//!
//! ```text
//! y_t      = p̄_{j+1}(x′_t)                       (lift of the next stage)
//! θ̂_j      = V_j⁻¹ D_jᵀ y
//! ℓ_j(x,u) = θ̂_jᵀφ(x,u) − penalty − β_j σ_j(x,u)
//! p̃_j(x)   = 1_Ω(x) · max_u clip(ℓ_j(x,u), 0, 1)
//! ```
//!
//! and returns `{x ∈ Ω : p̃_0(x) ≥ 1 − ε}` together with the stage tables,
//! the thresholded action sets `{u : ℓ_j(x,u) ≥ 1 − ε}` and the argmax
//! continuation selectors.
//!
//! The Gram matrices and widths depend only on the data, never on `Ω`, so
//! they are computed once in [`PreparedStages`] and reused by every
//! evaluation of a fixed-point search.

use alloc::vec;
use alloc::vec::Vec;

use crate::dataset::{split_stagewise, Transition, TransitionDataset};
use crate::error::{check_dim, invalid, Result};
use crate::features::FeatureMap;
use crate::lattice::{LatticeGrid, LatticeMask, SafetyValueTable};
use crate::ridge::{beta_default, ConfidenceParams, RidgeStage, DEFAULT_REFACTOR_EVERY};

/// Maximum number of actions representable in an action-set bitmask.
pub const MAX_ACTIONS: usize = 32;

/// How the confidence multiplier `β_j` is obtained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    /// `R √(d ln((1 + T_j/λ)/δ_j)) + √λ S`.
    SelfNormalized,
    /// Same value at every stage (empirical tuning).
    Fixed(f64),
}

/// Discretization penalty subtracted from every lattice lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PenaltyMode {
    /// `d · L_φ · δ_x`; zero for tabular maps.
    Lipschitz,
    Fixed(f64),
}

/// Per-stage action sets (bitmasks) and continuation selectors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionMaps {
    action_count: usize,
    sets: Vec<Vec<u32>>,
    selectors: Vec<Vec<u16>>,
}

impl ActionMaps {
    pub fn new(horizon: usize, points: usize, action_count: usize) -> Self {
        Self {
            action_count,
            sets: vec![vec![0; points]; horizon],
            selectors: vec![vec![0; points]; horizon],
        }
    }

    /// Every action allowed everywhere, selector 0.
    pub fn permissive(horizon: usize, points: usize, action_count: usize) -> Self {
        let all = if action_count == MAX_ACTIONS { u32::MAX } else { (1u32 << action_count) - 1 };
        Self {
            action_count,
            sets: vec![vec![all; points]; horizon],
            selectors: vec![vec![0; points]; horizon],
        }
    }

    pub fn horizon(&self) -> usize {
        self.sets.len()
    }

    pub fn points(&self) -> usize {
        self.sets.first().map_or(0, Vec::len)
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn bits(&self, stage: usize, point: usize) -> u32 {
        self.sets[stage][point]
    }

    pub fn set_bits(&mut self, stage: usize, point: usize, bits: u32) {
        self.sets[stage][point] = bits;
    }

    pub fn actions(&self, stage: usize, point: usize) -> Vec<usize> {
        let bits = self.sets[stage][point];
        (0..self.action_count).filter(|&u| bits & (1 << u) != 0).collect()
    }

    pub fn allows(&self, stage: usize, point: usize, action: usize) -> bool {
        action < self.action_count && self.sets[stage][point] & (1 << action) != 0
    }

    pub fn selector(&self, stage: usize, point: usize) -> usize {
        self.selectors[stage][point] as usize
    }

    pub fn set_selector(&mut self, stage: usize, point: usize, action: usize) {
        self.selectors[stage][point] = action as u16;
    }
}

/// Everything one operator evaluation produces.
#[derive(Debug, Clone)]
pub struct OperatorResult {
    pub q_set: LatticeMask,
    pub value_table: SafetyValueTable,
    pub action_maps: ActionMaps,
    pub stages: Vec<RidgeStage>,
    pub epsilon: f64,
}

impl OperatorResult {
    pub fn horizon(&self) -> usize {
        self.action_maps.horizon()
    }

    /// Stage-`j` thresholded set `{x ∈ Ω : p̃_j(x) ≥ 1 − ε}`.
    pub fn stage_set(&self, stage: usize) -> LatticeMask {
        let threshold = 1.0 - self.epsilon;
        // The terminal stage is exactly the indicator of the reference set.
        let omega = self.value_table.stage(self.horizon());
        LatticeMask::from_bits(
            self.value_table
                .stage(stage)
                .iter()
                .zip(omega)
                .map(|(&v, &inside)| inside == 1.0 && v >= threshold)
                .collect(),
        )
    }
}

/// Safe actions at stage `stage` for a continuous state: the action set of
/// its nearest lattice point. May be empty.
pub fn safe_actions(result: &OperatorResult, stage: usize, state: &[f64], grid: &LatticeGrid) -> Vec<usize> {
    result.action_maps.actions(stage, grid.quantize(state))
}

/// Sparse feature vector.
#[derive(Debug, Clone, Default)]
struct SparseFeature {
    index: Vec<u32>,
    value: Vec<f64>,
}

impl SparseFeature {
    fn from_dense(dense: &[f64]) -> Self {
        let mut f = Self::default();
        for (i, &v) in dense.iter().enumerate() {
            if v != 0.0 {
                f.index.push(i as u32);
                f.value.push(v);
            }
        }
        f
    }

    #[inline]
    fn dot(&self, dense: &[f64]) -> f64 {
        self.index.iter().zip(&self.value).map(|(&i, &v)| dense[i as usize] * v).sum()
    }
}

/// The data-driven safety operator for one feature map, grid and parameter set.
#[derive(Debug, Clone)]
pub struct ConservativeOperator {
    map: FeatureMap,
    grid: LatticeGrid,
    params: ConfidenceParams,
    ridge_lambda: f64,
    beta_mode: BetaMode,
    penalty_mode: PenaltyMode,
    refactor_every: usize,
    lattice_features: Vec<SparseFeature>,
}

impl ConservativeOperator {
    pub fn new(map: FeatureMap, grid: LatticeGrid, params: ConfidenceParams) -> Result<Self> {
        params.validate()?;
        if map.action_count() > MAX_ACTIONS {
            return Err(invalid("too many actions for the action-set bitmask"));
        }
        let mut lattice_features = Vec::with_capacity(grid.len() * map.action_count());
        for i in 0..grid.len() {
            let point = grid.point(i);
            for u in 0..map.action_count() {
                lattice_features.push(SparseFeature::from_dense(&map.eval(&point, u)?));
            }
        }
        Ok(Self {
            map,
            grid,
            params,
            ridge_lambda: 1.0,
            beta_mode: BetaMode::SelfNormalized,
            penalty_mode: PenaltyMode::Lipschitz,
            refactor_every: DEFAULT_REFACTOR_EVERY,
            lattice_features,
        })
    }

    pub fn with_ridge_lambda(mut self, ridge_lambda: f64) -> Result<Self> {
        if !(ridge_lambda > 0.0) {
            return Err(invalid("ridge lambda must be positive"));
        }
        self.ridge_lambda = ridge_lambda;
        Ok(self)
    }

    pub fn with_beta_mode(mut self, mode: BetaMode) -> Self {
        self.beta_mode = mode;
        self
    }

    pub fn with_penalty_mode(mut self, mode: PenaltyMode) -> Self {
        self.penalty_mode = mode;
        self
    }

    pub fn with_refactor_every(mut self, every: usize) -> Self {
        self.refactor_every = every.max(1);
        self
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn grid(&self) -> &LatticeGrid {
        &self.grid
    }

    pub fn params(&self) -> &ConfidenceParams {
        &self.params
    }

    pub fn horizon(&self) -> usize {
        self.params.horizon
    }

    /// The subtracted discretization term.
    pub fn penalty(&self) -> f64 {
        match self.penalty_mode {
            PenaltyMode::Lipschitz => {
                self.map.dimension() as f64 * self.map.lipschitz_bound() * self.grid.delta_x()
            }
            PenaltyMode::Fixed(p) => p,
        }
    }

    /// Fits the per-stage designs (Gram, inverse, widths) for the given blocks.
    pub fn prepare(&self, blocks: &[&[Transition]]) -> Result<PreparedStages> {
        check_dim(self.horizon(), blocks.len())?;
        let d = self.map.dimension();
        let mut stages = Vec::with_capacity(blocks.len());
        for (j, block) in blocks.iter().enumerate() {
            let mut rows = Vec::with_capacity(block.len());
            let mut successors = Vec::with_capacity(block.len());
            for t in block.iter() {
                check_dim(self.grid.dim(), t.state.len())?;
                check_dim(self.grid.dim(), t.next_state.len())?;
                rows.push(self.map.eval(&t.state, t.action)?);
                let inside = self.grid.state_box().contains(&t.next_state);
                successors.push(inside.then(|| self.grid.quantize(&t.next_state)));
            }
            let zeros = vec![0.0; rows.len()];
            let design = RidgeStage::new(d, self.ridge_lambda)?
                .with_refactor_every(self.refactor_every)
                .fit(&rows, &zeros)?;
            let beta = match self.beta_mode {
                BetaMode::SelfNormalized => {
                    beta_default(&self.params, j, design.sample_count(), self.ridge_lambda, d)?
                }
                BetaMode::Fixed(b) => b,
            };
            let design = design.with_beta(beta);
            let mut widths = Vec::with_capacity(self.lattice_features.len());
            let mut dense = vec![0.0; d];
            for f in &self.lattice_features {
                dense.iter_mut().for_each(|v| *v = 0.0);
                for (&i, &v) in f.index.iter().zip(&f.value) {
                    dense[i as usize] = v;
                }
                widths.push(design.sigma(&dense)?);
            }
            stages.push(StageDesign { design, rows, successors, widths });
        }
        Ok(PreparedStages { stages })
    }

    /// Splits one dataset stagewise and prepares it.
    pub fn prepare_dataset(&self, dataset: &TransitionDataset) -> Result<PreparedStages> {
        self.prepare(&split_stagewise(dataset.transitions(), self.horizon()))
    }

    /// One evaluation of the conservative operator on reference set `omega`.
    pub fn evaluate(&self, prepared: &PreparedStages, omega: &LatticeMask) -> Result<OperatorResult> {
        check_dim(self.grid.len(), omega.len())?;
        check_dim(self.horizon(), prepared.stages.len())?;
        let n = self.horizon();
        let points = self.grid.len();
        let actions = self.map.action_count();
        let threshold = self.params.threshold();
        let penalty = self.penalty();

        let mut table = SafetyValueTable::zeros(n, points);
        for i in omega.indices() {
            table.set(n, i, 1.0);
        }
        let mut maps = ActionMaps::new(n, points, actions);
        let mut fitted = Vec::with_capacity(n);

        for j in (0..n).rev() {
            let stage = &prepared.stages[j];
            let next = table.stage(j + 1);
            let targets: Vec<f64> = stage
                .successors
                .iter()
                .map(|s| match s {
                    Some(k) if omega.contains(*k) => next[*k],
                    _ => 0.0,
                })
                .collect();
            let ridge = stage.design.refit_targets(&stage.rows, &targets)?;
            let theta = ridge.theta_hat();
            let beta = ridge.beta();
            let mut values = vec![0.0; points];
            for i in omega.indices() {
                let mut best = f64::NEG_INFINITY;
                let mut best_action = 0;
                let mut bits = 0u32;
                for u in 0..actions {
                    let k = i * actions + u;
                    let lower = self.lattice_features[k].dot(theta) - penalty - beta * stage.widths[k];
                    if lower >= threshold {
                        bits |= 1 << u;
                    }
                    if lower > best {
                        best = lower;
                        best_action = u;
                    }
                }
                values[i] = best.clamp(0.0, 1.0);
                maps.set_bits(j, i, bits);
                maps.set_selector(j, i, best_action);
            }
            for (i, v) in values.into_iter().enumerate() {
                table.set(j, i, v);
            }
            fitted.push(ridge);
        }
        fitted.reverse();

        let q_set = LatticeMask::from_bits(
            (0..points).map(|i| omega.contains(i) && table.get(0, i) >= threshold).collect(),
        );
        Ok(OperatorResult {
            q_set,
            value_table: table,
            action_maps: maps,
            stages: fitted,
            epsilon: self.params.epsilon,
        })
    }

    /// Prepare and evaluate in one call.
    pub fn apply(&self, omega: &LatticeMask, blocks: &[&[Transition]]) -> Result<OperatorResult> {
        self.evaluate(&self.prepare(blocks)?, omega)
    }

    /// Tabular variant with no discretization penalty.
    pub fn apply_exact(&self, omega: &LatticeMask, blocks: &[&[Transition]]) -> Result<OperatorResult> {
        if !self.map.is_tabular() {
            return Err(invalid("the exact variant requires a one-hot tabular feature map"));
        }
        self.clone().with_penalty_mode(PenaltyMode::Fixed(0.0)).apply(omega, blocks)
    }

    /// Greatest conservative fixed point below `safe_mask`, iterating on one
    /// prepared dataset until two consecutive masks are identical.
    pub fn con_inv(&self, prepared: &PreparedStages, safe_mask: &LatticeMask) -> Result<ConInvOutcome> {
        let mut omega = safe_mask.clone();
        let mut cardinalities = vec![omega.count()];
        loop {
            let result = self.evaluate(prepared, &omega)?;
            if result.q_set == omega {
                return Ok(ConInvOutcome { fixed_point: omega, result, iterations: cardinalities.len(), cardinalities });
            }
            omega = result.q_set.clone();
            cardinalities.push(omega.count());
        }
    }

    /// `con_inv` on a dataset split stagewise.
    pub fn con_inv_dataset(&self, dataset: &TransitionDataset, safe_mask: &LatticeMask) -> Result<ConInvOutcome> {
        self.con_inv(&self.prepare_dataset(dataset)?, safe_mask)
    }

    /// Hold-out certification: a single evaluation on the fixed tentative set.
    pub fn certify(&self, cert_dataset: &TransitionDataset, omega_tent: &LatticeMask) -> Result<CertificationOutcome> {
        let result = self.evaluate(&self.prepare_dataset(cert_dataset)?, omega_tent)?;
        Ok(CertificationOutcome {
            accepted: omega_tent.is_subset_of(&result.q_set),
            cert_set: result.q_set.clone(),
            result,
        })
    }
}

#[derive(Debug, Clone)]
struct StageDesign {
    design: RidgeStage,
    rows: Vec<Vec<f64>>,
    /// Lattice index of `x′` when it lies in the safe box.
    successors: Vec<Option<usize>>,
    /// `σ_j` for every `(lattice point, action)`.
    widths: Vec<f64>,
}

/// Data-dependent, reference-set-independent part of the recursion.
#[derive(Debug, Clone)]
pub struct PreparedStages {
    stages: Vec<StageDesign>,
}

impl PreparedStages {
    pub fn stage(&self, j: usize) -> &RidgeStage {
        &self.stages[j].design
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.stages.iter().map(|s| s.design.sample_count()).collect()
    }

    /// `σ_j` at lattice point `point`, action `action`.
    pub fn width(&self, j: usize, point: usize, action: usize, action_count: usize) -> f64 {
        self.stages[j].widths[point * action_count + action]
    }
}

#[derive(Debug, Clone)]
pub struct ConInvOutcome {
    pub fixed_point: LatticeMask,
    pub result: OperatorResult,
    /// Number of operator evaluations performed.
    pub iterations: usize,
    /// `|Ω^(ℓ)|` for every iterate, starting with the safe mask.
    pub cardinalities: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct CertificationOutcome {
    pub accepted: bool,
    pub cert_set: LatticeMask,
    pub result: OperatorResult,
}

impl CertificationOutcome {
    pub fn cert_action_maps(&self) -> &ActionMaps {
        &self.result.action_maps
    }
}
