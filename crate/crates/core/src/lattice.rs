//! Lattice abstraction of a box-shaped safe set.
//!
//! A continuous state `x` belongs to a lattice set `Ω` iff `x` lies in the
//! safe box and its nearest lattice point `q(x)` is marked in the mask
//! (Voronoi-cell reading). Every consumer (lift, shield, violation
//! accounting) uses [`LatticeGrid::mask_contains_state`] for this test.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_dim, invalid, Result};
use crate::features::StateBox;

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeGrid {
    state_box: StateBox,
    points_per_axis: Vec<usize>,
    spacing: Vec<f64>,
    delta_x: f64,
}

impl LatticeGrid {
    /// Cartesian grid with both endpoints included on every axis.
    pub fn new(state_box: StateBox, points_per_axis: Vec<usize>) -> Result<Self> {
        check_dim(state_box.dim(), points_per_axis.len())?;
        if points_per_axis.iter().any(|&p| p < 2) {
            return Err(invalid("every lattice axis needs at least 2 points"));
        }
        let spacing: Vec<f64> = points_per_axis
            .iter()
            .enumerate()
            .map(|(i, &p)| state_box.width(i) / (p - 1) as f64)
            .collect();
        let delta_x = spacing.iter().cloned().fold(0.0, f64::max) / 2.0;
        Ok(Self { state_box, points_per_axis, spacing, delta_x })
    }

    /// One lattice point per state of a finite MDP: states `0..n` on a line.
    pub fn finite(state_count: usize) -> Result<Self> {
        if state_count < 2 {
            return Err(invalid("finite lattice needs at least two states"));
        }
        let state_box = StateBox::new(vec![0.0], vec![(state_count - 1) as f64])?;
        Self::new(state_box, vec![state_count])
    }

    /// The 200 × 30 MountainCar grid.
    pub fn mountain_car() -> Self {
        Self::new(StateBox::mountain_car_safe_set(), vec![200, 30]).expect("valid constant grid")
    }

    pub fn state_box(&self) -> &StateBox {
        &self.state_box
    }

    pub fn points_per_axis(&self) -> &[usize] {
        &self.points_per_axis
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// ∞-norm covering radius `max_i Δ_i / 2`.
    pub fn delta_x(&self) -> f64 {
        self.delta_x
    }

    pub fn dim(&self) -> usize {
        self.points_per_axis.len()
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Per-axis indices of a flat index; the last axis varies fastest.
    pub fn multi_index(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for axis in (0..self.dim()).rev() {
            let p = self.points_per_axis[axis];
            out[axis] = index % p;
            index /= p;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.points_per_axis)
            .fold(0, |acc, (&k, &p)| acc * p + k)
    }

    pub fn point(&self, index: usize) -> Vec<f64> {
        self.multi_index(index)
            .iter()
            .enumerate()
            .map(|(axis, &k)| self.axis_coordinate(axis, k))
            .collect()
    }

    fn axis_coordinate(&self, axis: usize, k: usize) -> f64 {
        if k + 1 == self.points_per_axis[axis] {
            self.state_box.upper()[axis]
        } else {
            self.state_box.lower()[axis] + k as f64 * self.spacing[axis]
        }
    }

    pub fn points(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    /// Nearest lattice point in ∞-norm. States outside the box are clamped
    /// first; exact ties go to the lower index on each axis.
    pub fn quantize(&self, state: &[f64]) -> usize {
        debug_assert_eq!(state.len(), self.dim());
        let mut flat = 0;
        for (axis, &x) in state.iter().enumerate() {
            let p = self.points_per_axis[axis];
            let lo = self.state_box.lower()[axis];
            let hi = self.state_box.upper()[axis];
            let t = (x.clamp(lo, hi) - lo) / self.spacing[axis];
            let k = libm::ceil(t - 0.5).clamp(0.0, (p - 1) as f64) as usize;
            flat = flat * p + k;
        }
        flat
    }

    /// Continuous membership: inside the box and `q(x)` marked.
    pub fn mask_contains_state(&self, mask: &LatticeMask, state: &[f64]) -> bool {
        self.state_box.contains(state) && mask.contains(self.quantize(state))
    }
}

/// A subset of lattice points.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LatticeMask {
    bits: Vec<bool>,
}

impl LatticeMask {
    pub fn empty(len: usize) -> Self {
        Self { bits: vec![false; len] }
    }

    pub fn full(len: usize) -> Self {
        Self { bits: vec![true; len] }
    }

    pub fn from_bits(bits: Vec<bool>) -> Self {
        Self { bits }
    }

    pub fn from_indices(len: usize, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::empty(len);
        for i in indices {
            m.bits[i] = true;
        }
        m
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn contains(&self, index: usize) -> bool {
        self.bits.get(index).copied().unwrap_or(false)
    }

    pub fn set(&mut self, index: usize, value: bool) {
        self.bits[index] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn is_subset_of(&self, other: &LatticeMask) -> bool {
        self.bits.len() == other.bits.len()
            && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn intersection(&self, other: &LatticeMask) -> LatticeMask {
        debug_assert_eq!(self.len(), other.len());
        Self { bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect() }
    }

    pub fn union(&self, other: &LatticeMask) -> LatticeMask {
        debug_assert_eq!(self.len(), other.len());
        Self { bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect() }
    }
}

/// Lattice values `p̃_j` for stages `j = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SafetyValueTable {
    values: Vec<Vec<f64>>,
}

impl SafetyValueTable {
    /// All-zero table for `horizon + 1` stages.
    pub fn zeros(horizon: usize, points: usize) -> Self {
        Self { values: vec![vec![0.0; points]; horizon + 1] }
    }

    pub fn horizon(&self) -> usize {
        self.values.len() - 1
    }

    pub fn points(&self) -> usize {
        self.values[0].len()
    }

    pub fn stage(&self, stage: usize) -> &[f64] {
        &self.values[stage]
    }

    pub fn get(&self, stage: usize, index: usize) -> f64 {
        self.values[stage][index]
    }

    pub fn set(&mut self, stage: usize, index: usize, value: f64) {
        debug_assert!((0.0..=1.0).contains(&value));
        self.values[stage][index] = value;
    }

    /// `p̄_j(x)`: the quantized value when `x ∈ Ω`, otherwise 0.
    pub fn lift(&self, grid: &LatticeGrid, stage: usize, omega: &LatticeMask, state: &[f64]) -> f64 {
        if grid.mask_contains_state(omega, state) {
            self.values[stage][grid.quantize(state)]
        } else {
            0.0
        }
    }
}
