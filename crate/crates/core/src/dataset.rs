//! Transition datasets and stagewise splitting.

use alloc::vec::Vec;

/// Where a batch of transitions came from. Certification data must never be
/// mixed into grow data or learner updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DataOrigin {
    Grow,
    Certification,
    Offline,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub next_state: Vec<f64>,
}

impl Transition {
    pub fn new(state: Vec<f64>, action: usize, next_state: Vec<f64>) -> Self {
        Self { state, action, next_state }
    }
}

/// Ordered `(x, u, x′)` triples with a provenance tag.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    origin: DataOrigin,
    transitions: Vec<Transition>,
}

impl TransitionDataset {
    pub fn new(origin: DataOrigin) -> Self {
        Self { origin, transitions: Vec::new() }
    }

    pub fn from_transitions(origin: DataOrigin, transitions: Vec<Transition>) -> Self {
        Self { origin, transitions }
    }

    pub fn origin(&self) -> DataOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn push(&mut self, transition: Transition) {
        self.transitions.push(transition);
    }

    /// Appends another dataset.
    ///
    /// # Panics
    /// When certification data would be merged into a non-certification dataset.
    pub fn append(&mut self, other: &TransitionDataset) {
        assert!(
            other.origin != DataOrigin::Certification || self.origin == DataOrigin::Certification,
            "certification transitions cannot be merged into {:?} data",
            self.origin
        );
        self.transitions.extend_from_slice(&other.transitions);
    }

    pub fn truncated(&self, len: usize) -> Self {
        Self { origin: self.origin, transitions: self.transitions[..len.min(self.len())].to_vec() }
    }

    /// Splits into `horizon` contiguous blocks in arrival order, sizes
    /// differing by at most one (earlier blocks take the remainder).
    pub fn split_stagewise(&self, horizon: usize) -> Vec<&[Transition]> {
        split_stagewise(&self.transitions, horizon)
    }
}

/// Contiguous balanced split. Blocks may be empty when `horizon > len`; the
/// recursion then runs on the prior alone.
pub fn split_stagewise(transitions: &[Transition], horizon: usize) -> Vec<&[Transition]> {
    assert!(horizon >= 1, "horizon must be at least 1");
    let base = transitions.len() / horizon;
    let extra = transitions.len() % horizon;
    let mut out = Vec::with_capacity(horizon);
    let mut start = 0;
    for j in 0..horizon {
        let size = base + usize::from(j < extra);
        out.push(&transitions[start..start + size]);
        start += size;
    }
    out
}
