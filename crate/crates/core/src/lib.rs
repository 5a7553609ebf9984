//! Data-driven probabilistic controlled invariant sets for linear MDPs.
//!
//! The crate synthesizes `(N, ε)`-probabilistic controlled invariant sets
//! directly from transition data. A conservative backward recursion built on
//! ridge-regression lower confidence bounds yields, for any reference set,
//! an inner approximation of the exact safety operator; iterating it gives a
//! candidate invariant set, which is then certified on an independent hold-out
//! dataset and deployed as a runtime shield around a learner.
//!
//! The crate is `no_std` and needs only `alloc`. IO, configuration and the
//! command-line harness live in the companion `pcis` crate.
//!
//! Module map:
//!
//! * [`ridge`]: regularized least squares and self-normalized widths
//! * [`features`]: Fourier and one-hot feature maps with Lipschitz bounds
//! * [`lattice`]: grids, quantization, masks and value tables
//! * [`operator`]: the conservative operator, fixed-point search and certification
//! * [`oracle`]: exact dynamic programming on finite MDPs with known kernels
//! * [`fixtures`]: small finite MDPs with hand-checkable answers
//! * [`env`]: the unclipped MountainCar and finite-MDP environments
//! * [`learners`]: true-online SARSA(λ), tabular Q-learning and exploration schedules
//! * [`shield`]: the runtime filter and the grow/certify training loop
//! * [`verify`]: randomized conservatism checks against the exact operator

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod dataset;
pub mod env;
pub mod error;
pub mod features;
pub mod fixtures;
pub mod lattice;
pub mod learners;
pub mod linalg;
pub mod operator;
pub mod oracle;
pub mod ridge;
pub mod rng;
pub mod shield;
pub mod verify;

pub use dataset::{split_stagewise, DataOrigin, Transition, TransitionDataset};
pub use error::{Error, Result};
pub use features::{FeatureKind, FeatureMap, StateBox};
pub use lattice::{LatticeGrid, LatticeMask, SafetyValueTable};
pub use operator::{
    safe_actions, ActionMaps, BetaMode, CertificationOutcome, ConInvOutcome, ConservativeOperator,
    OperatorResult, PenaltyMode, PreparedStages,
};
pub use ridge::{beta_default, ConfidenceParams, RidgeStage};
pub use rng::RngStreams;
