//! Small finite MDPs with hand-checkable safety probabilities.

use alloc::vec;

use crate::oracle::FiniteMdpModel;

/// Two states, one action: state 0 stays w.p. `stay` and otherwise falls into
/// the sink; state 1 is an absorbing safe self-loop.
pub fn stay_chain(stay: f64) -> FiniteMdpModel {
    FiniteMdpModel::from_rows(2, 1, vec![true, true], |x, _| {
        if x == 0 {
            vec![stay, 0.0, 1.0 - stay]
        } else {
            vec![0.0, 1.0, 0.0]
        }
    })
    .expect("valid chain")
}

/// Four states, two actions, state 3 unsafe. With `N = 2`, `ε = 0.2` and
/// `Ω = {0, 1, 2}` the exact operator returns `{0, 2}`, each threshold margin
/// at least 0.15; `{0, 2}` is itself a fixed point.
pub fn four_state() -> FiniteMdpModel {
    FiniteMdpModel::from_rows(4, 2, vec![true, true, true, false], |x, u| match (x, u) {
        (0, 0) => vec![0.98, 0.0, 0.0, 0.0, 0.02],
        (0, _) => vec![0.0, 1.0, 0.0, 0.0, 0.0],
        (1, 0) => vec![0.0, 0.7, 0.0, 0.0, 0.3],
        (1, _) => vec![0.0, 0.0, 0.6, 0.4, 0.0],
        (2, 0) => vec![0.0, 0.0, 1.0, 0.0, 0.0],
        (2, _) => vec![0.0, 0.0, 0.0, 0.0, 1.0],
        (_, 0) => vec![0.0, 0.0, 0.0, 1.0, 0.0],
        _ => vec![1.0, 0.0, 0.0, 0.0, 0.0],
    })
    .expect("valid fixture")
}

/// `k` states, one action, deterministic `i → i + 1` and `k − 1 → sink`. The
/// one-step fixed-point search peels one state per iteration.
pub fn peeling_chain(k: usize) -> FiniteMdpModel {
    FiniteMdpModel::from_rows(k, 1, vec![true; k], |x, _| {
        let mut row = vec![0.0; k + 1];
        row[x + 1] = 1.0;
        row
    })
    .expect("valid chain")
}
