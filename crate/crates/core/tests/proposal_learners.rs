use pcis_core::env::{mc_reset, mc_step, MountainCarConfig};
use pcis_core::learners::*;
use pcis_core::*;

fn exp<'a>(s: &'a [f64], u: usize, r: f64, s2: &'a [f64], u2: Option<usize>, terminal: bool) -> Experience<'a> {
    Experience { state: s, action: u, reward: r, next_state: s2, next_action: u2, terminal, origin: DataOrigin::Grow }
}

#[test]
fn true_online_recursion_hand_worked() {
    // ψ(0) = (1, 1), ψ(1) = (1, −1); one action.
    let b = StateBox::new(vec![0.0], vec![1.0]).unwrap();
    let map = FeatureMap::fourier(b, 1, 1, false).unwrap();
    let mut l = TrueOnlineSarsa::new(map, 0.5, 0.9, 0.8, ExplorationSchedule::Constant(0.0)).unwrap();
    l.update(&exp(&[0.0], 0, 1.0, &[1.0], Some(0), false));
    assert_eq!(l.weights(), &[0.5, 0.5]);
    l.update(&exp(&[1.0], 0, 0.0, &[0.0], Some(0), false));
    for (w, e) in l.weights().iter().zip([1.274, 0.374]) {
        assert!((w - e).abs() < 1e-12);
    }
    l.update(&exp(&[0.0], 0, -1.0, &[1.0], None, true));
    for (w, e) in l.weights().iter().zip([-0.77, -0.23]) {
        assert!((w - e).abs() < 1e-12);
    }
    assert!(l.traces().iter().all(|&z| z == 0.0), "terminal step resets traces");
}

#[test]
fn zero_error_zero_traces_keeps_weights() {
    let b = StateBox::new(vec![0.0], vec![1.0]).unwrap();
    let map = FeatureMap::fourier(b, 2, 2, false).unwrap();
    let mut l = TrueOnlineSarsa::new(map, 0.3, 0.0, 0.5, ExplorationSchedule::Constant(0.0)).unwrap();
    l.update(&exp(&[0.3], 1, 0.0, &[0.6], Some(0), false));
    assert!(l.weights().iter().all(|&w| w == 0.0));
}

#[test]
fn epsilon_one_is_uniform() {
    let q = TabularQ::new(1, 3, 0.1, 0.9, ExplorationSchedule::Constant(1.0));
    let mut rng = RngStreams::new(2).stream("explore");
    let n = 10_000;
    let mut counts = [0usize; 3];
    for t in 0..n {
        counts[q.propose(&[0.0], &mut rng, t)] += 1;
    }
    let p = 1.0 / 3.0;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    for c in counts {
        assert!((c as f64 - n as f64 * p).abs() <= 3.0 * sd);
    }
}

#[test]
fn tabular_q_reaches_value_iteration_fixed_point() {
    // next[x][u], reward[x][u]
    let next = [[0usize, 1], [0, 1]];
    let reward = [[0.0, 1.0], [2.0, 0.0]];
    let gamma = 0.9;
    let mut v = [[0.0f64; 2]; 2];
    for _ in 0..2000 {
        let mut nv = v;
        for x in 0..2 {
            for u in 0..2 {
                let y = next[x][u];
                nv[x][u] = reward[x][u] + gamma * v[y][0].max(v[y][1]);
            }
        }
        v = nv;
    }
    let mut q = TabularQ::new(2, 2, 0.5, gamma, ExplorationSchedule::Constant(0.0));
    for _ in 0..3000 {
        for x in 0..2 {
            for u in 0..2 {
                q.update(&exp(&[x as f64], u, reward[x][u], &[next[x][u] as f64], None, false));
            }
        }
    }
    for x in 0..2 {
        for u in 0..2 {
            assert!((q.value(x, u) - v[x][u]).abs() < 1e-6);
        }
    }
}

#[test]
fn weights_stay_finite_at_paper_hyperparameters() {
    let cfg = MountainCarConfig::default();
    let map = FeatureMap::fourier(StateBox::mountain_car_safe_set(), 3, 5, false).unwrap();
    let schedule = ExplorationSchedule::Linear { eps_max: 0.5, eps_min: 0.01, span: 100_000.0 };
    let mut l = TrueOnlineSarsa::new(map.clone(), 1e-3, 0.99, 0.9, schedule).unwrap();
    let streams = RngStreams::new(8);
    let (mut env_rng, mut rng) = (streams.stream("env"), streams.stream("explore"));
    let mut s = mc_reset(&cfg, &mut env_rng);
    let mut u = l.propose(&s, &mut rng, 0);
    for t in 0..100_000u64 {
        let out = mc_step(s, u, &cfg);
        let end = out.terminal || out.unsafe_exit;
        let next = if end { None } else { Some(l.propose(&out.observation, &mut rng, t)) };
        l.update(&exp(&s, u, out.reward, &out.observation, next, end));
        match next {
            Some(n) => {
                s = [out.observation[0], out.observation[1]];
                u = n;
            }
            None => {
                s = mc_reset(&cfg, &mut env_rng);
                u = l.propose(&s, &mut rng, t);
            }
        }
    }
    assert!(l.weights().iter().all(|w| w.is_finite()));
}
