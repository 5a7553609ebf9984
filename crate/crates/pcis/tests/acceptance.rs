//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use pcis::commands::{fan_out, sample_dataset, train_seed, SeedRun, TrainSummary};
use pcis::ExperimentConfig;
use pcis_core::env::{mc_step, Environment, FiniteEnv, MountainCar, MountainCarConfig};
use pcis_core::fixtures::{four_state, peeling_chain, stay_chain};
use pcis_core::learners::{Experience, ExplorationSchedule, Learner, TabularQ, TrueOnlineSarsa};
use pcis_core::oracle::{exact_dp, exact_q_operator, maximal_pcis, random_model, sample_transitions, FiniteMdpModel, RandomModelSpec};
use pcis_core::ridge::beta_closed_form;
use pcis_core::shield::{run_shielded_training, CertPolicy, RunRecord, ShieldState, TrainingConfig};
use pcis_core::verify::{coverage_sweep, is_exact_fixed_point, log_uniform_samples};
use pcis_core::*;
use rand::Rng;

type Outcome = std::result::Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn tabular_operator(model: &FiniteMdpModel, horizon: usize, epsilon: f64) -> ConservativeOperator {
    let map = model.feature_map();
    let params = ConfidenceParams::uniform(epsilon, 0.9, horizon, map.dimension()).unwrap();
    ConservativeOperator::new(map, model.grid(), params).unwrap()
}

fn sampled(model: &FiniteMdpModel, count: usize, stream: &str) -> TransitionDataset {
    sample_transitions(model, count, &mut RngStreams::new(2024).stream(stream))
}

fn values_in_unit(result: &OperatorResult) -> bool {
    (0..=result.horizon()).all(|j| result.value_table.stage(j).iter().all(|v| (0.0..=1.0).contains(v)))
}

fn c1_coverage() -> Outcome {
    let start = Instant::now();
    let s = coverage_sweep(300, 0.9, &mut RngStreams::new(2024).stream("coverage")).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let bound = 0.9 - 3.0 * (0.9f64 * 0.1 / 300.0).sqrt();
    ensure!(s.trials == 300, "ran {} trials", s.trials);
    ensure!(s.rate() >= bound, "coverage {:.4} < {bound:.4}", s.rate());
    ensure!(s.nonempty > 0, "every synthesized set was empty");
    ensure!(elapsed < Duration::from_secs(300), "took {elapsed:?}");
    Ok(format!("coverage {}/300 = {:.4} >= {bound:.4}, {} nonempty, {:.1}s", s.contained, s.rate(), s.nonempty, elapsed.as_secs_f64()))
}

fn c2_oracle_equivalence() -> Outcome {
    let m = four_state();
    let (n, eps) = (2, 0.2);
    let omega = m.safe_mask();
    let p0 = exact_dp(&m, omega.bits(), n);
    let margin = omega.indices().map(|i| (p0[i] - (1.0 - eps)).abs()).fold(f64::INFINITY, f64::min);
    ensure!(margin >= 0.05, "threshold margin {margin} below 0.05");
    let data = sampled(&m, 100_000 * n, "equivalence");
    let r = tabular_operator(&m, n, eps).apply_exact(&omega, &data.split_stagewise(n)).map_err(|e| e.to_string())?;
    let exact = exact_q_operator(&m, omega.bits(), n, eps);
    ensure!(r.q_set.bits() == exact.as_slice(), "Q̃ = {:?}, exact = {exact:?}", r.q_set.bits());
    Ok(format!("Q̃ = exact = {exact:?} with 1e5 samples per stage, margin {margin:.2}"))
}

fn c3_exact_dp() -> Outcome {
    let p = exact_dp(&stay_chain(0.9), &[true, true], 2);
    ensure!((p[0] - 0.81).abs() <= 1e-12, "p_0 = {}", p[0]);
    let mut rng = RngStreams::new(2024).stream("idempotence");
    for trial in 0..50 {
        let m = random_model(&RandomModelSpec::default(), &mut rng);
        let n = rng.random_range(1..=3);
        let eps = rng.random_range(0.0..0.6);
        let q = LatticeMask::from_bits(maximal_pcis(&m, n, eps));
        ensure!(is_exact_fixed_point(&m, &q, n, eps), "trial {trial}: maximal PCIS is not a fixed point");
        ensure!(maximal_pcis(&m, n, eps) == q.bits(), "trial {trial}: not reproducible");
    }
    Ok(format!("p_0 = {:.15}, maximal PCIS idempotent on 50 models", p[0]))
}

fn c4_lattice_soundness() -> Outcome {
    let g = LatticeGrid::mountain_car();
    let b = g.state_box().clone();
    let tol = g.delta_x() * (1.0 + 1e-12);
    let dist = |x: &[f64]| -> f64 {
        let q = g.point(g.quantize(x));
        x.iter().zip(&q).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max)
    };
    let mut rng = RngStreams::new(2024).stream("delta-net");
    for _ in 0..10_000 {
        let x = [rng.random_range(b.lower()[0]..=b.upper()[0]), rng.random_range(b.lower()[1]..=b.upper()[1])];
        ensure!(dist(&x) <= tol, "sample {x:?} is {} from the lattice", dist(&x));
    }
    let sp = g.spacing().to_vec();
    let mut corners = 0;
    for i in 0..g.points_per_axis()[0] - 1 {
        for j in 0..g.points_per_axis()[1] - 1 {
            let base = g.point(g.flat_index(&[i, j]));
            for (a, c) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (0.5, 0.5)] {
                let x = b.clamp(&[base[0] + a * sp[0], base[1] + c * sp[1]]);
                ensure!(dist(&x) <= tol, "corner {x:?} is {} from the lattice", dist(&x));
                corners += 1;
            }
        }
    }

    // Values stay in [0, 1] for MountainCar runs with both penalty paths and for finite models.
    let mc = ExperimentConfig::mountain_car().resolve().map_err(|e| e.to_string())?;
    let data = sample_dataset(&mc, 3000, 7);
    let mut runs = 0;
    for op in [mc.operator.clone(), mc.operator.clone().with_penalty_mode(PenaltyMode::Lipschitz).with_beta_mode(BetaMode::SelfNormalized)] {
        let c = op.con_inv_dataset(&data, &LatticeMask::full(g.len())).map_err(|e| e.to_string())?;
        ensure!(values_in_unit(&c.result), "MountainCar value outside [0, 1]");
        runs += 1;
    }
    let mut rng = RngStreams::new(2024).stream("unit-values");
    for _ in 0..100 {
        let m = random_model(&RandomModelSpec::default(), &mut rng);
        let n = rng.random_range(1..=3);
        let op = tabular_operator(&m, n, rng.random_range(0.0..1.0));
        let d = sample_transitions(&m, rng.random_range(0..300) * n, &mut rng);
        let r = op.apply(&m.safe_mask(), &d.split_stagewise(n)).map_err(|e| e.to_string())?;
        ensure!(values_in_unit(&r), "finite value outside [0, 1]");
        runs += 1;
    }

    // The penalty lowers every unclipped lower bound by exactly d · L_φ · δ_x.
    let sb = StateBox::new(vec![0.0], vec![1.0]).unwrap();
    let map = FeatureMap::fourier(sb.clone(), 2, 1, false).unwrap();
    let grid = LatticeGrid::new(sb, vec![1001]).unwrap();
    let params = ConfidenceParams::uniform(0.5, 0.9, 1, map.dimension()).unwrap();
    let with = ConservativeOperator::new(map.clone(), grid.clone(), params).unwrap().with_beta_mode(BetaMode::Fixed(0.0));
    let without = with.clone().with_penalty_mode(PenaltyMode::Fixed(0.0));
    let shift = map.dimension() as f64 * map.lipschitz_bound() * grid.delta_x();
    ensure!(shift > 0.0 && (with.penalty() - shift).abs() < 1e-15, "penalty {} vs {shift}", with.penalty());
    let transitions: Vec<Transition> = (0..400)
        .map(|_| {
            let x: f64 = rng.random();
            let next = if rng.random::<f64>() < 0.6 { x / 2.0 } else { 2.0 };
            Transition::new(vec![x], rng.random_range(0..2), vec![next])
        })
        .collect();
    let omega = LatticeMask::full(grid.len());
    let a = with.apply(&omega, &[&transitions]).map_err(|e| e.to_string())?;
    let z = without.apply(&omega, &[&transitions]).map_err(|e| e.to_string())?;
    let mut compared = 0;
    for i in 0..grid.len() {
        let (va, vz) = (a.value_table.get(0, i), z.value_table.get(0, i));
        ensure!(va < vz || vz == 0.0, "penalized value {va} not below {vz} at {i}");
        if va > 0.0 && vz < 1.0 {
            ensure!((vz - va - shift).abs() < 1e-12, "shift {} != {shift} at {i}", vz - va);
            compared += 1;
        }
    }
    ensure!(compared > 100, "only {compared} unclipped points");
    Ok(format!(
        "δ-net on 1e4 samples and {corners} corner points; {runs} runs in [0, 1]; shift {shift:.4e} exact on {compared} points"
    ))
}

fn c5_certification() -> Outcome {
    let m = four_state();
    let (n, eps) = (2, 0.2);
    let op = tabular_operator(&m, n, eps).with_penalty_mode(PenaltyMode::Fixed(0.0));
    let tent = LatticeMask::from_bits(vec![true, false, true, false]);
    ensure!(is_exact_fixed_point(&m, &tent, n, eps), "fixture is not an exact PCIS");
    let ample = TransitionDataset::from_transitions(DataOrigin::Certification, sampled(&m, 200_000, "cert").transitions().to_vec());
    ensure!(op.certify(&ample, &tent).map_err(|e| e.to_string())?.accepted, "rejected with ample data");
    let empty = TransitionDataset::new(DataOrigin::Certification);
    ensure!(!op.certify(&empty, &tent).map_err(|e| e.to_string())?.accepted, "accepted with empty data");

    // Accepted and inclusion event ⇒ Ω_tent is an exact fixed point.
    let mut rng = RngStreams::new(2024).stream("certification");
    let (mut accepted_nonempty, mut checked) = (0, 0);
    for trial in 0..300 {
        let model = random_model(&RandomModelSpec::default(), &mut rng);
        let n = rng.random_range(1..=3);
        let eps = rng.random_range(0.05..0.5);
        let op = tabular_operator(&model, n, eps);
        let grow = sample_transitions(&model, log_uniform_samples(&mut rng) * n, &mut rng);
        let cert = sample_transitions(&model, log_uniform_samples(&mut rng) * n, &mut rng);
        let tent = op.con_inv_dataset(&grow, &model.safe_mask()).map_err(|e| e.to_string())?.fixed_point;
        let out = op.certify(&cert, &tent).map_err(|e| e.to_string())?;
        let exact = exact_q_operator(&model, tent.bits(), n, eps);
        let inclusion = out.cert_set.bits().iter().zip(&exact).all(|(a, b)| !a || *b);
        if out.accepted && inclusion {
            checked += 1;
            accepted_nonempty += usize::from(tent.count() > 0);
            ensure!(exact == tent.bits(), "trial {trial}: accepted Ω_tent is not an exact fixed point");
        }
    }
    ensure!(accepted_nonempty > 0, "no nonempty accepted set; the check is vacuous");
    Ok(format!("accept/reject on the fixture; {checked} accepted cases ({accepted_nonempty} nonempty) are exact fixed points"))
}

fn c6_con_inv() -> Outcome {
    let mut rng = RngStreams::new(2024).stream("con-inv");
    let mut models = 0;
    let check = |op: &ConservativeOperator, data: &TransitionDataset, safe: &LatticeMask| -> std::result::Result<usize, String> {
        let prepared = op.prepare_dataset(data).map_err(|e| e.to_string())?;
        let mut omega = safe.clone();
        let mut steps = 0;
        loop {
            let r = op.evaluate(&prepared, &omega).map_err(|e| e.to_string())?;
            steps += 1;
            ensure!(r.q_set.is_subset_of(&omega), "iterate grew");
            if r.q_set == omega {
                break;
            }
            omega = r.q_set;
        }
        let c = op.con_inv(&prepared, safe).map_err(|e| e.to_string())?;
        ensure!(c.fixed_point == omega && c.iterations == steps, "con_inv disagrees with the manual iteration");
        ensure!(c.cardinalities.windows(2).all(|w| w[1] < w[0]), "cardinalities {:?} not decreasing", c.cardinalities);
        ensure!(c.iterations <= safe.len() + 1, "{} iterations on {} points", c.iterations, safe.len());
        let again = op.evaluate(&prepared, &c.fixed_point).map_err(|e| e.to_string())?;
        ensure!(again.q_set == c.fixed_point, "re-application moved the fixed point");
        Ok(c.iterations)
    };
    for _ in 0..200 {
        let m = random_model(&RandomModelSpec::default(), &mut rng);
        let n = rng.random_range(1..=3);
        let op = tabular_operator(&m, n, rng.random_range(0.0..0.6));
        let data = sample_transitions(&m, rng.random_range(0..400) * n, &mut rng);
        check(&op, &data, &m.safe_mask())?;
        models += 1;
    }
    let k = 8;
    let chain = peeling_chain(k);
    let iters = check(&tabular_operator(&chain, 1, 0.3), &sampled(&chain, 50_000, "peel"), &chain.safe_mask())?;
    ensure!(iters == k + 1, "peeling chain took {iters} iterations");
    Ok(format!("{models} random models and the {k}-state peeling chain ({iters} = |lattice| + 1 iterations)"))
}

fn c7_mountain_car_golden() -> Outcome {
    let c = MountainCarConfig::default();
    let out = mc_step([-0.5, 0.0], 2, &c);
    let v = 0.0 + 1e-3 * (2.0 - 1.0) - 2.5e-3 * (3.0f64 * -0.5).cos();
    let x = -0.5 + v;
    ensure!((out.observation[1] - v).abs() <= 1e-12 && (out.observation[0] - x).abs() <= 1e-12, "mc_step gave {:?}", out.observation);
    let g = LatticeGrid::mountain_car();
    let (dx, dv) = (format!("{:.2e}", g.spacing()[0]), format!("{:.2e}", g.spacing()[1]));
    ensure!(dx == "1.06e-2", "position spacing {dx}");
    ensure!(dv == "4.83e-3", "velocity spacing {dv}");
    Ok(format!("(x′, v′) = ({x:.15}, {v:.15}); spacings {dx} and {dv}"))
}

fn c8_safety_ordering() -> Outcome {
    let start = Instant::now();
    let base = ExperimentConfig::mountain_car();
    ensure!(base.run.seeds.len() >= 10 && base.schedule.budget == 4000, "configuration drifted");
    let mut summaries = Vec::new();
    for shielded in [false, true] {
        let mut config = base.clone();
        config.shield.enabled = shielded;
        let exp = config.resolve().map_err(|e| e.to_string())?;
        let runs: Vec<SeedRun> = fan_out(&exp.config.run.seeds, 0, |seed| train_seed(&exp, seed)).map_err(|e| e.to_string())?;
        ensure!(runs.iter().all(|r| r.record.executed_steps == 4000), "a run stopped short of 4000 steps");
        summaries.push(TrainSummary::from_runs(&runs));
    }
    let (off, on) = (&summaries[0], &summaries[1]);
    let elapsed = start.elapsed();
    let detail = format!(
        "unsafe steps {} shielded vs {} unshielded; fully safe {:.1} vs {:.1} over {} seeds; {:.0}s",
        on.total_unsafe_steps, off.total_unsafe_steps, on.fully_safe_rate, off.fully_safe_rate, on.seeds, elapsed.as_secs_f64()
    );
    ensure!(on.total_unsafe_steps < off.total_unsafe_steps, "{detail}");
    ensure!(on.fully_safe_rate - off.fully_safe_rate >= 0.3 - 1e-12, "{detail}");
    ensure!(elapsed < Duration::from_secs(900), "{detail}");
    Ok(detail)
}

fn c9_statistics() -> Outcome {
    let mut rng = RngStreams::new(2024).stream("ridge");
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let d = rng.random_range(1..=40);
        let n = rng.random_range(1..=120);
        let lambda = rng.random_range(0.1..3.0);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let targets: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let fitted = RidgeStage::new(d, lambda).map_err(|e| e.to_string())?.fit(&rows, &targets).map_err(|e| e.to_string())?;
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        let v = x.transpose() * &x + DMatrix::identity(d, d) * lambda;
        let dense = v.lu().solve(&(x.transpose() * DVector::from_column_slice(&targets))).ok_or("singular dense system")?;
        for k in 0..d {
            let err = (fitted.theta_hat()[k] - dense[k]).abs();
            worst = worst.max(err);
            ensure!(err <= 1e-8, "trial {trial} coordinate {k}: error {err:e}");
        }
    }
    for d in [1, 3, 40] {
        for lambda in [0.5, 1.0, 2.0] {
            for k in [0usize, 1, 5, 100] {
                let mut e = vec![0.0; d];
                e[d - 1] = 1.0;
                let fitted = RidgeStage::new(d, lambda).unwrap().fit(&vec![e.clone(); k], &vec![1.0; k]).unwrap();
                let sigma = fitted.sigma(&e).unwrap();
                ensure!((sigma - (1.0 / (lambda + k as f64)).sqrt()).abs() < 1e-12, "σ = {sigma} for λ = {lambda}, k = {k}");
            }
        }
    }
    for d in [1, 4, 108] {
        let s = (d as f64).sqrt();
        let by_t: Vec<f64> = [0usize, 1, 10, 100, 10_000].iter().map(|&t| beta_closed_form(0.5, s, 0.05, t, 1.0, d).unwrap()).collect();
        ensure!(by_t.windows(2).all(|w| w[1] > w[0]), "β not increasing in T: {by_t:?}");
        let by_delta: Vec<f64> = [1e-6, 1e-3, 0.05, 0.5].iter().map(|&x| beta_closed_form(0.5, s, x, 100, 1.0, d).unwrap()).collect();
        ensure!(by_delta.windows(2).all(|w| w[1] < w[0]), "β not decreasing in δ: {by_delta:?}");
    }
    Ok(format!("ridge vs dense solve max error {worst:.1e}; σ closed form; β monotone in T, antitone in δ"))
}

/// Records what a learner is handed.
struct Spy<L> {
    inner: L,
    seen: Vec<(Vec<f64>, usize, Vec<f64>, DataOrigin)>,
}

impl<L: Learner> Learner for Spy<L> {
    fn action_count(&self) -> usize {
        self.inner.action_count()
    }
    fn action_values(&self, state: &[f64]) -> Vec<f64> {
        self.inner.action_values(state)
    }
    fn exploration(&self) -> &ExplorationSchedule {
        self.inner.exploration()
    }
    fn begin_episode(&mut self) {
        self.inner.begin_episode();
    }
    fn update(&mut self, e: &Experience<'_>) {
        self.seen.push((e.state.to_vec(), e.action, e.next_state.to_vec(), e.origin));
        self.inner.update(e);
    }
}

fn separated<L>(spy: &Spy<L>, r: &RunRecord) -> std::result::Result<(), String> {
    ensure!(r.cert_transitions > 0, "no certification data was collected");
    ensure!(r.grow.origin() == DataOrigin::Grow, "grow dataset tagged {:?}", r.grow.origin());
    ensure!(r.grow.len() == r.executed_steps, "grow has {} transitions for {} executed steps", r.grow.len(), r.executed_steps);
    ensure!(spy.seen.len() == r.grow.len(), "learner saw {} updates for {} grow transitions", spy.seen.len(), r.grow.len());
    for ((s, u, s2, origin), t) in spy.seen.iter().zip(r.grow.transitions()) {
        ensure!(*origin == DataOrigin::Grow, "learner update tagged {origin:?}");
        ensure!((s, *u, s2) == (&t.state, t.action, &t.next_state), "learner update differs from the executed transition");
    }
    Ok(())
}

fn c10_separation() -> Outcome {
    let m = four_state();
    let streams = RngStreams::new(3);
    let mut env = FiniteEnv::new(m.clone(), streams.stream("env")).with_rewards(vec![0.0; 8]);
    let mut spy = Spy { inner: TabularQ::new(4, 2, 0.1, 0.9, ExplorationSchedule::Constant(0.5)), seen: Vec::new() };
    let shield = ShieldState::new(m.safe_mask(), ActionMaps::permissive(1, 4, 2)).unwrap();
    let config = TrainingConfig { grow_steps: 100, cert_steps: 500, budget: 1000, monotone_guard: false, ..TrainingConfig::default() };
    let r = run_shielded_training(&mut env, &mut spy, shield, &tabular_operator(&m, 1, 0.25), &streams, &config).map_err(|e| e.to_string())?;
    separated(&spy, &r)?;
    let finite = (spy.seen.len(), r.cert_transitions);

    let exp = ExperimentConfig::mountain_car().resolve().map_err(|e| e.to_string())?;
    let streams = RngStreams::new(5);
    let mut env = MountainCar::new(exp.mountain_car(), streams.stream("env"));
    let sarsa = TrueOnlineSarsa::new(exp.map.clone(), 1e-3, 0.99, 0.9, exp.exploration).map_err(|e| e.to_string())?;
    let mut spy = Spy { inner: sarsa, seen: Vec::new() };
    let config = TrainingConfig { budget: 1200, cert_policy: CertPolicy::Uniform, ..exp.training.clone() };
    let r = run_shielded_training(&mut env, &mut spy, exp.seed_shield().unwrap(), &exp.operator, &streams, &config)
        .map_err(|e| e.to_string())?;
    separated(&spy, &r)?;
    ensure!(env.action_count() == 3, "unexpected action count");
    Ok(format!(
        "four-state: {} grow updates, {} cert transitions withheld; MountainCar: {} grow updates, {} withheld",
        finite.0,
        finite.1,
        spy.seen.len(),
        r.cert_transitions
    ))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("conservatism coverage", c1_coverage),
        ("oracle equivalence with ample data", c2_oracle_equivalence),
        ("exact DP values", c3_exact_dp),
        ("lattice soundness", c4_lattice_soundness),
        ("certification logic", c5_certification),
        ("ConInv termination and monotonicity", c6_con_inv),
        ("MountainCar golden values", c7_mountain_car_golden),
        ("qualitative safety ordering", c8_safety_ordering),
        ("statistical engine", c9_statistics),
        ("data separation", c10_separation),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", k + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
