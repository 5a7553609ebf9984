//! The harness commands. Each writes its artifacts plus a `manifest.toml`
//! into an output directory and returns a summary for the caller to print.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use pcis_core::env::{mc_step, FiniteEnv, MountainCar};
use pcis_core::learners::{TabularQ, TrueOnlineSarsa};
use pcis_core::oracle::{maximal_pcis, random_model, sample_transitions, RandomModelSpec};
use pcis_core::shield::{run_shielded_training, RunRecord};
use pcis_core::verify::{coverage_sweep, is_exact_fixed_point, log_uniform_samples};
use pcis_core::{
    split_stagewise, ConfidenceParams, ConservativeOperator, DataOrigin, LatticeMask, RngStreams, Transition,
    TransitionDataset,
};
use rand::Rng;
use serde::Serialize;

use crate::config::{Experiment, LearnerKind};
use crate::error::{config_err, PcisError, Result};
use crate::formats::{self, Provenance, Table, TableKind};

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    schema_version: u32,
    config_hash: &'a str,
    seed: u64,
    files: Vec<String>,
    config: &'a crate::config::ExperimentConfig,
}

/// Collects written files so the manifest can list them.
struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| PcisError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn write(&mut self, name: &str, table: &Table) -> Result<PathBuf> {
        let path = self.dir.join(name);
        table.write(&path)?;
        self.files.push(name.to_string());
        Ok(path)
    }

    fn finish(self, command: &str, exp: &Experiment, seed: u64) -> Result<Vec<String>> {
        let manifest = Manifest {
            command,
            schema_version: formats::SCHEMA_VERSION,
            config_hash: &exp.hash,
            seed,
            files: self.files.clone(),
            config: &exp.config,
        };
        let text = toml::to_string(&manifest).expect("manifests always serialize");
        let path = self.dir.join("manifest.toml");
        std::fs::write(&path, text).map_err(|e| PcisError::io(&path, e))?;
        Ok(self.files)
    }
}

fn provenance(exp: &Experiment, seed: u64) -> Provenance {
    Provenance { config_hash: exp.hash.clone(), seed }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisReport {
    pub transitions: usize,
    pub mask: LatticeMask,
    pub iterations: usize,
    pub cardinalities: Vec<usize>,
    pub warnings: Vec<String>,
    pub files: Vec<String>,
}

/// Tentative shield construction from one dataset file.
pub fn synthesize(exp: &Experiment, dataset: &Path, out: &Path) -> Result<SynthesisReport> {
    let data = formats::read_dataset(dataset, exp.state_dim(), exp.action_count(), DataOrigin::Offline)?;
    let mut warnings = Vec::new();
    if data.is_empty() {
        warnings.push(format!("{}: dataset is empty; the synthesized set is empty", dataset.display()));
    }
    let outcome = exp.operator.con_inv_dataset(&data, &exp.safe_mask())?;
    let prov = provenance(exp, exp.first_seed());
    let mut o = Output::new(out)?;
    o.write("mask.csv", &formats::mask_table(&exp.grid, &outcome.fixed_point, &prov))?;
    o.write("values.csv", &formats::values_table(&exp.grid, &outcome.result.value_table, &prov))?;
    o.write("action_maps.csv", &formats::action_maps_table(&outcome.result.action_maps, &prov))?;
    let files = o.finish("synthesize", exp, prov.seed)?;
    Ok(SynthesisReport {
        transitions: data.len(),
        mask: outcome.fixed_point,
        iterations: outcome.iterations,
        cardinalities: outcome.cardinalities,
        warnings,
        files,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CertifyReport {
    pub accepted: bool,
    pub tentative_size: usize,
    pub cert_size: usize,
    /// `|Ω_tent \ Ω_cert|`.
    pub missing: usize,
    pub files: Vec<String>,
}

/// Hold-out certification of a tentative mask file.
pub fn certify(exp: &Experiment, mask: &Path, dataset: &Path, out: &Path) -> Result<CertifyReport> {
    let tentative = formats::read_mask(mask, &exp.grid)?;
    let data = formats::read_dataset(dataset, exp.state_dim(), exp.action_count(), DataOrigin::Certification)?;
    let outcome = exp.operator.certify(&data, &tentative)?;
    let missing = tentative.indices().filter(|&i| !outcome.cert_set.contains(i)).count();
    let prov = provenance(exp, exp.first_seed());
    let mut verdict = Table::new(
        TableKind::Verdict,
        &prov,
        ["accepted", "tentative_size", "cert_size", "missing", "transitions"].map(String::from).to_vec(),
    );
    verdict.push(vec![
        u8::from(outcome.accepted).to_string(),
        tentative.count().to_string(),
        outcome.cert_set.count().to_string(),
        missing.to_string(),
        data.len().to_string(),
    ]);
    let mut o = Output::new(out)?;
    o.write("verdict.csv", &verdict)?;
    o.write("cert_mask.csv", &formats::mask_table(&exp.grid, &outcome.cert_set, &prov))?;
    o.write("cert_action_maps.csv", &formats::action_maps_table(outcome.cert_action_maps(), &prov))?;
    let files = o.finish("certify", exp, prov.seed)?;
    Ok(CertifyReport {
        accepted: outcome.accepted,
        tentative_size: tentative.count(),
        cert_size: outcome.cert_set.count(),
        missing,
        files,
    })
}

/// One seed's training run and the learner's final parameters.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub record: RunRecord,
    pub weights: Vec<f64>,
}

/// Trains one seed; all randomness comes from that seed's named streams.
pub fn train_seed(exp: &Experiment, seed: u64) -> Result<SeedRun> {
    let streams = RngStreams::new(seed);
    let l = &exp.config.learner;
    let shield = exp.seed_shield()?;
    let (record, weights) = match (&exp.model, l.kind) {
        (None, LearnerKind::Sarsa) => {
            let mut env = MountainCar::new(exp.mountain_car(), streams.stream("env"));
            let mut learner = TrueOnlineSarsa::new(exp.map.clone(), l.alpha, l.gamma, l.lambda.unwrap_or(0.0), exp.exploration)?;
            let r = run_shielded_training(&mut env, &mut learner, shield, &exp.operator, &streams, &exp.training)?;
            (r, learner.weights().to_vec())
        }
        (Some(model), LearnerKind::Sarsa) => {
            let mut env = FiniteEnv::new(model.clone(), streams.stream("env"));
            let mut learner = TrueOnlineSarsa::new(exp.map.clone(), l.alpha, l.gamma, l.lambda.unwrap_or(0.0), exp.exploration)?;
            let r = run_shielded_training(&mut env, &mut learner, shield, &exp.operator, &streams, &exp.training)?;
            (r, learner.weights().to_vec())
        }
        (Some(model), LearnerKind::TabularQ) => {
            let mut env = FiniteEnv::new(model.clone(), streams.stream("env"));
            let mut learner = TabularQ::new(model.state_count(), model.action_count(), l.alpha, l.gamma, exp.exploration);
            let r = run_shielded_training(&mut env, &mut learner, shield, &exp.operator, &streams, &exp.training)?;
            (r, learner.values().to_vec())
        }
        (None, LearnerKind::TabularQ) => return Err(config_err("tabular-q needs a finite environment")),
    };
    Ok(SeedRun { seed, record, weights })
}

/// Runs `job` on every seed over at most `workers` threads (0 picks the
/// available parallelism). Results keep the seed order.
pub fn fan_out<T: Send>(seeds: &[u64], workers: usize, job: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    let workers = match workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    }
    .min(seeds.len())
    .max(1);
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                if k >= seeds.len() {
                    break;
                }
                let result = job(seeds[k]);
                slots.lock().expect("no worker panics while holding the lock")[k] = Some(result);
            });
        }
    });
    slots
        .into_inner()
        .expect("workers joined")
        .into_iter()
        .map(|r| r.expect("every seed ran"))
        .collect()
}

/// Mean and sample standard deviation; the deviation of one value is 0.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub seeds: usize,
    pub total_unsafe_steps: usize,
    pub fully_safe_rate: f64,
    pub goal_rate: f64,
    pub final_return_mean: f64,
    pub final_return_sd: f64,
}

impl TrainSummary {
    pub fn from_runs(runs: &[SeedRun]) -> Self {
        let n = runs.len() as f64;
        let finals: Vec<f64> = runs.iter().map(|r| r.record.intervals.last().map_or(0.0, |i| i.cumulative_return)).collect();
        let (final_return_mean, final_return_sd) = mean_sd(&finals);
        Self {
            seeds: runs.len(),
            total_unsafe_steps: runs.iter().map(|r| r.record.total_unsafe_steps).sum(),
            fully_safe_rate: runs.iter().filter(|r| r.record.fully_safe()).count() as f64 / n,
            goal_rate: runs.iter().filter(|r| r.record.goal_reached()).count() as f64 / n,
            final_return_mean,
            final_return_sd,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub runs: Vec<SeedRun>,
    pub summary: TrainSummary,
    pub files: Vec<String>,
}

/// Every configured seed, then per-seed records, snapshots, weights and the
/// aggregate summaries.
pub fn train(exp: &Experiment, out: &Path) -> Result<TrainReport> {
    let runs = fan_out(&exp.config.run.seeds, exp.config.run.workers, |seed| train_seed(exp, seed))?;
    let mut o = Output::new(out)?;
    for run in &runs {
        let prov = provenance(exp, run.seed);
        let dir = format!("seed-{}", run.seed);
        o.write(&format!("{dir}/run.csv"), &formats::run_record_table(&run.record, &prov))?;
        o.write(&format!("{dir}/weights.csv"), &formats::weights_table(&run.weights, exp.action_count(), &prov))?;
        for (interval, mask) in &run.record.snapshots {
            let table = formats::mask_table(&exp.grid, mask, &prov).with_meta("interval", interval);
            o.write(&format!("{dir}/shield-{interval:03}.csv"), &table)?;
        }
        if exp.training.record_trajectory {
            o.write(&format!("{dir}/trajectory.csv"), &formats::trajectory_table(&run.record.trajectory, exp.state_dim(), &prov))?;
        }
    }

    let prov = provenance(exp, exp.first_seed());
    let intervals = runs.iter().map(|r| r.record.intervals.len()).max().unwrap_or(0);
    let mut per_interval = Table::new(
        TableKind::IntervalSummary,
        &prov,
        [
            "interval",
            "runs",
            "interval_return_mean",
            "interval_return_sd",
            "cumulative_return_mean",
            "cumulative_return_sd",
            "unsafe_steps",
            "accepted_runs",
        ]
        .map(String::from)
        .to_vec(),
    );
    for k in 0..intervals {
        let rows: Vec<_> = runs.iter().filter_map(|r| r.record.intervals.get(k)).collect();
        let (im, isd) = mean_sd(&rows.iter().map(|r| r.interval_return).collect::<Vec<_>>());
        let (cm, csd) = mean_sd(&rows.iter().map(|r| r.cumulative_return).collect::<Vec<_>>());
        per_interval.push(vec![
            k.to_string(),
            rows.len().to_string(),
            im.to_string(),
            isd.to_string(),
            cm.to_string(),
            csd.to_string(),
            rows.iter().map(|r| r.unsafe_steps).sum::<usize>().to_string(),
            rows.iter().filter(|r| r.accepted).count().to_string(),
        ]);
    }
    o.write("summary_intervals.csv", &per_interval)?;

    let summary = TrainSummary::from_runs(&runs);
    let mut table = Table::new(
        TableKind::Summary,
        &prov,
        ["seeds", "shielded", "total_unsafe_steps", "fully_safe_rate", "goal_rate", "final_return_mean", "final_return_sd"]
            .map(String::from)
            .to_vec(),
    );
    table.push(vec![
        summary.seeds.to_string(),
        u8::from(exp.training.shielded).to_string(),
        summary.total_unsafe_steps.to_string(),
        summary.fully_safe_rate.to_string(),
        summary.goal_rate.to_string(),
        summary.final_return_mean.to_string(),
        summary.final_return_sd.to_string(),
    ]);
    o.write("summary.csv", &table)?;
    let files = o.finish("train", exp, prov.seed)?;
    Ok(TrainReport { runs, summary, files })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyRow {
    pub name: &'static str,
    pub trials: usize,
    pub passed: usize,
    pub rate: f64,
    /// Smallest acceptable pass rate.
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub rows: Vec<PropertyRow>,
    pub files: Vec<String>,
}

impl VerifyReport {
    /// An empty report never passes.
    pub fn passed(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.pass)
    }
}

/// Randomized property suite on finite linear MDPs against the exact oracle.
pub fn verify(exp: &Experiment, out: &Path) -> Result<VerifyReport> {
    let trials = exp.config.verify.trials;
    let eta = exp.config.verify.eta;
    let seed = exp.first_seed();
    let streams = RngStreams::new(seed);
    let mut rows = Vec::new();
    if trials > 0 {
        let summary = coverage_sweep(trials, eta, &mut streams.stream("verify-coverage"))?;
        let threshold = summary.lower_acceptance();
        rows.push(PropertyRow {
            name: "coverage",
            trials,
            passed: summary.contained,
            rate: summary.rate(),
            threshold,
            pass: summary.rate() >= threshold,
        });

        let spec = RandomModelSpec::default();
        let mut rng = streams.stream("verify-oracle");
        let mut idempotent = 0;
        for _ in 0..trials {
            let model = random_model(&spec, &mut rng);
            let n = rng.random_range(1..=3);
            let eps = rng.random_range(0.05..0.5);
            let m = LatticeMask::from_bits(maximal_pcis(&model, n, eps));
            idempotent += usize::from(is_exact_fixed_point(&model, &m, n, eps));
        }
        rows.push(exact_row("oracle-idempotence", trials, idempotent));

        let mut rng = streams.stream("verify-con-inv");
        let mut sound = 0;
        for _ in 0..trials {
            let model = random_model(&spec, &mut rng);
            let n = rng.random_range(1..=3);
            let eps = rng.random_range(0.05..0.5);
            let per_stage = log_uniform_samples(&mut rng);
            let map = model.feature_map();
            let params = ConfidenceParams::uniform(eps, eta, n, map.dimension())?;
            let op = ConservativeOperator::new(map, model.grid(), params)?;
            let data = sample_transitions(&model, per_stage * n, &mut rng);
            let prepared = op.prepare(&split_stagewise(data.transitions(), n))?;
            let c = op.con_inv(&prepared, &model.safe_mask())?;
            let again = op.evaluate(&prepared, &c.fixed_point)?;
            let nonincreasing = c.cardinalities.windows(2).all(|w| w[1] <= w[0]);
            let bounded = c.iterations <= model.grid().len() + 1;
            let in_unit = (0..=n).all(|j| c.result.value_table.stage(j).iter().all(|v| (0.0..=1.0).contains(v)));
            sound += usize::from(nonincreasing && bounded && in_unit && again.q_set == c.fixed_point);
        }
        rows.push(exact_row("con-inv", trials, sound));
    }

    let prov = provenance(exp, seed);
    let mut table = Table::new(
        TableKind::VerifyReport,
        &prov,
        ["property", "trials", "passed", "rate", "threshold", "pass"].map(String::from).to_vec(),
    )
    .with_meta("eta", eta);
    for r in &rows {
        table.push(vec![
            r.name.to_string(),
            r.trials.to_string(),
            r.passed.to_string(),
            r.rate.to_string(),
            r.threshold.to_string(),
            u8::from(r.pass).to_string(),
        ]);
    }
    let mut o = Output::new(out)?;
    o.write("verify_report.csv", &table)?;
    let files = o.finish("verify", exp, seed)?;
    Ok(VerifyReport { rows, files })
}

fn exact_row(name: &'static str, trials: usize, passed: usize) -> PropertyRow {
    PropertyRow { name, trials, passed, rate: passed as f64 / trials as f64, threshold: 1.0, pass: passed == trials }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ExportKind {
    /// One operator evaluation on a dataset (per stage: index, value, action bitmask).
    Operator,
    /// The finite model's transition kernel.
    Kernel,
    /// Sampled `(x, u, x′)` transitions from the configured environment.
    Dataset,
    /// The lattice with the configured safe mask.
    Lattice,
    /// The configured initial shield set.
    SeedShield,
}

#[derive(Debug, Clone, Default)]
pub struct ExportOptions {
    pub dataset: Option<PathBuf>,
    pub mask: Option<PathBuf>,
    pub count: Option<usize>,
}

/// Writes one export artifact and returns its file name.
pub fn export(exp: &Experiment, kind: ExportKind, options: &ExportOptions, out: &Path) -> Result<Vec<String>> {
    let seed = exp.first_seed();
    let prov = provenance(exp, seed);
    let mut o = Output::new(out)?;
    match kind {
        ExportKind::Operator => {
            let path = options.dataset.as_ref().ok_or_else(|| config_err("export operator needs --dataset"))?;
            let data = formats::read_dataset(path, exp.state_dim(), exp.action_count(), DataOrigin::Offline)?;
            let omega = match &options.mask {
                Some(m) => formats::read_mask(m, &exp.grid)?,
                None => exp.safe_mask(),
            };
            let result = exp.operator.evaluate(&exp.operator.prepare_dataset(&data)?, &omega)?;
            o.write("operator.csv", &formats::operator_table(&result, &prov))?;
        }
        ExportKind::Kernel => {
            let model = exp.model.as_ref().ok_or_else(|| config_err("export kernel needs a finite environment"))?;
            o.write("kernel.csv", &formats::kernel_table(model, &prov))?;
        }
        ExportKind::Dataset => {
            let count = options.count.ok_or_else(|| config_err("export dataset needs --count"))?;
            let data = sample_dataset(exp, count, seed);
            o.write("dataset.csv", &formats::dataset_table(&data, exp.state_dim(), &prov))?;
        }
        ExportKind::Lattice => {
            o.write("lattice.csv", &formats::mask_table(&exp.grid, &exp.safe_mask(), &prov))?;
        }
        ExportKind::SeedShield => {
            let shield = exp.seed_shield()?;
            o.write("seed_shield.csv", &formats::mask_table(&exp.grid, shield.omega_hat(), &prov))?;
            o.write("seed_action_maps.csv", &formats::action_maps_table(shield.action_maps(), &prov))?;
        }
    }
    o.finish("export", exp, seed)
}

/// Offline one-step samples: uniform safe states and uniform actions for
/// finite models, uniform states of the safe box for MountainCar.
pub fn sample_dataset(exp: &Experiment, count: usize, seed: u64) -> TransitionDataset {
    let mut rng = RngStreams::new(seed).stream("export-dataset");
    match &exp.model {
        Some(model) => sample_transitions(model, count, &mut rng),
        None => {
            let mc = exp.mountain_car();
            let b = &mc.safe_box;
            let mut data = TransitionDataset::new(DataOrigin::Offline);
            for _ in 0..count {
                let x = [rng.random_range(b.lower()[0]..=b.upper()[0]), rng.random_range(b.lower()[1]..=b.upper()[1])];
                let u = rng.random_range(0..3);
                let next = mc_step(x, u, &mc).observation;
                data.push(Transition::new(x.to_vec(), u, next));
            }
            data
        }
    }
}
