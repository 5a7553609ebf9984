use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pcis::commands::{self, ExportKind, ExportOptions};
use pcis::config::{CertPolicySpec, ExperimentConfig};
use pcis::{PcisError, Result};

/// Data-driven probabilistic controlled invariant sets: synthesis,
/// certification, shielded training and property checks.
#[derive(Debug, Parser)]
#[command(name = "pcis", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Compute the conservative fixed point of a dataset and write the
    /// mask, value table and action maps.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Transition dataset CSV.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Certify a tentative mask on a hold-out dataset.
    Certify {
        #[command(flatten)]
        common: Common,
        /// Tentative mask CSV (as written by `synthesize`).
        #[arg(long)]
        mask: PathBuf,
        /// Hold-out certification dataset CSV.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run shielded (or unshielded) training for every configured seed.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Run the randomized property suite against the exact oracle.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Trials per property (overrides verify.trials).
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Write one auxiliary artifact.
    Export {
        what: ExportKind,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Number of transitions for `export dataset`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Print a preset configuration as TOML.
    Config {
        #[arg(long, default_value = "mountain-car")]
        preset: String,
    },
}

/// Configuration source, output directory and field overrides.
#[derive(Debug, Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Built-in configuration: mountain-car or four-state.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Replace run.seeds (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    grow_steps: Option<usize>,
    #[arg(long)]
    cert_steps: Option<usize>,
    #[arg(long)]
    shield: Option<bool>,
    #[arg(long)]
    monotone_guard: Option<bool>,
    #[arg(long)]
    cert_policy: Option<String>,
    #[arg(long)]
    record_trajectory: Option<bool>,
    #[arg(long)]
    normalized: Option<bool>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    eta: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    penalty: Option<f64>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(name)) => ExperimentConfig::preset(name)?,
            (None, None) => unreachable!("clap requires one source"),
        };
        if !self.seeds.is_empty() {
            c.run.seeds = self.seeds.clone();
        }
        set(&mut c.run.workers, self.workers);
        set(&mut c.schedule.budget, self.budget);
        set(&mut c.schedule.grow_steps, self.grow_steps);
        set(&mut c.schedule.cert_steps, self.cert_steps);
        set(&mut c.shield.enabled, self.shield);
        set(&mut c.shield.monotone_guard, self.monotone_guard);
        set(&mut c.run.record_trajectory, self.record_trajectory);
        set(&mut c.features.normalized, self.normalized);
        set(&mut c.confidence.horizon, self.horizon);
        set(&mut c.confidence.epsilon, self.epsilon);
        set(&mut c.confidence.eta, self.eta);
        if let Some(policy) = &self.cert_policy {
            c.shield.cert_policy = toml::Value::String(policy.clone())
                .try_into::<CertPolicySpec>()
                .map_err(|_| PcisError::Config(format!("unknown certification policy `{policy}`")))?;
        }
        if self.beta.is_some() {
            c.confidence.beta = self.beta;
        }
        if self.penalty.is_some() {
            c.confidence.penalty = self.penalty;
        }
        Ok(c)
    }
}

fn set<T>(field: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *field = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Config { preset } => {
            print!("{}", ExperimentConfig::preset(&preset)?.to_toml_string());
        }
        Command::Synthesize { common, dataset } => {
            let exp = common.load()?.resolve()?;
            let r = commands::synthesize(&exp, &dataset, &common.out)?;
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
            println!(
                "synthesized |Ω| = {} of {} lattice points from {} transitions in {} iterations",
                r.mask.count(),
                r.mask.len(),
                r.transitions,
                r.iterations
            );
        }
        Command::Certify { common, mask, dataset } => {
            let exp = common.load()?.resolve()?;
            let r = commands::certify(&exp, &mask, &dataset, &common.out)?;
            println!(
                "{}: |Ω_tent| = {}, |Ω_cert| = {}, uncovered = {}",
                if r.accepted { "accepted" } else { "rejected" },
                r.tentative_size,
                r.cert_size,
                r.missing
            );
        }
        Command::Train { common } => {
            let exp = common.load()?.resolve()?;
            let r = commands::train(&exp, &common.out)?;
            for run in &r.runs {
                println!(
                    "seed {}: unsafe steps {}, goal events {}, accepted updates {}, final |Ω̂| = {}",
                    run.seed,
                    run.record.total_unsafe_steps,
                    run.record.goal_events,
                    run.record.snapshots.len(),
                    run.record.final_shield.omega_hat().count()
                );
            }
            let s = &r.summary;
            println!(
                "{} seeds: total unsafe steps {}, fully safe rate {:.3}, goal rate {:.3}, final return {:.1} ± {:.1}",
                s.seeds, s.total_unsafe_steps, s.fully_safe_rate, s.goal_rate, s.final_return_mean, s.final_return_sd
            );
        }
        Command::Verify { common, trials } => {
            let mut config = common.load()?;
            set(&mut config.verify.trials, trials);
            let exp = config.resolve()?;
            let r = commands::verify(&exp, &common.out)?;
            for row in &r.rows {
                println!(
                    "{} {}: {}/{} (rate {:.4}, threshold {:.4})",
                    if row.pass { "PASS" } else { "FAIL" },
                    row.name,
                    row.passed,
                    row.trials,
                    row.rate,
                    row.threshold
                );
            }
            if r.rows.is_empty() {
                return Err(PcisError::Property("no trials were run".into()));
            }
            if !r.passed() {
                return Err(PcisError::Property("at least one property failed".into()));
            }
        }
        Command::Export { what, common, dataset, mask, count } => {
            let exp = common.load()?.resolve()?;
            let files = commands::export(&exp, what, &ExportOptions { dataset, mask, count }, &common.out)?;
            println!("wrote {}", files.join(", "));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    // Usage errors are validation errors; 2 is reserved for property failures.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
