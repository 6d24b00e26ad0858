//! Command-line interface.
//!
//! Subcommands: `simulate`, `gather`, `train-offline`, `rca-eval`,
//! `sched-eval`, `reward-check`, `report`. Exit codes are categorized:
//! 0 success, 2 invalid input (scenario/config/arguments), 3 io,
//! 4 policy backend failure, 5 training failure, 1 anything else.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::control::{self, ControlConfig, TaskKind};
use crate::encode::Vocab;
use crate::eval::{self, ReportFormat};
use crate::policy::{
    ExternalModelConfig, HttpPolicy, PolicyHandle, ScriptedOracle, ThresholdPolicy,
    TokenSequencePolicy,
};
use crate::reward::{self, RewardConfig};
use crate::rng::XorShift64;
use crate::sim::{Scenario, Simulator, TruthSet};
use crate::train;

#[derive(Parser)]
#[command(
    name = "cotplane",
    version,
    about = "Deterministic microservice control plane: simulation, structured-reasoning policies, verifiable rewards"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand that touches a scenario or policy.
#[derive(Args, Clone)]
struct CommonArgs {
    /// Scenario file (JSON).
    #[arg(long, global = true)]
    scenario: Option<PathBuf>,
    /// Master seed for the run.
    #[arg(long, global = true, default_value_t = 17)]
    seed: u64,
    /// Policy backend.
    #[arg(long, global = true, default_value = "threshold")]
    policy: PolicyChoice,
    /// Optional JSON config overriding control/training/reward defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum PolicyChoice {
    Toy,
    Oracle,
    Threshold,
    Http,
}

#[derive(Subcommand)]
enum Command {
    /// Steps a scenario forward with no controller and prints a summary.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 100)]
        horizon: u64,
    },
    /// Runs the state-gathering phase and writes the carrier document.
    Gather {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 200)]
        ticks: u64,
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Offline training (supervised then sequence optimization) on the toy policy.
    TrainOffline {
        #[command(flatten)]
        common: CommonArgs,
        /// Synthesized dataset size.
        #[arg(long, default_value_t = 32)]
        dataset_size: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Scores a policy's root-cause answers over seeded fault cases.
    RcaEval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 50)]
        cases: usize,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Runs the allocation loop and writes the scheduling report artifacts.
    SchedEval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 500)]
        horizon: u64,
        #[arg(long, default_value_t = 10)]
        interval: u64,
        /// Persisted carrier document (from `gather`); rebuilt when absent.
        #[arg(long)]
        carrier: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Compares the reward stack against brute-force evaluators.
    RewardCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1000)]
        pairs: usize,
    },
    /// Rebuilds and renders a report from a run's saved artifacts.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        in_dir: PathBuf,
        #[arg(long, default_value = "table")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Scenario(#[from] crate::sim::ScenarioError),
    #[error("config {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("{0}")]
    Eval(#[from] eval::EvalError),
    #[error("{0}")]
    Control(#[from] control::ControlError),
    #[error("{0}")]
    Train(#[from] train::TrainError),
    #[error("{0}")]
    Policy(#[from] crate::policy::PolicyError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    InvalidInput(String),
    #[error("reward check failed: {0}")]
    RewardCheckFailed(String),
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Scenario(_) | CliError::Config { .. } | CliError::InvalidInput(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Policy(_) => 4,
            CliError::Train(_) => 5,
            CliError::Control(e) => match e {
                control::ControlError::Policy(_) => 4,
                control::ControlError::Train(_) => 5,
                _ => 2,
            },
            CliError::Eval(e) => match e {
                eval::EvalError::Io { .. } => 3,
                eval::EvalError::BadPartition { .. } => 2,
                eval::EvalError::Malformed { .. } => 2,
                eval::EvalError::Control(control::ControlError::Policy(_)) => 4,
                eval::EvalError::Control(_) => 2,
            },
            CliError::RewardCheckFailed(_) => 1,
        }
    }
}

fn io_err(path: &Path, source: std::io::Error) -> CliError {
    CliError::Io { path: path.display().to_string(), source }
}

/// Optional JSON config document layered over the built-in defaults.
#[derive(Debug, Default, serde::Deserialize)]
#[serde(default)]
struct ConfigFile {
    control: Option<ControlConfig>,
    http: Option<ExternalModelConfig>,
}

fn load_config(path: Option<&PathBuf>) -> Result<ConfigFile, CliError> {
    match path {
        None => Ok(ConfigFile::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_err(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: p.display().to_string(),
                reason: e.to_string(),
            })
        }
    }
}

fn load_scenario(common: &CommonArgs) -> Result<Scenario, CliError> {
    let path = common
        .scenario
        .as_ref()
        .ok_or_else(|| CliError::InvalidInput("--scenario is required".into()))?;
    Ok(Scenario::load(path)?)
}

fn build_policy(choice: PolicyChoice, cfg: &ConfigFile) -> PolicyHandle {
    match choice {
        PolicyChoice::Toy => PolicyHandle::Toy(TokenSequencePolicy::for_standard_vocab(256)),
        PolicyChoice::Oracle => PolicyHandle::Oracle(ScriptedOracle::standard()),
        PolicyChoice::Threshold => PolicyHandle::Threshold(ThresholdPolicy::standard()),
        PolicyChoice::Http => PolicyHandle::Http(HttpPolicy::new(
            cfg.http.clone().unwrap_or_default(),
            Vocab::standard().clone(),
        )),
    }
}

fn control_config(common: &CommonArgs, file: &ConfigFile) -> ControlConfig {
    let mut cfg = file.control.clone().unwrap_or_default();
    cfg.seed = common.seed;
    cfg.training.seed = common.seed;
    cfg
}

/// Entry point; returns the process exit code.
pub fn run() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Simulate { common, horizon } => cmd_simulate(&common, horizon),
        Command::Gather { common, ticks, k, out } => cmd_gather(&common, ticks, k, &out),
        Command::TrainOffline { common, dataset_size, out_dir } => {
            cmd_train_offline(&common, dataset_size, &out_dir)
        }
        Command::RcaEval { common, cases, out_dir } => cmd_rca_eval(&common, cases, out_dir.as_deref()),
        Command::SchedEval { common, horizon, interval, carrier, out_dir } => {
            cmd_sched_eval(&common, horizon, interval, carrier.as_deref(), &out_dir)
        }
        Command::RewardCheck { common, pairs } => cmd_reward_check(common.seed, pairs),
        Command::Report { common: _, in_dir, format, out } => cmd_report(&in_dir, &format, out.as_deref()),
    }
}

fn cmd_simulate(common: &CommonArgs, horizon: u64) -> Result<(), CliError> {
    let scenario = load_scenario(common)?;
    let sim = Simulator::new(scenario);
    let mut state = sim.initial_state();
    for _ in 0..horizon {
        state = sim.step(&state, &[]);
    }
    println!("{}", sim.scenario());
    println!(
        "tick {}  arrival {:.2} rps  served {:.2} rps  end-to-end {:.3} ms  digest {:#018x}",
        state.tick,
        state.arrival_rate,
        sim.served_rps(&state),
        sim.end_to_end_latency_ms(&state),
        state.digest()
    );
    println!("service  replicas  ready  cpu    mem    latency_ms    rps");
    for (id, svc) in &state.services {
        println!(
            "#{:<7} {:<9} {:<6} {:<6.3} {:<6.3} {:<13.3} {:.2}",
            id.0,
            svc.replica_count(),
            svc.ready_count(state.tick),
            svc.cpu_util,
            svc.mem_util,
            svc.mean_latency_ms,
            svc.rps
        );
    }
    Ok(())
}

fn cmd_gather(common: &CommonArgs, ticks: u64, k: usize, out: &Path) -> Result<(), CliError> {
    let file = load_config(common.config.as_ref())?;
    let scenario = load_scenario(common)?;
    let sim = Simulator::new(scenario);
    let mut cfg = control_config(common, &file);
    cfg.gather_ticks = ticks;
    cfg.carrier_k = k;
    let (carrier, history, _) = control::state_gathering_phase(&sim, &cfg);
    let doc = serde_json::to_string_pretty(&carrier).expect("carrier serializes");
    std::fs::write(out, doc).map_err(|e| io_err(out, e))?;
    println!(
        "gathered {} triples over {} ticks into {} cluster(s) -> {}",
        history.len(),
        ticks,
        carrier.clusters.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train_offline(common: &CommonArgs, dataset_size: usize, out_dir: &Path) -> Result<(), CliError> {
    if dataset_size < 2 {
        return Err(CliError::InvalidInput("--dataset-size must be at least 2".into()));
    }
    let file = load_config(common.config.as_ref())?;
    let scenario = load_scenario(common)?;
    let cfg = control_config(common, &file);
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let mut policy = TokenSequencePolicy::for_standard_vocab(256);
    let dataset = control::synthesize_dataset(&scenario, dataset_size, common.seed ^ 0xda7a);
    let (sft_part, gspo_part) =
        train::split_dataset(dataset, cfg.training.partition_ratio, cfg.training.seed)?;
    let sft = train::run_sft(&mut policy, &sft_part, &cfg.training)?;
    let task = train::AnnotatedTask {
        samples: &gspo_part,
        vocab: Vocab::standard(),
        cfg: cfg.training.reward,
    };
    let gspo = train::run_gspo(&mut policy, &task, &cfg.training)?;

    let ckpt = out_dir.join("checkpoint.json");
    train::save_checkpoint(&policy, &ckpt)?;
    let log = out_dir.join("train_log.csv");
    train::write_training_log(&gspo.log_rows, &log)?;
    println!(
        "sft: {} steps, final loss {:.6}",
        sft.loss_curve.len(),
        sft.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    println!(
        "gspo: {} steps, final mean reward {:.6}",
        gspo.reward_curve.len(),
        gspo.reward_curve.last().copied().unwrap_or(f64::NAN)
    );
    println!("checkpoint -> {}", ckpt.display());
    println!("training log -> {}", log.display());
    Ok(())
}

fn cmd_rca_eval(common: &CommonArgs, cases: usize, out_dir: Option<&Path>) -> Result<(), CliError> {
    if cases == 0 {
        return Err(CliError::InvalidInput("--cases must be positive".into()));
    }
    let file = load_config(common.config.as_ref())?;
    let scenario = load_scenario(common)?;
    let sim = Simulator::new(scenario);
    let cfg = control_config(common, &file);
    let handle = build_policy(common.policy, &file);
    let report = eval::run_rca_eval(&sim, handle.backend(), cases, common.seed, &cfg)?;
    print!("{}", eval::render_rca_report(&report, ReportFormat::Table));
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let path = dir.join("rca_report.csv");
        std::fs::write(&path, eval::render_rca_report(&report, ReportFormat::Csv))
            .map_err(|e| io_err(&path, e))?;
        println!("report -> {}", path.display());
    }
    Ok(())
}

fn cmd_sched_eval(
    common: &CommonArgs,
    horizon: u64,
    interval: u64,
    carrier_path: Option<&Path>,
    out_dir: &Path,
) -> Result<(), CliError> {
    let file = load_config(common.config.as_ref())?;
    let scenario = load_scenario(common)?;
    let sim = Simulator::new(scenario);
    let mut cfg = control_config(common, &file);
    cfg.task = TaskKind::Allocation;
    cfg.horizon_ticks = horizon;
    cfg.interval_ticks = interval;
    let carrier = match carrier_path {
        None => None,
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            Some(serde_json::from_str(&text).map_err(|e| CliError::Config {
                path: path.display().to_string(),
                reason: e.to_string(),
            })?)
        }
    };
    let handle = build_policy(common.policy, &file);
    let (report, run) = eval::run_sched_eval_with_carrier(&sim, handle.backend(), &cfg, carrier)?;
    eval::write_run_artifacts(out_dir, &run, &report)?;
    print!("{}", eval::render_sched_report(&report, ReportFormat::Table));
    println!("artifacts -> {}", out_dir.display());
    Ok(())
}

/// Brute-force oracle comparison over seeded random label sets; prints one
/// line per checked quantity.
fn cmd_reward_check(seed: u64, pairs: usize) -> Result<(), CliError> {
    use crate::sim::{Resource, ServiceId};
    let cfg = RewardConfig::default();
    let mut rng = XorShift64::new(seed);
    let resources = [Resource::Cpu, Resource::Disk, Resource::Memory, Resource::Network];
    let mut worst: f64 = 0.0;
    for _ in 0..pairs {
        let mut predicted = TruthSet::new();
        let mut truth = TruthSet::new();
        for _ in 0..rng.next_bounded(6) {
            predicted.insert((ServiceId(1 + rng.next_bounded(8) as u32), resources[rng.next_usize(4)]));
        }
        for _ in 0..rng.next_bounded(6) {
            truth.insert((ServiceId(1 + rng.next_bounded(8) as u32), resources[rng.next_usize(4)]));
        }
        let counts = reward::match_counts(&predicted, &truth);

        // Independent evaluation straight from set arithmetic.
        let tp = predicted.iter().filter(|p| truth.contains(p)).count() as f64;
        let fp = predicted.len() as f64 - tp;
        let fn_ = truth.iter().filter(|t| !predicted.contains(t)).count() as f64;
        let ps: std::collections::BTreeSet<u32> = predicted.iter().map(|(s, _)| s.0).collect();
        let ts: std::collections::BTreeSet<u32> = truth.iter().map(|(s, _)| s.0).collect();
        let pod_match = ps.intersection(&ts).count() as f64;
        let pod_not = ps.difference(&ts).count() as f64;

        let s_pod_ref = pod_match / (pod_match + pod_not + cfg.epsilon);
        let b2 = cfg.beta_f * cfg.beta_f;
        let f_beta_ref = ((1.0 + b2) * tp) / ((1.0 + b2) * tp + b2 * fn_ + fp + cfg.epsilon);
        let r_base_ref = cfg.alpha * s_pod_ref
            + (1.0 - cfg.alpha) * f_beta_ref
            + if tp > 0.0 { cfg.delta } else { 0.0 };
        let r_result_ref = r_base_ref - cfg.d * (fn_ - f64::from(cfg.tau_fn)).max(0.0);

        for (name, got, expect) in [
            ("s_pod", reward::s_pod(&counts, &cfg), s_pod_ref),
            ("f_beta", reward::f_beta(&counts, &cfg), f_beta_ref),
            ("r_base", reward::r_base(&counts, &cfg), r_base_ref),
            ("r_result", reward::r_result(&counts, &cfg), r_result_ref),
        ] {
            let gap = (got - expect).abs();
            worst = worst.max(gap);
            if gap > 1e-12 {
                return Err(CliError::RewardCheckFailed(format!(
                    "{name}: got {got}, brute force {expect} (gap {gap:e})"
                )));
            }
        }
    }
    println!("reward-check: {pairs} random pairs, worst absolute gap {worst:e}");
    println!("s_pod     PASS");
    println!("f_beta    PASS");
    println!("r_base    PASS");
    println!("r_result  PASS");
    Ok(())
}

fn cmd_report(in_dir: &Path, format: &str, out: Option<&Path>) -> Result<(), CliError> {
    let format: ReportFormat = format.parse().map_err(CliError::InvalidInput)?;
    let report = eval::report_from_artifacts(in_dir)?;
    let rendered = eval::render_sched_report(&report, format);
    match out {
        Some(path) => {
            std::fs::write(path, &rendered).map_err(|e| io_err(path, e))?;
            println!("report -> {}", path.display());
        }
        None => print!("{rendered}"),
    }
    Ok(())
}
