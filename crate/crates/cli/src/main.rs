use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sasft_cli::{load_config, stages, CliError, Command, ExperimentConfig, Regime, RunRecord};

#[derive(Parser)]
#[command(name = "sasft", version, about = "Self-augmented fine-tuning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train omega_0 on the pretraining corpus.
    Pretrain(Common),
    /// Sample the self corpus from omega_0.
    Selfgen(Common),
    /// Merge task and self data at the regime's ratio.
    Mix(Common),
    /// Fine-tune one regime with snapshots.
    Sft(Common),
    /// Taylor, drift, attenuation and correlation reports.
    Audit(Common),
    /// Mix-ratio sweep over every configured ratio and seed.
    Sweep(Common),
    /// Fabricate a self corpus from an OpenAI-compatible endpoint.
    Fetch(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment config, or the config.json of an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Fine-tuning seed (for sweeps: run this seed only).
    #[arg(long)]
    seed: Option<u64>,
    /// task-only, sa-sft or custom.
    #[arg(long)]
    regime: Option<String>,
    /// Mix ratio for --regime custom.
    #[arg(long)]
    ratio: Option<f64>,
}

fn record(command: Command, a: &Common) -> Result<RunRecord, CliError> {
    let (mut cfg, previous) = match &a.config {
        Some(p) => load_config(p)?,
        None => (ExperimentConfig::default(), None),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
        cfg.sweep.seeds = vec![s];
    }
    let regime = match (&a.regime, a.ratio) {
        (None, None) => previous.and_then(|r| r.regime),
        (None, Some(r)) => Some(Regime::Custom(r)),
        (Some(name), r) => Some(Regime::parse(name, r)?),
    };
    cfg.validate()?;
    Ok(RunRecord {
        command,
        regime,
        experiment: cfg,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Pretrain(a) => (Command::Pretrain, a),
        Cmd::Selfgen(a) => (Command::Selfgen, a),
        Cmd::Mix(a) => (Command::Mix, a),
        Cmd::Sft(a) => (Command::Sft, a),
        Cmd::Audit(a) => (Command::Audit, a),
        Cmd::Sweep(a) => (Command::Sweep, a),
        Cmd::Fetch(a) => (Command::Fetch, a),
    };
    match record(command, args).and_then(|r| stages::run(&args.out, &r)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = e.report();
            eprintln!("{}", serde_json::to_string(&report).expect("report serializes"));
            ExitCode::from(report.exit_code as u8)
        }
    }
}
