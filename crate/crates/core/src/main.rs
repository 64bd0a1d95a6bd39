//! `advdet` — train uncertainty-aware classifiers, attack them, and evaluate
//! detection under whitebox/blackbox and naive/detection-aware threat models.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};

use advdet::harness::{self, report, Experiment, ExperimentConfig, ResultCell, RunSummary};

#[derive(Parser)]
#[command(name = "advdet", version, about)]
struct Cli {
    /// Experiment configuration (TOML). Defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the experiment seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the model roster and save the weights
    Train,
    /// Generate whitebox attacks over the grid and evaluate detection
    Attack,
    /// Evaluate stored attack artifacts against the other seeds (blackbox)
    Transfer,
    /// Run the detection-evading MIM sweep
    Evade,
    /// Re-score stored artifacts on their source models
    Evaluate,
    /// Rebuild all report files from persisted cells
    Report,
    /// Train, attack, evade, transfer and report in one pass
    RunAll,
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out_dir {
        cfg.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn publish(exp: &Experiment, cells: &[ResultCell]) -> anyhow::Result<RunSummary> {
    report::publish(&exp.cfg.out_dir, cells)?;
    let summary = RunSummary::of(cells);
    println!(
        "{} cells evaluated, {} failed; reports under {}",
        summary.cells,
        summary.failures,
        exp.cfg.out_dir.display()
    );
    Ok(summary)
}

fn run(cli: Cli) -> anyhow::Result<RunSummary> {
    let cfg = load_config(&cli)?;
    let exp = Experiment::new(cfg)?;
    match cli.command {
        Command::Train => {
            exp.ensure_roster()?;
            println!(
                "roster trained; weights under {}",
                exp.cfg.out_dir.join("models").display()
            );
            Ok(RunSummary {
                cells: 0,
                failures: 0,
            })
        }
        Command::Attack => {
            let roster = exp.ensure_roster()?;
            let cells = harness::run_whitebox(&exp, &roster)?;
            publish(&exp, &cells)
        }
        Command::Transfer => {
            let roster = exp.ensure_roster()?;
            let cells = harness::run_blackbox(&exp, &roster)?;
            publish(&exp, &cells)
        }
        Command::Evade => {
            let roster = exp.ensure_roster()?;
            let cells = harness::run_detection_evading(&exp, &roster)?;
            publish(&exp, &cells)
        }
        Command::Evaluate => {
            let roster = exp.ensure_roster()?;
            let cells = harness::evaluate_artifacts(&exp, &roster)?;
            publish(&exp, &cells)
        }
        Command::Report => {
            let cells = report::read_cells(&exp.cfg.out_dir)?;
            report::persist_cells(&exp.cfg.out_dir, &cells)?;
            report::write_aggregate_file(&exp.cfg.out_dir, &cells)?;
            let summary = RunSummary::of(&cells);
            println!(
                "report rebuilt from {} persisted cells ({} failed)",
                summary.cells, summary.failures
            );
            Ok(summary)
        }
        Command::RunAll => {
            let (_cells, summary) = harness::run_all(&exp)?;
            println!(
                "{} cells evaluated, {} failed; reports under {}",
                summary.cells,
                summary.failures,
                exp.cfg.out_dir.display()
            );
            Ok(summary)
        }
    }
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(summary) if summary.ok() => ExitCode::SUCCESS,
        Ok(summary) => {
            eprintln!("{} cells failed", summary.failures);
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
