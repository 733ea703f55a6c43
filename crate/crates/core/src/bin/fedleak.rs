use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedleak::dataset::{self, DatasetProfile};
use fedleak::harness::{emit, run_scenario, ExperimentConfig, Format, Scenario};
use fedleak::{Error, Result};

/// Cross-silo federated learning leakage simulator.
#[derive(Parser)]
#[command(name = "fedleak", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// json or csv.
    #[arg(long, default_value = "json")]
    format: String,
    /// Dotted key=value applied over the config file; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a federation and report model quality.
    BaselineTrain(RunArgs),
    /// Gradient zero-pattern membership attack, no mitigations.
    NgmaEval(RunArgs),
    /// Activation-based membership attack on an overfit trunk.
    TrunkActivationEval(RunArgs),
    /// Leave-one-partner-out attribution.
    N1Scenario(RunArgs),
    DropoutSweep(RunArgs),
    BatchSweep(RunArgs),
    CompressionSweep(RunArgs),
    DpSweep(RunArgs),
    /// Generate a synthetic dataset.
    GenData {
        /// Dataset profile (TOML).
        #[arg(long)]
        profile: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run_scenario_cmd(scenario: Scenario, args: RunArgs) -> Result<()> {
    let format: Format = args.format.parse()?;
    let cfg = ExperimentConfig::load(&args.config, &args.overrides)?;
    let report = run_scenario(scenario, &cfg, args.seed, Some(&args.out))?;
    for p in emit(&report, format, &args.out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn gen_data(profile: PathBuf, seed: u64, out: PathBuf) -> Result<()> {
    let text = std::fs::read_to_string(&profile)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", profile.display())))?;
    let profile: DatasetProfile = toml::from_str(&text).map_err(|e| Error::config(format!("profile: {e}")))?;
    let data = dataset::generate(&profile, seed)?;
    dataset::save(&data, &out)?;
    println!("{}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::BaselineTrain(a) => run_scenario_cmd(Scenario::BaselineTrain, a),
        Command::NgmaEval(a) => run_scenario_cmd(Scenario::NgmaEval, a),
        Command::TrunkActivationEval(a) => run_scenario_cmd(Scenario::TrunkActivationEval, a),
        Command::N1Scenario(a) => run_scenario_cmd(Scenario::N1Scenario, a),
        Command::DropoutSweep(a) => run_scenario_cmd(Scenario::DropoutSweep, a),
        Command::BatchSweep(a) => run_scenario_cmd(Scenario::BatchSweep, a),
        Command::CompressionSweep(a) => run_scenario_cmd(Scenario::CompressionSweep, a),
        Command::DpSweep(a) => run_scenario_cmd(Scenario::DpSweep, a),
        Command::GenData { profile, seed, out } => gen_data(profile, seed, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_configuration() { 2 } else { 3 })
        }
    }
}
