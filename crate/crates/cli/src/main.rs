use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hessnet_cli::commands;
use hessnet_cli::config::RunConfig;
use hessnet_cli::CliError;
use hessnet_core::optim::{CriteriaPreset, HessianSource};

#[derive(Parser)]
#[command(name = "hessnet", version, about = "Direct Hessian prediction and second-order molecular workflows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// loose, default, tight or very_tight.
    #[arg(long, global = true)]
    criteria: Option<String>,
    /// oracle, fd, model, bfgs:unit, bfgs:model, bfgs:fd or bfgs:oracle.
    #[arg(long, global = true)]
    hessian: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample noised geometries labelled by an analytic potential.
    GenData,
    /// Train a model on a dataset and write a checkpoint.
    Train,
    /// Predict the Hessian of a geometry.
    Predict,
    /// Vibrational analysis and stationary-point classification.
    Freq,
    /// Zero-point energy.
    Zpe,
    /// Geometry optimization, single run or seed sweep.
    Opt,
    /// Transition-state refinement.
    Ts,
    /// Intrinsic reaction coordinate from a saddle.
    Irc,
    /// Direct prediction against finite differences of model forces.
    Bench,
    /// Invariant self-test.
    Check,
}

fn resolve(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(c) = &common.criteria {
        cfg.criteria = c.parse::<CriteriaPreset>()?;
    }
    if let Some(h) = &common.hessian {
        cfg.hessian = Some(h.parse::<HessianSource>()?);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<serde_json::Value, CliError> {
    let cfg = resolve(&cli.common)?;
    match cli.command {
        Command::GenData => commands::gen_data(&cfg),
        Command::Train => commands::train_cmd(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::Freq => commands::freq(&cfg),
        Command::Zpe => commands::zpe(&cfg),
        Command::Opt => commands::opt(&cfg),
        Command::Ts => commands::ts(&cfg),
        Command::Irc => commands::irc(&cfg),
        Command::Bench => commands::bench_cmd(&cfg),
        Command::Check => commands::check(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
