use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;
use zeroloss_cli::acceptance::{self, AcceptOptions};
use zeroloss_cli::commands;
use zeroloss_cli::config::ScenarioConfig;
use zeroloss_cli::error::{CliError, CliResult};

/// Noisy gradient descent near zero-loss manifolds: simulation, slow
/// limits and acceptance checks.
///
/// Outputs go to <output_dir> from the config, under $ZEROLOSS_OUTPUT_ROOT
/// when that is set. Exit codes: 0 success, 1 a check failed, 2 bad config.
#[derive(Parser)]
#[command(name = "zeroloss", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Scenario config (JSON), or a manifest written by an earlier run.
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Run noisy GD for every seed and write trajectories plus a manifest.
    Simulate(ConfigArg),
    /// Integrate the slow limit on the zero-loss set from Φ(w0).
    LimitFlow(ConfigArg),
    /// Compare the rescaled process with its limit across step-size levels.
    Compare {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Levels as alpha:sigma, e.g. 0.3:0.03,0.15:0.015.
        #[arg(long, value_delimiter = ',', value_parser = parse_level, required = true)]
        levels: Vec<(f64, f64)>,
    },
    /// Closed-form and numeric regularizers at probe points.
    RegReport {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Comma-separated coordinates; repeat for several probes.
        #[arg(long = "probe", value_parser = parse_point, allow_hyphen_values = true)]
        probes: Vec<Vec<f64>>,
    },
    /// Check the limit map derivatives against finite differences.
    VerifyPhi {
        #[command(flatten)]
        cfg: ConfigArg,
        /// Comma-separated coordinates; defaults to Φ(w0).
        #[arg(long = "point", value_parser = parse_point, allow_hyphen_values = true)]
        points: Vec<Vec<f64>>,
    },
    /// Run the acceptance criteria, one line each.
    Accept {
        /// Smoke run with reduced budgets.
        #[arg(long)]
        quick: bool,
        /// Offset added to every seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Criterion ids to run, e.g. 1,4,9.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

fn parse_level(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or("expected alpha:sigma")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("alpha: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("sigma: {e}"))?;
    Ok((a, b))
}

fn parse_point(s: &str) -> Result<Vec<f64>, String> {
    s.split(',')
        .map(|x| x.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

fn load(arg: &ConfigArg) -> CliResult<(ScenarioConfig, PathBuf)> {
    let cfg = ScenarioConfig::load(&arg.config)?;
    let base = arg
        .config
        .parent()
        .map_or_else(|| Path::new(".").to_path_buf(), Path::to_path_buf);
    Ok((cfg, base))
}

fn print(v: &impl serde::Serialize) -> CliResult<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(arg) => {
            let (cfg, base) = load(&arg)?;
            let m = commands::simulate(&cfg, &base)?;
            print(&m.runs)
        }
        Command::LimitFlow(arg) => {
            let (cfg, base) = load(&arg)?;
            let m = commands::limit_flow(&cfg, &base)?;
            print(&m.summary.unwrap_or(Value::Null))
        }
        Command::Compare { cfg, levels } => {
            let (c, base) = load(&cfg)?;
            print(&commands::compare(&c, &base, &levels)?)
        }
        Command::RegReport { cfg, probes } => {
            let (c, base) = load(&cfg)?;
            print(&commands::reg_report(&c, &base, &probes)?)
        }
        Command::VerifyPhi { cfg, points } => {
            let (c, base) = load(&cfg)?;
            print(&commands::verify_phi(&c, &base, &points)?)
        }
        Command::Accept { quick, seed, only } => {
            if let Some(bad) = only
                .iter()
                .find(|id| !acceptance::CRITERIA.iter().any(|(c, _)| c == *id))
            {
                return Err(CliError::Config(format!("unknown criterion {bad}")));
            }
            let opts = AcceptOptions { quick, seed_base: seed };
            let mut failed = 0;
            for (_, f) in acceptance::CRITERIA
                .iter()
                .filter(|(id, _)| only.is_empty() || only.contains(id))
            {
                let r = f(&opts);
                println!("{}", r.line());
                failed += usize::from(!r.pass);
            }
            if failed > 0 {
                return Err(CliError::Failed(format!("{failed} criteria failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("zeroloss: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
