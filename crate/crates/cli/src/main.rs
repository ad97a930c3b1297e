use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use collab_cli::commands::{self, PolicyKind, PolicyRequest, VerifyRequest};
use collab_cli::{RunConfig, Session};
use collab_core::V0Convention;

#[derive(Parser, Debug)]
#[command(name = "collab", version, about = "Optimal dividends for two collaborating insurers")]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true, default_value = "configs/symmetric-example.toml")]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for grid sweeps and Monte Carlo paths.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `v0_convention` in the config.
    #[arg(long, global = true, value_parser = parse_convention)]
    v0_convention: Option<V0Convention>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Barrier value of one company on its own.
    SolveUnivariate {
        #[arg(long, default_value_t = 1)]
        company: u8,
    },
    /// Barrier value of the merged company.
    SolveMerger,
    /// Value of a curve strategy given as JSON, with a Monte Carlo cross-check.
    EvaluateCurve {
        #[arg(long)]
        curve: PathBuf,
        /// Extra cross-check state `X,Y`; repeatable.
        #[arg(long = "state", value_parser = parse_state)]
        states: Vec<(f64, f64)>,
    },
    /// Iterated curve strategies and the value of the final one.
    Iterate,
    /// Monte Carlo value of a policy at the listed states.
    Simulate {
        #[arg(long, value_enum, default_value = "curve")]
        policy: PolicyKind,
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Barrier level; defaults to the optimal one.
        #[arg(long)]
        level: Option<f64>,
        #[arg(long, default_value_t = 1)]
        company: u8,
        #[arg(long = "state", value_parser = parse_state)]
        states: Vec<(f64, f64)>,
    },
    /// Supersolution and shape checks; the exit code flags failed checks.
    Verify {
        /// Value grid written by `iterate` or `evaluate-curve`; computed when absent.
        #[arg(long)]
        value: Option<PathBuf>,
        #[arg(long)]
        curve: Option<PathBuf>,
        /// Check the take-the-money-and-run value instead.
        #[arg(long)]
        negative_control: bool,
    },
    /// Collaboration, stand-alone and merger values side by side.
    Compare {
        #[arg(long)]
        value: Option<PathBuf>,
    },
}

fn parse_convention(s: &str) -> Result<V0Convention, String> {
    s.parse()
}

fn parse_state(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected X,Y, got '{s}'"))?;
    let x = a.trim().parse().map_err(|e| format!("bad x in '{s}': {e}"))?;
    let y = b.trim().parse().map_err(|e| format!("bad y in '{s}': {e}"))?;
    Ok((x, y))
}

fn execute(cli: Cli) -> Result<i32> {
    let mut cfg = RunConfig::load(&cli.config)?;
    if let Some(out) = cli.out {
        cfg.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(conv) = cli.v0_convention {
        cfg.v0_convention = conv;
    }
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring worker threads")?;
    }
    let session = Session::new(cfg)?;
    let (text, code) = match &cli.command {
        Command::SolveUnivariate { company } => (commands::solve_univariate(&session, *company)?, 0),
        Command::SolveMerger => (commands::solve_merger(&session)?, 0),
        Command::EvaluateCurve { curve, states } => (commands::evaluate_curve(&session, curve, states)?, 0),
        Command::Iterate => (commands::iterate(&session)?.0, 0),
        Command::Simulate { policy, curve, level, company, states } => {
            let req = PolicyRequest { kind: *policy, curve: curve.as_deref(), level: *level, company: *company };
            (commands::simulate(&session, &req, states)?, 0)
        }
        Command::Verify { value, curve, negative_control } => {
            let req = VerifyRequest { value: value.as_deref(), curve: curve.as_deref(), negative_control: *negative_control };
            commands::verify(&session, &req)?
        }
        Command::Compare { value } => (commands::compare(&session, value.as_deref())?, 0),
    };
    println!("{text}");
    Ok(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(0) => ExitCode::SUCCESS,
        Ok(code) => ExitCode::from(code.clamp(1, 255) as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(64)
        }
    }
}
