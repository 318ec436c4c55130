use std::path::{Path, PathBuf};
use std::process::ExitCode;

use asyncvo::app::{cmd_eval, cmd_run, cmd_simulate, AppError};
use asyncvo::config::RunConfig;
use clap::{Parser, Subcommand};

/// Asynchronous monocular visual odometry.
#[derive(Debug, Parser)]
#[command(name = "asyncvo", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic track stream with ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides `simulator.seed`.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the filter over a track stream.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        tracks: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align an estimated trajectory to a reference and report APE.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        est: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(path: Option<&Path>) -> Result<RunConfig, AppError> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn execute(cmd: Command) -> Result<(), AppError> {
    match cmd {
        Command::Simulate { config, seed, out } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.simulator.seed = s;
            }
            let s = cmd_simulate(&cfg, &out)?;
            println!("wrote {} records ({} updates) to {}", s.records, s.updates, out.display());
        }
        Command::Run { config, tracks, out } => {
            let cfg = load(config.as_deref())?;
            let s = cmd_run(&cfg, &tracks, &out)?;
            match s.initialization_t {
                Some(t) => println!("initialized at t={t:.6}; {} trajectory samples written to {}", s.samples, s.trajectory.display()),
                None => println!("not initialized; empty trajectory written to {}", s.trajectory.display()),
            }
        }
        Command::Eval { config, est, reference, out } => {
            let cfg = load(config.as_deref())?;
            let s = cmd_eval(&cfg, &est, &reference, &out)?;
            let r = &s.report;
            println!("APE mean {:.6} m, rmse {:.6} m, max {:.6} m over {} samples", r.mean, r.rmse, r.max, r.count);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
