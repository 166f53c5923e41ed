use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use stakerep::validation::ValidationOptions;
use stakerep_cli::{cmd_simulate, cmd_sweep, cmd_validate, resolve_config, Overrides};

/// Staked-credit reputation simulator.
#[derive(Parser)]
#[command(name = "stakerep", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation and write its tables.
    Simulate(Common),
    /// Run one simulation per value of a numeric key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Config key to vary.
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the key.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
    },
    /// Check the samplers and the alignment inequality.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, hide = true)]
        inject_broken_exponent: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    agents: Option<usize>,
    #[arg(long)]
    replications: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Scenario preset, figure2 through figure13.
    #[arg(long)]
    preset: Option<String>,
    /// Worker threads for replications.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Skip the agent-round safety limit.
    #[arg(long)]
    override_safety: bool,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            preset: self.preset.clone(),
            config: self.config.clone(),
            seed: self.seed,
            rounds: self.rounds,
            agents: self.agents,
            replications: self.replications,
            out_dir: self.out_dir.clone(),
            override_safety: self.override_safety,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    let mut stdout = io::stdout().lock();
    match cli.command {
        Command::Simulate(common) => {
            let cfg = resolve_config(&common.overrides())?;
            cmd_simulate(&cfg, common.jobs, &mut stdout)?;
            Ok(true)
        }
        Command::Sweep {
            common,
            axis,
            values,
        } => {
            let cfg = resolve_config(&common.overrides())?;
            cmd_sweep(
                &cfg,
                &axis,
                &values,
                common.jobs,
                common.override_safety,
                &mut stdout,
            )?;
            Ok(true)
        }
        Command::Validate {
            common,
            inject_broken_exponent,
        } => {
            let cfg = resolve_config(&common.overrides())?;
            let opts = ValidationOptions {
                seed: cfg.seed,
                broken_exponent: inject_broken_exponent,
            };
            cmd_validate(opts, &mut stdout)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
