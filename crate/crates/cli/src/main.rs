use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mindlab_cli::commands::{ablate_cmd, check_cmd, generate_cmd, sweep_cmd, train_cmd, RunOptions};
use mindlab_cli::{CliError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "mindlab", version, about = "Mixture-of-transition label-noise experiments on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory (`generate`: dataset file). Overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the data and training seed. Sweeps keep their seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for ablations and sweeps.
    #[arg(long)]
    jobs: Option<usize>,
    /// Also write a gnuplot script for the produced CSVs.
    #[arg(long)]
    emit_gnuplot_script: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset file.
    Generate(Common),
    /// Train one variant and export history, snapshots and a summary.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset file from `generate`; generated from the config if absent.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Run every variant over the sweep seeds.
    Ablate(Common),
    /// Sweep K, tau, lambda or epsilon.
    Sweep(Common),
    /// Run the invariant and gradient self-test suite.
    Check,
}

fn setup(c: &Common) -> Result<(ExperimentConfig, RunOptions), CliError> {
    let cfg = ExperimentConfig::load(&c.config)?.with_seed(c.seed);
    let opts = RunOptions { out: c.out.clone(), jobs: c.jobs, emit_gnuplot_script: c.emit_gnuplot_script };
    Ok((cfg, opts))
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Generate(c) => {
            let (cfg, opts) = setup(&c)?;
            generate_cmd(&cfg, &opts)
        }
        Command::Train { common, data } => {
            let (cfg, opts) = setup(&common)?;
            train_cmd(&cfg, data.as_deref(), &opts)
        }
        Command::Ablate(c) => {
            let (cfg, opts) = setup(&c)?;
            ablate_cmd(&cfg, &opts)
        }
        Command::Sweep(c) => {
            let (cfg, opts) = setup(&c)?;
            sweep_cmd(&cfg, &opts)
        }
        Command::Check => {
            let (text, ok) = check_cmd();
            if ok {
                Ok(text)
            } else {
                print!("{text}");
                Err(CliError::Invalid("self-check failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
