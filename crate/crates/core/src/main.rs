use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ssps_lab::trainer::{self, PosSampling, RunConfig, SweepGrid};

#[derive(Parser)]
#[command(
    name = "ssps-lab",
    version,
    about = "Self-supervised positive sampling laboratory"
)]
struct Cli {
    /// Run every kernel on the calling thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a configuration file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a trial list with a checkpoint and print the metrics as JSON.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        trials: PathBuf,
    },
    /// Continue training from a checkpoint, possibly with another
    /// positive-sampling strategy.
    Resume {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum)]
        pos_sampling: PosSampling,
        #[arg(long)]
        epochs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of frameworks, strategies, K, M and seeds.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
    },
}

fn run(cli: Cli) -> ssps_lab::Result<()> {
    ssps_lab::parallel::set_force_sequential(cli.sequential);
    match cli.command {
        Command::Train { config, seed, out } => {
            let cfg = RunConfig::from_file(&config)?;
            let outputs = trainer::train(cfg, seed, out.as_deref())?;
            report(&outputs);
        }
        Command::Eval { checkpoint, trials } => {
            let m = trainer::evaluate_checkpoint(&checkpoint, &trials)?;
            println!("{}", serde_json::to_string(&m).expect("metrics serialize"));
        }
        Command::Resume {
            checkpoint,
            pos_sampling,
            epochs,
            out,
        } => {
            let outputs = trainer::resume(&checkpoint, pos_sampling, epochs, out.as_deref())?;
            report(&outputs);
        }
        Command::Sweep { grid } => {
            let grid = SweepGrid::from_file(&grid)?;
            let rows = trainer::run_sweep(&grid)?;
            println!(
                "{} rows written to {}",
                rows.len(),
                grid.output_dir.join("summary.csv").display()
            );
        }
    }
    Ok(())
}

fn report(outputs: &trainer::RunOutputs) {
    for m in &outputs.metrics {
        println!("{}", serde_json::to_string(m).expect("metrics serialize"));
    }
    println!("final checkpoint: {}", outputs.final_checkpoint.display());
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
