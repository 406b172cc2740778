use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use mnflow::harness::commands::{self, Outcome};
use mnflow::harness::config::ExperimentConfig;

/// Experiments on minimum-norm denoisers and the sampling flows they induce.
#[derive(Parser, Debug)]
#[command(name = "mnflow", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment config (`[section]` / `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory; overrides `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Master seed; replaces the dataset, flow, and training seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Also write sampled trajectories.
    #[arg(long, global = true)]
    dump_trajectories: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write the configured dataset.
    GenDataset,
    /// Train one net per noise level and write checkpoints and a training log.
    Train,
    /// Run score or probability flows from random starts and classify where they end.
    Sample,
    /// Iterate the denoiser from every subset sum of 2 to 4 training points.
    FixedPoint,
    /// Repeat sampling over several dataset sizes and seeds.
    SweepN,
    /// Evaluate the score field of a planar dataset on a grid.
    Field,
    /// Compare score flows under the exact and linearized denoisers.
    CompareTraj,
    /// Linear stability of subset sums.
    Stability,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.output.dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.dataset.seed = seed;
        cfg.flow.seed = seed;
        cfg.train.seed = seed;
    }
    cfg.output.dump_trajectories |= cli.dump_trajectories;
    Ok(cfg)
}

fn dispatch(command: Command, cfg: &ExperimentConfig) -> mnflow::Result<Box<dyn Outcome + Send>> {
    Ok(match command {
        Command::GenDataset => Box::new(commands::cmd_gen_dataset(cfg)?),
        Command::Train => Box::new(commands::cmd_train(cfg)?),
        Command::Sample => Box::new(commands::cmd_sample(cfg)?),
        Command::FixedPoint => Box::new(commands::cmd_fixed_point(cfg)?),
        Command::SweepN => Box::new(commands::cmd_sweep_n(cfg)?),
        Command::Field => Box::new(commands::cmd_field(cfg)?),
        Command::CompareTraj => Box::new(commands::cmd_compare_traj(cfg)?),
        Command::Stability => Box::new(commands::cmd_stability(cfg)?),
    })
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load(cli)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.workers {
        anyhow::ensure!(n > 0, mnflow::Error::Config("--workers must be positive".into()));
        pool = pool.num_threads(n);
    }
    let pool = pool.build().context("starting worker pool")?;
    let outcome = pool.install(|| dispatch(cli.command, &cfg))?;
    for line in outcome.summary() {
        println!("{line}");
    }
    for file in outcome.files() {
        println!("wrote {}", file.display());
    }
    Ok(())
}

/// 2 for configuration problems, 3 for numeric failures.
fn exit_code(err: &anyhow::Error) -> u8 {
    err.chain()
        .find_map(|e| e.downcast_ref::<mnflow::Error>())
        .map_or(2, |e| e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
