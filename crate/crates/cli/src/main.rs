use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use log::error;

use tlasdi::Error;
use tlasdi_cli::commands;
use tlasdi_cli::config::{ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "tlasdi", version, about = "Parametric latent dynamics with thermodynamic structure")]
struct Cli {
    /// Run configuration (TOML).
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to all cores.
    #[arg(long, short, global = true)]
    jobs: Option<usize>,
    /// Output root; each command writes into `<out-dir>/<command>`.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
    /// Config override `key.path=value`, repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate training snapshots.
    GenData,
    /// Train on the configured parameter points.
    Train {
        /// Continue from the latest checkpoint of a previous run.
        #[arg(long)]
        resume: bool,
    },
    /// Train with greedy residual-driven sampling.
    ActiveTrain,
    /// Relative error over the test grid.
    EvalMap(ModelArg),
    /// Energy and entropy along latent rollouts.
    Thermo(ModelArg),
    /// Frequency content of latent trajectories.
    Spectrum(ModelArg),
    /// Error-bound terms along predicted trajectories.
    Bound(ModelArg),
    /// Residual indicator against true error on held-out points.
    IndicatorCorr(ModelArg),
    /// Full-order vs reduced-order wall time.
    Timing(ModelArg),
}

#[derive(clap::Args)]
struct ModelArg {
    /// Trained model directory; defaults to `<out-dir>/train/final`.
    #[arg(long)]
    model: Option<PathBuf>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::NonFinite(_) | Error::Domain(_) | Error::NewtonDiverged { .. } | Error::Structure(_)) => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("configuring worker threads")?;
    }
    let path = cli
        .config
        .ok_or_else(|| ConfigError::Invalid("no configuration given; pass --config FILE".into()))?;
    let mut cfg = RunConfig::load(&path, &cli.overrides)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out_dir.as_path();
    let model = |m: ModelArg| m.model.unwrap_or_else(|| out.join("train").join("final"));
    match cli.command {
        Command::GenData => {
            commands::gen_data(&cfg, out)?;
        }
        Command::Train { resume } => {
            let t = commands::train(&cfg, out, resume)?;
            println!("max relative error on training points: {:.4e}", t.errors.max());
        }
        Command::ActiveTrain => {
            let a = commands::active(&cfg, out)?;
            println!(
                "{} training points; max relative error {:.4e}",
                a.trained.points.len(),
                a.trained.errors.max()
            );
        }
        Command::EvalMap(m) => {
            let map = commands::eval_map(&cfg, out, &model(m))?;
            println!("max {:.4e} mean {:.4e}", map.max(), map.mean());
        }
        Command::Thermo(m) => {
            commands::thermo(&cfg, out, &model(m))?;
        }
        Command::Spectrum(m) => {
            commands::spectrum(&cfg, out, &model(m))?;
        }
        Command::Bound(m) => {
            commands::bound(&cfg, out, &model(m))?;
        }
        Command::IndicatorCorr(m) => {
            let s = commands::indicator_corr(&cfg, out, &model(m))?;
            println!("pearson {:.4} spearman {:.4}", s.correlation.pearson, s.correlation.spearman);
        }
        Command::Timing(m) => {
            for (_, r) in commands::timing(&cfg, out, &model(m))? {
                println!("fom {:.4e}s rom {:.4e}s speedup {:.2}", r.fom_seconds, r.rom_seconds, r.speedup);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
