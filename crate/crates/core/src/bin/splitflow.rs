//! Command line front end for the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use splitflow::experiment::{
    cmd_converge, cmd_eval, cmd_gen_data, cmd_sample, cmd_table1, cmd_train, Distribution, ExperimentConfig, Paradigm,
    RunContext,
};
use splitflow::{Result, Scheme};

#[derive(Parser)]
#[command(
    name = "splitflow",
    version,
    about = "Decoupled conditional flow matching experiments"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON). Defaults to the built-in Easy config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SchemeArg {
    LieTrotter,
    Strang,
}

#[derive(Subcommand)]
enum Command {
    /// Generate both decoupled datasets and the joint reference draws.
    GenData,
    /// Train one paradigm's pair of models.
    Train {
        #[arg(long, value_enum)]
        paradigm: Paradigm,
    },
    /// Draw joint samples from a trained paradigm.
    Sample {
        #[arg(long, value_enum)]
        paradigm: Paradigm,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Compare two sample files.
    Eval {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long)]
        label: Option<String>,
    },
    /// Run the full comparison pipeline for every paradigm.
    Table1,
    /// Splitting convergence study on the Gaussian oracle.
    Converge {
        #[arg(long, value_enum)]
        scheme: Option<SchemeArg>,
    },
}

fn context(common: &Common) -> Result<RunContext> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new(Distribution::Easy),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.clone());
    }
    RunContext::new(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let ctx = context(&cli.common)?;
    log::info!(
        "run directory {} (config {})",
        ctx.out_dir.display(),
        &ctx.config_hash[..12]
    );
    match cli.command {
        Command::GenData => {
            for p in cmd_gen_data(&ctx)? {
                println!("{}", p.display());
            }
        }
        Command::Train { paradigm } => {
            for t in cmd_train(&ctx, paradigm)? {
                println!("final loss {:?}", t.final_loss());
            }
        }
        Command::Sample { paradigm, n } => {
            let set = cmd_sample(&ctx, paradigm, n)?;
            println!("{} samples written", set.len());
        }
        Command::Eval { a, b, label } => {
            let r = cmd_eval(&ctx, &a, &b, label.as_deref())?;
            println!("{} w1={} mmd={} energy={}", r.label, r.w1, r.mmd, r.energy);
        }
        Command::Table1 => {
            println!("paradigm,w1,mmd,energy,status");
            for r in cmd_table1(&ctx)? {
                println!("{},{},{},{},{}", r.label, r.w1, r.mmd, r.energy, r.status);
            }
        }
        Command::Converge { scheme } => {
            let scheme = scheme.map(|s| match s {
                SchemeArg::LieTrotter => Scheme::LieTrotter,
                SchemeArg::Strang => Scheme::Strang,
            });
            let r = cmd_converge(&ctx, scheme)?;
            println!(
                "fitted_order={:?} fitted_constant={:?} noise_floor={} crn_floor={}",
                r.fitted_order, r.fitted_constant, r.noise_floor, r.crn_floor
            );
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
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
