use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ocda::config::FusionName;
use ocda::manifest::Lock;
use ocda::{run_stage, CliError, Context, Outcome, RunConfig, Stage};

#[derive(Parser)]
#[command(name = "ocda", version, about = "Open compound domain adaptation pipeline on PNG datasets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Teacher fusion rule, overriding the config.
    #[arg(long, global = true, value_enum)]
    fusion: Option<FusionName>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic source, compound, validation and open sets.
    Synth,
    /// Cluster target styles and pick the subdomain count.
    Separate,
    /// Match every subdomain member to its standard style.
    Purify,
    /// Write preview pairs of both mixing directions.
    Mix,
    /// Train one teacher per subdomain.
    Train,
    /// Distill the teachers into a student.
    Distill,
    /// Online consistency updating on the open domain.
    Update,
    /// mIoU reports for every trained model.
    Eval,
    /// All stages in order.
    All,
}

fn stages(c: Command) -> Vec<Stage> {
    match c {
        Command::Synth => vec![Stage::Synth],
        Command::Separate => vec![Stage::Separate],
        Command::Purify => vec![Stage::Purify],
        Command::Mix => vec![Stage::Mix],
        Command::Train => vec![Stage::Train],
        Command::Distill => vec![Stage::Distill],
        Command::Update => vec![Stage::Update],
        Command::Eval => vec![Stage::Eval],
        Command::All => Stage::ALL.to_vec(),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.paths.out_dir = out;
    }
    if let Some(f) = cli.fusion {
        cfg.distill.fusion = f;
    }
    let ctx = Context::new(cfg);
    let _lock = Lock::acquire(&ctx.out)?;
    for stage in stages(cli.command) {
        match run_stage(&ctx, stage)? {
            Outcome::Ran => eprintln!("{}: done", stage.name()),
            Outcome::UpToDate => eprintln!("{}: up to date", stage.name()),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
