use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use epgi::config::{ConfigError, RunConfig};
use epgi::pipeline::{Pipeline, PipelineError, Stage};

#[derive(Parser)]
#[command(name = "epgi", version, about = "Electron-photon coincidence imaging pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML config laid over the preset defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `[run] seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    /// Worker threads, 0 for all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    CatRun,
    GratingRun,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate electron and photon streams plus ground truth.
    Simulate,
    /// Time-difference histogram and g².
    G2,
    /// Coincidence pair list.
    Match,
    /// Raw, ghost and accidental-subtracted images.
    Reconstruct,
    /// Resolution fit of a grating ghost image.
    Fit,
    /// Distortion map of the optical system.
    Raytrace,
    /// Every stage in order.
    All,
}

fn config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let preset = cli.preset.map(|p| match p {
        Preset::CatRun => "cat-run",
        Preset::GratingRun => "grating-run",
    });
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path, preset)?,
        None => RunConfig::preset(preset.unwrap_or("cat-run"))?,
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.run.out_dir = d.clone();
    }
    if let Some(t) = cli.threads {
        cfg.run.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<(), PipelineError> {
    let p = Pipeline::new(config(cli)?)?;
    match cli.command {
        Command::Simulate => p.run(Stage::Simulate),
        Command::G2 => p.run(Stage::G2),
        Command::Match => p.run(Stage::Match),
        Command::Reconstruct => p.run(Stage::Reconstruct),
        Command::Fit => p.run(Stage::Fit),
        Command::Raytrace => p.run(Stage::Raytrace),
        Command::All => p.run_all(),
    }?;
    println!("{}", p.out_dir().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("epgi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
