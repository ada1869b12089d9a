//! `lumina`: batch front end for synthesis, preprocessing, training,
//! cross-validation, ablation and attribution.

mod commands;
mod config;
mod error;
mod rundir;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lumina_core::model::Variant;

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lumina", version, about = "Signed-connectome graph classifier", after_help = config::help_text())]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic cohort (time-series CSVs and manifest.csv)
    Synth,
    /// Compute connectivity and priors for every manifest subject into <data>/prepared
    Prepare,
    /// Train on all folds but `fold` and validate on `fold`
    Train,
    /// Stratified k-fold cross-validation of one variant
    Cv,
    /// Cross-validate all five ablation variants
    Ablate,
    /// Integrated-gradients edge report for a trained checkpoint
    Attribute,
    /// Eigenvalue table of one subject's four priors
    Spectra,
    /// Finite-difference check of the analytic gradients
    Gradcheck,
    /// Print the effective configuration
    Config,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Prepare => "prepare",
            Command::Train => "train",
            Command::Cv => "cv",
            Command::Ablate => "ablate",
            Command::Attribute => "attribute",
            Command::Spectra => "spectra",
            Command::Gradcheck => "gradcheck",
            Command::Config => "config",
        }
    }
}

#[derive(Debug, Args)]
struct Common {
    /// Configuration file of `key = value` lines
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a configuration key (repeatable)
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Dataset directory holding manifest.csv
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    /// Run directory
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Ablation variant: full, no-br, no-dl, no-ng or baseline
    #[arg(long, global = true, value_name = "VARIANT")]
    ablate: Option<String>,
    /// Integrated-gradients steps
    #[arg(long, global = true)]
    steps: Option<usize>,
    /// Fraction of edges kept in the edge report
    #[arg(long, global = true)]
    fraction: Option<f64>,
    /// Checkpoint for attribute
    #[arg(long, global = true, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Write into a non-empty output directory
    #[arg(long, global = true)]
    force: bool,
}

fn effective_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    if let Some(file) = &common.config {
        cfg.apply_file(file)?;
    }
    for assignment in &common.set {
        cfg.apply_assignment(assignment)?;
    }
    if let Some(seed) = common.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(v) = &common.ablate {
        cfg.apply_variant(Variant::parse(v).map_err(|e| CliError::Config(e.to_string()))?);
    }
    if let Some(d) = &common.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &common.out {
        cfg.out = Some(o.clone());
    }
    if let Some(c) = &common.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(s) = common.steps {
        cfg.ig_steps = s;
    }
    if let Some(f) = common.fraction {
        cfg.top_fraction = f;
    }
    if let Ok(threads) = std::env::var("LUMINA_THREADS") {
        cfg.set("threads", &threads)
            .map_err(|_| CliError::Config(format!("LUMINA_THREADS: cannot parse {threads:?}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn default_run_dir(command: &str, seed: u64) -> PathBuf {
    let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
    PathBuf::from("runs").join(format!("{command}-{stamp}-s{seed}"))
}

fn run(cli: &Cli) -> Result<String, CliError> {
    let cfg = effective_config(&cli.common)?;
    let force = cli.common.force;
    let out = || {
        cfg.out
            .clone()
            .unwrap_or_else(|| default_run_dir(cli.command.name(), cfg.train.seed))
    };
    match cli.command {
        Command::Synth => commands::synth(&cfg, &cfg.data.clone().unwrap_or_else(out), force),
        Command::Prepare => commands::prepare(&cfg, force),
        Command::Train => commands::train(&cfg, &out(), force),
        Command::Cv => commands::cv(&cfg, &out(), force),
        Command::Ablate => commands::ablate(&cfg, &out(), force),
        Command::Attribute => commands::attribute(&cfg, &out(), force),
        Command::Spectra => commands::spectra(&cfg, &out(), force),
        Command::Gradcheck => commands::gradcheck(&cfg, &out(), force),
        Command::Config => Ok(cfg.echo().trim_end().to_owned()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::Config(first.to_owned()));
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
