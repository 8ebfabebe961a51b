//! `hawkes-ident`: config-driven runner for the latent Hawkes pipeline.
//!
//! Exit codes: 0 success, 1 runtime failure (recorded in the manifest),
//! 2 config error.

mod config;
mod manifest;
mod stages;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use config::{config_digest, ConfigError, PipelineConfig};
use manifest::RunManifest;
use stages::{cmd_estimate, cmd_evaluate, cmd_identify, cmd_simulate, Ctx};

#[derive(Parser)]
#[command(
    name = "hawkes-ident",
    version,
    about = "Latent Hawkes pipeline: simulate, estimate, identify, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate events, counts and mixed observations per environment and seed.
    Simulate(RunArgs),
    /// Estimate spectra, cumulant tensors and the factor decomposition.
    Estimate(RunArgs),
    /// Recover transfer, kernels, baseline and latents; write reports.
    Identify(RunArgs),
    /// Score recovery quality and run the bin-width convergence diagnostic.
    Evaluate(RunArgs),
    /// All four stages in order.
    Pipeline(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration document (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides HAWKES_IDENT_OUT and the config value.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; overrides HAWKES_IDENT_THREADS and the config value.
    #[arg(long)]
    threads: Option<usize>,
}

enum RunError {
    Config(ConfigError),
    Runtime(anyhow::Error),
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Cmd::Simulate(a) => ("simulate", a),
        Cmd::Estimate(a) => ("estimate", a),
        Cmd::Identify(a) => ("identify", a),
        Cmd::Evaluate(a) => ("evaluate", a),
        Cmd::Pipeline(a) => ("pipeline", a),
    };
    match run(name, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Config(e)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

type Stage = fn(&Ctx) -> anyhow::Result<Vec<String>>;

const PIPELINE: [(&str, Stage); 4] = [
    ("simulate", cmd_simulate),
    ("estimate", cmd_estimate),
    ("identify", cmd_identify),
    ("evaluate", cmd_evaluate),
];

fn run(name: &str, args: &RunArgs) -> Result<(), RunError> {
    let (cfg, text) = PipelineConfig::load(&args.config)?;
    let digest = config_digest(&text);
    let out = resolve_out(args, &cfg);
    if let Some(threads) = resolve_threads(args, &cfg)? {
        // A failure here means a pool already exists; its size then wins.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    std::fs::create_dir_all(&out)
        .map_err(|e| RunError::Runtime(anyhow!("cannot create {}: {e}", out.display())))?;

    let stages: Vec<(&str, Stage)> = if name == "pipeline" {
        PIPELINE.to_vec()
    } else {
        PIPELINE.iter().copied().filter(|&(s, _)| s == name).collect()
    };
    let ctx = Ctx::new(cfg, out.clone());
    let mut manifest = RunManifest::new(name, digest);
    for (stage_name, stage) in stages {
        let started = Instant::now();
        match stage(&ctx) {
            Ok(artifacts) => manifest.push_stage(stage_name, started, artifacts),
            Err(e) => {
                manifest.error = Some(format!("{stage_name}: {e:#}"));
                let _ = manifest.write(&out);
                return Err(RunError::Runtime(e));
            }
        }
    }
    manifest
        .write(&out)
        .map_err(|e| RunError::Runtime(anyhow::Error::new(e)))?;
    Ok(())
}

fn resolve_out(args: &RunArgs, cfg: &PipelineConfig) -> PathBuf {
    if let Some(o) = &args.out {
        return o.clone();
    }
    if let Ok(v) = std::env::var("HAWKES_IDENT_OUT") {
        if !v.is_empty() {
            return PathBuf::from(v);
        }
    }
    cfg.output_dir.clone()
}

fn resolve_threads(args: &RunArgs, cfg: &PipelineConfig) -> Result<Option<usize>, ConfigError> {
    let picked = if let Some(t) = args.threads {
        Some(t)
    } else if let Ok(v) = std::env::var("HAWKES_IDENT_THREADS") {
        if v.is_empty() {
            cfg.threads
        } else {
            Some(v.parse::<usize>().map_err(|_| {
                ConfigError(format!("HAWKES_IDENT_THREADS must be an integer, got {v:?}"))
            })?)
        }
    } else {
        cfg.threads
    };
    if picked == Some(0) {
        return Err(ConfigError("threads must be at least 1".into()));
    }
    Ok(picked)
}
