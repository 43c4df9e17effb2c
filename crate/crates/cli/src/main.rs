//! Command line driver: predicts decay exponents of uniformly strictly
//! hyperbolic systems and verifies them against fundamental-solution
//! computations, from one TOML config per run.
//!
//! Exit codes: 0 success, 1 config error, 2 numerical failure in a stage,
//! 3 I/O failure while writing results.

mod config;
mod report;
mod stages;

use std::path::PathBuf;
use std::time::Instant;

use clap::{error::ErrorKind, Parser, Subcommand};
use sha2::{Digest, Sha256};

use config::{Flags, Format, Invocation};
use report::{ModelEcho, Provenance, ReportDocument};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "hypdecay",
    version,
    about = "Decay exponents of strictly hyperbolic systems: prediction and verification"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,

    /// Output directory; overrides the config and HYPDECAY_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for the frequency sweep.
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Artifacts to write.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Analytic and estimated decay exponents, no solves over the horizon.
    Predict { config: PathBuf },
    /// Fundamental-solution decay fits over the frequency set.
    Verify { config: PathBuf },
    /// Slowness surfaces and contact indices.
    Surfaces { config: PathBuf },
    /// The stage set named by the config `pipeline` key (all when absent).
    Report { config: PathBuf },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let started = Instant::now();
    match run(cli, started) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}

fn run(cli: Cli, started: Instant) -> Result<i32, CliError> {
    let (invocation, config_path) = match &cli.cmd {
        Cmd::Predict { config } => (Invocation::Predict, config),
        Cmd::Verify { config } => (Invocation::Verify, config),
        Cmd::Surfaces { config } => (Invocation::Surfaces, config),
        Cmd::Report { config } => (Invocation::Report, config),
    };

    let text = std::fs::read_to_string(config_path).map_err(|e| {
        CliError::config(format!("cannot read {}: {e}", config_path.display()))
    })?;
    let sha = format!("{:x}", Sha256::digest(text.as_bytes()));

    let flags = Flags { out: cli.out.clone(), workers: cli.workers, format: cli.format };
    let cfg = config::resolve(&text, invocation, &flags)
        .map_err(|e| match e {
            CliError::Config(m) => {
                CliError::Config(format!("{}: {m}", config_path.display()))
            }
            other => other,
        })?;

    if let Some(w) = cfg.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(w).build_global() {
            eprintln!("warning: worker pool: {e}");
        }
    }

    println!(
        "model: {} (dim {}, space dim {})",
        cfg.family, cfg.sym.dim, cfg.sym.space_dim
    );

    let (stages, failures, notes) = stages::run_pipeline(&cfg);

    for stage in &cfg.stages {
        let name = stage.name();
        let failed = failures.iter().any(|f| f.stage == name);
        let line = match (stage, failed) {
            (config::Stage::Predict, false) if stages.predict.is_some() => {
                "predict: ok".to_string()
            }
            (config::Stage::Verify, false) if stages.verify.is_some() => {
                let v = stages.verify.as_ref().unwrap();
                format!(
                    "verify: ok ({} decay fits, {} product checks)",
                    v.decay_fits.len(),
                    v.products.len()
                )
            }
            (config::Stage::Diagnose, false) if stages.diagnose.is_some() => {
                let d = stages.diagnose.as_ref().unwrap();
                format!("diagnose: ok ({} residual classes)", d.classes.len())
            }
            (config::Stage::Surfaces, false) if stages.surfaces.is_some() => {
                let s = stages.surfaces.as_ref().unwrap();
                format!(
                    "surfaces: ok ({} branches, {} empty)",
                    s.branches.len(),
                    s.empty_branches.len()
                )
            }
            (_, true) => format!("{name}: failed"),
            _ => continue,
        };
        println!("{line}");
    }
    for note in &notes {
        println!("{note}");
    }

    let doc = ReportDocument {
        model: ModelEcho {
            family: cfg.family.clone(),
            dim: cfg.sym.dim,
            space_dim: cfg.sym.space_dim,
            params: cfg.model_echo.clone(),
            warnings: cfg.sym.warnings.clone(),
        },
        stages,
        failures,
        notes,
        provenance: Provenance {
            config_sha256: sha,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
        },
    };

    let written = report::emit(&doc, &cfg.out_dir, cfg.format)
        .map_err(|e| CliError::Io(format!("writing to {}: {e}", cfg.out_dir.display())))?;
    for path in &written {
        println!("wrote {}", path.display());
    }

    for failure in &doc.failures {
        eprintln!("stage {} failed: {}", failure.stage, failure.error);
    }
    Ok(if doc.failures.is_empty() { 0 } else { 2 })
}
