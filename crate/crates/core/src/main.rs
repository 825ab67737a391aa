//! `mgs` command-line interface.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numeric failure,
//! 4 I/O or file-format error. Failures print one JSON line on stderr.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mgs_core::config::RunConfig;
use mgs_core::error::{MgsError, Result};
use mgs_core::pipeline::{self, Run};

#[derive(Parser, Debug)]
#[command(name = "mgs", version, about = "Manifold-guided sampling for small diffusion models")]
struct Cli {
    /// Run configuration (flat `key = value` file); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Root of the run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the training set and evaluation references.
    MakeData,
    TrainDiffusion,
    TrainManifold,
    /// Draw samples (unguided unless --guided).
    Sample {
        #[arg(long)]
        guided: bool,
        /// Also write the per-step guidance objective and gradient norms.
        #[arg(long)]
        trace: bool,
    },
    /// Bias, neighbour-count and distance reports.
    Evaluate,
    /// Sweep one axis; each value is a full run.
    Ablate {
        /// lambda, guidance_steps, batch_size, relation_source, sampler_steps, or any config key.
        #[arg(long)]
        axis: String,
        /// Comma-separated values; the axis's standard grid when omitted.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<String>>,
    },
    /// SVG charts of the evaluation reports.
    Plot,
    /// Print the resolved configuration and its hash.
    Config,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for kv in &cli.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| MgsError::config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::MakeData => "make-data",
        Command::TrainDiffusion => "train-diffusion",
        Command::TrainManifold => "train-manifold",
        Command::Sample { .. } => "sample",
        Command::Evaluate => "evaluate",
        Command::Ablate { .. } => "ablate",
        Command::Plot => "plot",
        Command::Config => "config",
    }
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let started = Instant::now();
    match &cli.command {
        Command::Config => {
            print!("{}", cfg.canonical());
            println!("# hash {}", cfg.hash());
            return Ok(());
        }
        Command::Ablate { axis, values } => {
            for p in pipeline::ablate(&cfg, axis, values.clone(), &cli.out)? {
                println!("{}", p.display());
            }
            let mut run = Run::open(cfg, &cli.out)?;
            run.finish("ablate", started)?;
            return Ok(());
        }
        _ => {}
    }
    let mut run = Run::open(cfg, &cli.out)?;
    match &cli.command {
        Command::MakeData => run.make_data()?,
        Command::TrainDiffusion => run.train_diffusion()?,
        Command::TrainManifold => run.train_manifold()?,
        Command::Sample { guided, trace } => {
            run.sample(*guided, *trace)?;
        }
        Command::Evaluate => {
            for s in run.evaluate()? {
                let tv = s.bias.as_ref().map_or("n/a".to_string(), |b| format!("{:.4}", b.tv_uniform));
                println!("{:<9} tv_uniform {tv}  sw_real {:.4}  cv_k {:.4}", s.set, s.to_real.sliced_wasserstein, s.cv());
            }
        }
        Command::Plot => {
            for p in run.plot()? {
                println!("{}", p.display());
            }
        }
        Command::Ablate { .. } | Command::Config => unreachable!("handled above"),
    }
    run.finish(command_name(&cli.command), started)?;
    println!("{}", run.dir().display());
    Ok(())
}

fn error_line(kind: &str, message: &str, code: i32) -> String {
    serde_json::json!({ "error": kind, "message": message, "exit_code": code }).to_string()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("{}", error_line("config", first, 2));
            return ExitCode::from(2);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string(), e.exit_code()));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
