use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use map_core::data::SyntheticSpec;
use map_core::experiment::{self, RunConfig, SweepAxis, SweepSpec};

#[derive(Parser)]
#[command(name = "map-prune", version, about = "Sparse MLP training with magnitude-attention dynamic pruning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write metrics, summary and checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `out_dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Train a grid of runs over one config axis.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// variant, z or exploit.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        /// Also run every value with exploitation disabled.
        #[arg(long)]
        cross_exploit: bool,
        /// Parallel runs; 0 uses every core.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summarize finished run directories.
    Analyze {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Where to write report.json and the CSV series.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic Gaussian-blob dataset as IDX files.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 1000)]
        per_class: usize,
        #[arg(long, default_value_t = 200)]
        test_per_class: usize,
        #[arg(long, default_value_t = 784)]
        dim: usize,
        #[arg(long, default_value_t = 0.3)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(path: &PathBuf, out: Option<PathBuf>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if out.is_some() {
        cfg.out_dir = out;
    }
    Ok(cfg)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, out, resume } => {
            let cfg = load_config(&config, out)?;
            let record = match resume {
                Some(ckpt) => experiment::resume(&cfg, &ckpt),
                None => experiment::train(&cfg),
            }
            .context("training failed")?;
            print_json(&record.summary)
        }
        Command::Sweep {
            config,
            axis,
            values,
            seeds,
            cross_exploit,
            jobs,
            out,
        } => {
            let cfg = load_config(&config, out)?;
            let spec = SweepSpec {
                axis: axis.parse::<SweepAxis>()?,
                values: values.into_iter().map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect(),
                seeds,
                cross_exploit,
                jobs,
            };
            let cells = experiment::sweep(&cfg, &spec)?;
            let rows: Vec<_> = cells.iter().map(|c| c.aggregate(spec.axis)).collect();
            print_json(&rows)
        }
        Command::Analyze { dirs, out } => {
            if let Some(out) = &out {
                std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
            }
            let report = experiment::analyze(&dirs, out.as_deref())?;
            print_json(&report)
        }
        Command::GenData {
            out,
            classes,
            per_class,
            test_per_class,
            dim,
            sigma,
            seed,
        } => {
            let spec = SyntheticSpec {
                classes,
                per_class,
                dim,
                sigma,
                seed,
            };
            experiment::gen_data(&spec, test_per_class, &out)?;
            eprintln!("wrote {} train and {} test rows to {}", classes * per_class, classes * test_per_class, out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .chain()
                .any(|c| c.downcast_ref::<map_core::Error>().is_some_and(map_core::Error::is_config));
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
