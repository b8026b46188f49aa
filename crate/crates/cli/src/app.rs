//! Command-line surface: argument parsing and the three subcommands.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::experiments::{belief_nulls, run_experiment};
use crate::ingest::{ingest_csv, write_table, IngestOptions};
use crate::report::{provenance_config, write_artifacts};

#[derive(Debug, Parser)]
#[command(name = "sigregime", version, about = "Regime detection on path space with signature kernels")]
pub struct Cli {
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true, env = "SIGREGIME_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the experiment described by a config file.
    Run(RunArgs),
    /// Parse a price CSV into the canonical trading-clock table.
    Ingest(IngestArgs),
    /// Compute the bootstrap null of every belief bank and write critical values.
    BootstrapNull(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the config output directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub csv: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Timestamp column (default: the first column).
    #[arg(long)]
    pub time_column: Option<String>,
    /// Comma-separated value columns (default: all others).
    #[arg(long, value_delimiter = ',')]
    pub columns: Option<Vec<String>>,
    #[arg(long, default_value_t = 252.0)]
    pub periods_per_year: f64,
}

/// Config with command-line overrides applied, and its output directory.
pub fn resolve(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out_dir
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(cfg.kind.as_str()));
    cfg.out_dir = Some(out.clone());
    Ok((cfg, out))
}

pub fn execute(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be positive"));
        }
        sigregime_core::exec::set_num_threads(n).map_err(CliError::config)?;
    }
    match cli.command {
        Command::Run(args) => run(&args),
        Command::Ingest(args) => ingest(&args),
        Command::BootstrapNull(args) => bootstrap(&args),
    }
}

fn run(args: &RunArgs) -> Result<()> {
    let (cfg, out) = resolve(args)?;
    info!("running {} with seed {}", cfg.kind.as_str(), cfg.seed);
    let art = run_experiment(&cfg)?;
    let files = write_artifacts(&cfg, &art, &out)?;
    for line in &art.text {
        println!("{line}");
    }
    println!("\nwrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let opts = IngestOptions {
        time_column: args.time_column.clone(),
        columns: args.columns.clone(),
        periods_per_year: args.periods_per_year,
        ..Default::default()
    };
    let table = ingest_csv(&args.csv, &opts)?;
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    write_table(&table, &args.out)?;
    let s = &table.summary;
    println!(
        "kept {} of {} rows ({} with missing values, {} unparseable); columns: {}",
        s.rows_kept,
        s.rows_read,
        s.dropped_missing,
        s.dropped_unparseable,
        s.columns.join(",")
    );
    Ok(())
}

fn write_file(path: &Path, contents: String) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn bootstrap(args: &RunArgs) -> Result<()> {
    let (cfg, out) = resolve(args)?;
    if !cfg.kind.is_ensemble_detection() {
        return Err(CliError::config(format!(
            "bootstrap-null needs an ensemble detection config, got {}",
            cfg.kind.as_str()
        )));
    }
    let nulls = belief_nulls(&cfg)?;
    std::fs::create_dir_all(&out)?;
    let prov = provenance_config(&cfg);
    write_file(&out.join("config.resolved.toml"), prov.to_toml())?;
    let doc = json!({ "seed": cfg.seed, "config": prov, "nulls": nulls });
    write_file(&out.join("nulls.json"), serde_json::to_string_pretty(&doc).expect("serializes") + "\n")?;
    let mut text = format!(
        "bootstrap nulls: {} draws, alpha {}, h2 {}\n\n{:<16} {:<16} {:>14} {:>14}\n",
        cfg.detector.null_draws, cfg.detector.alpha, cfg.pipeline.h2, "method", "belief", "mean", "critical"
    );
    for n in &nulls {
        text.push_str(&format!(
            "{:<16} {:<16} {:>14.6e} {:>14.6e}\n",
            n.method,
            n.belief,
            n.null.mean(),
            n.null.critical
        ));
    }
    write_file(&out.join("nulls.txt"), text.clone())?;
    print!("{text}");
    Ok(())
}
