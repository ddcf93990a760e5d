use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tsnas::config::RunConfig;
use tsnas::evaluation::Normalization;
use tsnas::ged::architecture_ged;
use tsnas::reward::RewardMode;
use tsnas::search::SearchOptions;
use tsnas::search_space::{random_genotype, Genotype};
use tsnas::{workflow, Error, Result};

/// Architecture search for chain-structured MLP forecasters.
#[derive(Parser)]
#[command(name = "tsnas", version)]
struct Cli {
    /// Run configuration (TOML). Defaults apply when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Run directory holding every artifact.
    #[arg(long, global = true, default_value = "run")]
    run_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the walk-forward plan per horizon.
    Split,
    /// Run the controller search, resuming from a checkpoint when present.
    Search {
        /// Reward mode, overriding the config: wv_ged or entropy.
        #[arg(long)]
        mode: Option<String>,
        /// Ignore any checkpoint and start over.
        #[arg(long)]
        fresh: bool,
        /// Stop after this many episodes in total (resumable).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Retrain selected models on the test subsets and score them.
    Evaluate {
        #[arg(long)]
        mode: Option<String>,
        /// Ensemble size; defaults to evaluate.top_k.
        #[arg(long)]
        top: Option<usize>,
        /// Evaluate this genotype file instead of the search results.
        #[arg(long)]
        genotype: Option<PathBuf>,
    },
    /// Rank models from a metrics CSV (model,rmse,mse,mae,medae,minutes).
    Rank {
        #[arg(long)]
        input: PathBuf,
        /// vector or min_max; defaults to evaluate.normalization.
        #[arg(long)]
        normalization: Option<String>,
        /// Output CSV; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the report tables under <run-dir>/report.
    Report,
    /// Print the edit distance between two genotype files as JSON.
    Ged { a: PathBuf, b: PathBuf },
    /// Print random genotypes, one JSON object per line.
    Sample {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    match &cli.config {
        Some(p) => RunConfig::load(p),
        None => {
            let existing = cli.run_dir.join("config.toml");
            if existing.exists() {
                RunConfig::load(existing)
            } else {
                Ok(RunConfig::default())
            }
        }
    }
}

fn with_mode(mut cfg: RunConfig, mode: &Option<String>) -> Result<RunConfig> {
    if let Some(m) = mode {
        cfg.reward.mode = m.parse::<RewardMode>()?;
    }
    Ok(cfg)
}

fn read_genotype(path: &Path) -> Result<Genotype> {
    let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Genotype::from_json(&s)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Split => {
            let cfg = load_config(cli)?;
            for (h, plan) in workflow::split(&cfg, &cli.run_dir)? {
                println!("horizon {h}: {} subsets written to {}", plan.subsets.len(), cli.run_dir.join(format!("plan_h{h}.json")).display());
            }
        }
        Command::Search { mode, fresh, stop_after } => {
            let cfg = with_mode(load_config(cli)?, mode)?;
            let opts = SearchOptions {
                resume: !fresh,
                stop_after: *stop_after,
                ..SearchOptions::default()
            };
            let out = workflow::search(&cfg, &cli.run_dir, &opts)?;
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Command::Evaluate { mode, top, genotype } => {
            let cfg = with_mode(load_config(cli)?, mode)?;
            let report = match genotype {
                Some(p) => {
                    let g = read_genotype(p)?;
                    let panel = workflow::load_data(&cfg)?;
                    workflow::evaluate_genotypes(&cfg, &panel, &[g], "genotype")?
                }
                None => workflow::evaluate(&cfg, &cli.run_dir, top.unwrap_or(cfg.evaluate.top_k))?,
            };
            for m in &report.models {
                println!(
                    "{:<24} rmse {:.6}  mae {:.6}  minutes {:.3}",
                    m.model, m.aggregate.rmse, m.aggregate.mae, m.minutes
                );
            }
        }
        Command::Rank { input, normalization, out } => {
            let norm = match normalization {
                Some(n) => n.parse::<Normalization>()?,
                None => load_config(cli)?.evaluate.normalization,
            };
            let table = workflow::rank_file(input, norm)?;
            match out {
                Some(p) => table.write_csv(std::fs::File::create(p).map_err(|e| Error::io(p, e))?)?,
                None => table.write_csv(std::io::stdout().lock())?,
            }
        }
        Command::Report => {
            let dir = workflow::write_report(&cli.run_dir)?;
            println!("report written to {}", dir.display());
        }
        Command::Ged { a, b } => {
            let report = architecture_ged(&read_genotype(a)?, &read_genotype(b)?);
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Sample { seed, count } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            for _ in 0..*count {
                println!("{}", serde_json::to_string(&random_genotype(&mut rng))?);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
