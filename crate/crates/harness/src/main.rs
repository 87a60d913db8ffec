use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use sere_harness::{grid_search, run_experiment, AlgoSpec, EnvKind, ExperimentConfig, GridRanges};

/// Run clustered neural bandit experiments with optional selective reinitialization.
#[derive(Debug, Parser)]
#[command(name = "sere", version)]
struct Cli {
    /// TOML experiment configuration; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// club_n, mcnb_lite, club_n+sere or mcnb_lite+sere.
    #[arg(long)]
    algo: Option<AlgoSpec>,

    /// piecewise, perturbed or dataset.
    #[arg(long)]
    env: Option<EnvKind>,

    #[arg(long)]
    rounds: Option<usize>,

    /// Comma-separated seeds, e.g. `0,1,2,3,4`.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,

    /// Output directory (the SERE_OUT_DIR environment variable takes precedence).
    #[arg(long)]
    out: Option<PathBuf>,

    /// TOML grid ranges; runs a grid search instead of a single experiment.
    #[arg(long)]
    grid: Option<PathBuf>,
}

fn load(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(algo) = cli.algo {
        cfg.set_algo(algo);
    }
    if let Some(env) = cli.env {
        cfg.env = env;
    }
    if let Some(rounds) = cli.rounds {
        cfg.rounds = rounds;
    }
    if let Some(seeds) = &cli.seeds {
        cfg.seeds = seeds.clone();
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = Some(out.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load(&cli)?;
    if let Some(grid) = &cli.grid {
        let ranges: GridRanges = toml::from_str(&std::fs::read_to_string(grid)?)?;
        let result = grid_search(&cfg, &ranges)?;
        if let Some(dir) = cfg.resolved_out_dir() {
            result.write(&dir)?;
        }
        println!(
            "grid: {} points run, {} infeasible skipped",
            result.table.len(),
            result.skipped.len()
        );
        println!("best: {}", serde_json::to_string(&result.best_row)?);
        return Ok(());
    }
    let result = run_experiment(&cfg)?;
    let agg = &result.aggregate;
    println!(
        "{} on {:?}: average regret {:.5} +- {:.5} over {} seeds",
        agg.algorithm,
        cfg.env,
        agg.mean_average_regret,
        agg.sd_average_regret,
        agg.seeds.len()
    );
    for r in &agg.runs {
        println!(
            "  seed {}: R_T {:.2}, resets {} ({:.2}% of rounds), sere {:.4} ms / round {:.4} ms",
            r.seed,
            r.cumulative_regret,
            r.total_resets,
            100.0 * r.reinit.fraction,
            r.mean_sere_ms,
            r.mean_round_ms
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
