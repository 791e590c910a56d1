//! Command-line front end: run scenarios, sweep capacities, export load
//! profiles, and validate configuration files.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use evgrid::scenario::{
    capacity_sweep, compute_metrics, config_base, export_load_profile, sweep_to_csv,
    ScenarioConfig, SweepConfig,
};
use evgrid::SimRecord;

#[derive(Parser)]
#[command(
    name = "evgrid",
    about = "Discrete-event simulator for managed EV charging facilities",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write the record, summary, and metrics.
    Run {
        /// Scenario config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the scenario's algorithm by name.
        #[arg(long)]
        algorithm: Option<String>,
        /// Output directory (created if missing).
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Run a capacity sweep and write the comparison table.
    Sweep {
        /// Sweep config (JSON).
        #[arg(long)]
        config: PathBuf,
        /// Override the capacity grid, e.g. `5,10,20` (kW).
        #[arg(long, value_delimiter = ',')]
        capacity_list: Option<Vec<f64>>,
        /// Worker threads (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Convert a run record into a grid-facing load-profile CSV.
    Export {
        /// A `record.json` produced by `run`.
        #[arg(long)]
        record: PathBuf,
        /// Add one column per phase angle.
        #[arg(long)]
        phases: bool,
        /// Output CSV path.
        #[arg(long, default_value = "load_profile.csv")]
        out: PathBuf,
    },
    /// Check a scenario or sweep config without running it.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn run_scenario(
    config_path: &Path,
    seed: Option<u64>,
    algorithm: Option<String>,
    out_dir: &Path,
) -> Result<()> {
    let mut config = ScenarioConfig::from_file(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(name) = algorithm {
        config.algorithm = evgrid::scenario::AlgorithmConfig::named(&name);
    }
    let base = config_base(config_path);
    let record = config.run(&base)?;
    let tariff = config.build_signals(&base)?.tariff;
    let mut metrics = compute_metrics(&record, tariff.as_ref())?;
    metrics.algorithm = Some(config.algorithm.name.clone());

    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    write(&out_dir.join("record.csv"), &record.to_csv())?;
    write(&out_dir.join("record.json"), &record.to_json()?)?;
    let summary = serde_json::json!({
        "scenario": config.name,
        "seed": config.seed,
        "algorithm": config.algorithm.name,
        "periods": record.periods,
        "metrics": metrics,
        "sessions": record.sessions,
        "warnings": record.warnings,
        "solver_diagnostics": record.solver_diagnostics,
    });
    write(
        &out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary)?,
    )?;
    println!(
        "wrote {}: {} periods, {} sessions, demand met {}",
        out_dir.display(),
        record.periods,
        record.sessions.len(),
        metrics
            .demand_met
            .map(|d| format!("{:.1}%", d * 100.0))
            .unwrap_or_else(|| "n/a".into()),
    );
    Ok(())
}

fn run_sweep(
    config_path: &Path,
    capacity_list: Option<Vec<f64>>,
    jobs: Option<usize>,
    out_dir: &Path,
) -> Result<()> {
    let mut config = SweepConfig::from_file(config_path)
        .with_context(|| format!("loading {}", config_path.display()))?;
    if let Some(capacities) = capacity_list {
        config.capacities_kw = capacities;
    }
    if jobs.is_some() {
        config.jobs = jobs;
    }
    let rows = capacity_sweep(&config, &config_base(config_path))?;
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))?;
    let csv_path = out_dir.join("sweep.csv");
    write(&csv_path, &sweep_to_csv(&rows))?;
    println!("wrote {} ({} rows)", csv_path.display(), rows.len());
    Ok(())
}

fn run_export(record_path: &Path, phases: bool, out: &Path) -> Result<()> {
    let text = fs::read_to_string(record_path)
        .with_context(|| format!("reading {}", record_path.display()))?;
    let record = SimRecord::from_json(&text)?;
    write(out, &export_load_profile(&record, phases))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn run_validate(config_path: &Path) -> Result<()> {
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let base = config_base(config_path);
    let value: serde_json::Value = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", config_path.display()))?;
    let kind = if value.get("capacities_kw").is_some() {
        let sweep: SweepConfig = serde_json::from_str(&text)?;
        sweep.scenario.validate(&base)?;
        for algorithm in &sweep.algorithms {
            algorithm.build()?;
        }
        "sweep config"
    } else if value.get("events").is_some() {
        let scenario: ScenarioConfig = serde_json::from_str(&text)?;
        scenario.validate(&base)?;
        "scenario config"
    } else if value.get("evses").is_some() {
        let spec: evgrid::NetworkSpec = serde_json::from_str(&text)?;
        spec.build()?;
        "network description"
    } else if value.get("seasons").is_some() {
        let tariff = evgrid::Tariff::from_json(&text)?;
        tariff.validate()?;
        "tariff schedule"
    } else {
        anyhow::bail!(
            "{}: unrecognized config shape (expected a scenario, sweep, network, or tariff document)",
            config_path.display()
        );
    };
    println!("{}: valid {kind}", config_path.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            seed,
            algorithm,
            out_dir,
        } => run_scenario(&config, seed, algorithm, &out_dir),
        Command::Sweep {
            config,
            capacity_list,
            jobs,
            out_dir,
        } => run_sweep(&config, capacity_list, jobs, &out_dir),
        Command::Export {
            record,
            phases,
            out,
        } => run_export(&record, phases, &out),
        Command::Validate { config } => run_validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}
