//! Command-line frontend: synthesize datasets, replay them through the
//! sliding-window estimator, and score trajectories against ground truth.
//!
//! Exit codes: 0 on success, 2 when the estimator diverged (diagnostics are
//! still written), 1 for every other failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lri_core::config::RunConfig;
use lri_core::dataset::load_trajectory_csv;
use lri_core::experiment;
use lri_core::metrics::MetricReport;
use lri_core::{Error, Result};

#[derive(Parser)]
#[command(name = "lri", version, about = "Radar-inertial odometry estimator toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Directory for output artifacts.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the configured [scenario] into a dataset directory.
    Simulate(CommonArgs),
    /// Run the estimator over a dataset and write estimate.csv.
    Estimate(CommonArgs),
    /// Score <out>/estimate.csv against the dataset's truth.csv.
    Evaluate(CommonArgs),
    /// Simulate (when a scenario is configured), estimate, and evaluate.
    Run(CommonArgs),
}

/// The configured dataset directory, falling back to `<out>/dataset` left
/// behind by a previous `run`.
fn dataset_dir(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    if let Some(ds) = &cfg.dataset {
        return Ok(ds.dir.clone());
    }
    let fallback = out.join("dataset");
    if fallback.join("imu.csv").exists() {
        return Ok(fallback);
    }
    Err(Error::Config(vec![
        "a [dataset] section is required (or run `lri run` first so <out>/dataset exists)"
            .to_string(),
    ]))
}

fn print_report(r: &MetricReport) {
    println!("records             {}", r.records);
    println!(
        "APE translation     {:.4} m RMSE ({:.4} std)",
        r.ape_trans_rmse_m, r.ape_trans_std_m
    );
    println!(
        "APE rotation        {:.4} deg RMSE ({:.4} std)",
        r.ape_rot_rmse_deg, r.ape_rot_std_deg
    );
    match (r.rpe_trans_median_m, r.rpe_trans_median_pct, r.rpe_rot_median_deg) {
        (Some(m), Some(pct), Some(rot)) => {
            println!(
                "RPE({} m)           {:.4} m median ({:.2} %), rotation {:.4} deg median, {} pairs",
                r.rpe_delta_m, m, pct, rot, r.rpe_pairs
            );
        }
        _ => println!(
            "RPE({} m)           not available (trajectory too short)",
            r.rpe_delta_m
        ),
    }
    println!(
        "velocity RMSE       {:.4} m/s forward, {:.4} m/s lateral",
        r.vel_forward_rmse_mps, r.vel_lateral_rmse_mps
    );
}

fn dispatch(cli: Cli) -> Result<()> {
    let (verb, args) = match cli.command {
        Command::Simulate(a) => ("simulate", a),
        Command::Estimate(a) => ("estimate", a),
        Command::Evaluate(a) => ("evaluate", a),
        Command::Run(a) => ("run", a),
    };
    let cfg = RunConfig::load(&args.config)?;
    cfg.validate()?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let out = args.out.as_path();

    match verb {
        "simulate" => {
            let sim = experiment::simulate_to_dir(&cfg, seed, out)?;
            println!(
                "dataset written to {} ({} imu, {} radar doppler, {} radar clouds, {} lo)",
                out.display(),
                sim.dataset.imu.len(),
                sim.dataset.radar_doppler.len(),
                sim.dataset.radar_clouds.len(),
                sim.dataset.lo.len()
            );
        }
        "estimate" => {
            let dir = dataset_dir(&cfg, out)?;
            let estimate = experiment::estimate_dataset(&cfg, &dir, out)?;
            println!(
                "estimate written to {} ({} states)",
                out.join("estimate.csv").display(),
                estimate.len()
            );
        }
        "evaluate" => {
            let dir = dataset_dir(&cfg, out)?;
            let estimate = load_trajectory_csv(&out.join("estimate.csv"))?;
            let report =
                experiment::evaluate_estimate(&cfg, &dir.join("truth.csv"), &estimate, out)?;
            print_report(&report);
        }
        "run" => {
            let report = experiment::run_experiment(&cfg, seed, out)?;
            print_report(&report);
            println!("artifacts in {}", out.display());
        }
        _ => unreachable!(),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            if matches!(e, Error::Diverged(_)) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
