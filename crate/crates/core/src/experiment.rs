//! End-to-end experiment pipeline: synthesize a dataset (optional), replay
//! it through the sliding-window smoother, score the result against truth,
//! and leave all artifacts on disk.
//!
//! Artifact layout under the output directory:
//!   estimate.csv       estimated trajectory (decimated by output_stride)
//!   diagnostics.jsonl  one line per optimization (cost trace, counters)
//!   metrics.json       flat MetricReport
//!   plotdata.csv       per-stamp world-frame errors for external plotting
//!   dataset/           the simulated dataset + truth.csv (run verb only)
//!
//! The estimator always consumes the dataset from disk, also when it was
//! simulated moments earlier, so the parsers sit on the tested path and a
//! rerun from the written files reproduces the run byte for byte.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::dataset::{
    load_dataset, load_trajectory_csv, write_imu_csv, write_lo_pose_csv, write_radar_cloud_jsonl,
    write_radar_doppler_csv, write_rig_json, write_trajectory_csv, Event, LoadOptions,
};
use crate::error::{Error, Result};
use crate::metrics::{associate, compute_report, plot_rows, MetricReport, PlotRow};
use crate::sim::{simulate, SimOutput};
use crate::smoother::{FusionMode, Smoother};
use crate::types::TrajectorySample;

pub const PLOTDATA_HEADER: &str = "t_ns,err_px,err_py,err_pz,err_vx,err_vy,err_vz,err_rot_deg";

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))
}

/// Writes a simulated dataset in the on-disk exchange formats, plus
/// truth.csv in the estimate schema.
pub fn write_sim_output(dir: &Path, out: &SimOutput) -> Result<()> {
    ensure_dir(dir)?;
    write_imu_csv(&dir.join("imu.csv"), &out.dataset.imu)?;
    if !out.dataset.radar_doppler.is_empty() {
        write_radar_doppler_csv(&dir.join("radar_doppler.csv"), &out.dataset.radar_doppler)?;
    }
    if !out.dataset.radar_clouds.is_empty() {
        write_radar_cloud_jsonl(&dir.join("radar_cloud.jsonl"), &out.dataset.radar_clouds)?;
    }
    if !out.dataset.lo.is_empty() {
        write_lo_pose_csv(&dir.join("lo_pose.csv"), &out.dataset.lo)?;
    }
    let rig = out
        .dataset
        .rig
        .as_ref()
        .ok_or_else(|| Error::Invalid("simulated dataset lacks a rig".to_string()))?;
    write_rig_json(&dir.join("rig.json"), rig)?;
    write_trajectory_csv(&dir.join("truth.csv"), &out.truth)
}

/// Simulates the configured scenario and writes the dataset into `dir`.
pub fn simulate_to_dir(cfg: &RunConfig, seed: u64, dir: &Path) -> Result<SimOutput> {
    let spec = cfg.scenario.as_ref().ok_or_else(|| {
        Error::Config(vec![
            "a [scenario] section is required to simulate".to_string()
        ])
    })?;
    let out = simulate(spec, seed)?;
    write_sim_output(dir, &out)?;
    Ok(out)
}

fn write_diagnostics(path: &Path, smoother: &Smoother) -> Result<()> {
    let mut text = String::new();
    for d in smoother.diagnostics() {
        let line = serde_json::to_string(d).map_err(|e| Error::Json {
            context: "serializing diagnostics".to_string(),
            source: e,
        })?;
        text.push_str(&line);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Replays a dataset directory through the smoother and writes estimate.csv
/// and diagnostics.jsonl into `out_dir`. Diagnostics land on disk even when
/// the estimator diverges, so failed runs stay inspectable.
pub fn estimate_dataset(
    cfg: &RunConfig,
    dataset_dir: &Path,
    out_dir: &Path,
) -> Result<Vec<TrajectorySample>> {
    ensure_dir(out_dir)?;
    let opts = LoadOptions {
        max_doppler: cfg.radar.max_doppler,
        lo_sigma: cfg.lo.sigma_vector(),
    };
    let ds = load_dataset(dataset_dir, &opts)?;
    let rig = ds
        .rig
        .ok_or_else(|| Error::Invalid("dataset lacks rig.json".to_string()))?;
    let initial_pose = if cfg.estimator.mode == FusionMode::Ri {
        None
    } else {
        ds.lo.first().map(|m| m.world_from_imu)
    };
    let mut smoother = Smoother::new(cfg.estimator, cfg.imu, cfg.radar, rig, initial_pose);

    let replayed = (|| -> Result<()> {
        for (_t, event) in ds.merged_events() {
            match event {
                Event::Imu(i) => smoother.add_imu(ds.imu[i])?,
                Event::RadarDoppler(i) => smoother.add_radar(ds.radar_doppler[i])?,
                Event::RadarCloud(i) => {
                    smoother.add_radar_cloud(&ds.radar_clouds[i], &cfg.ransac)?
                }
                Event::Lo(i) => smoother.add_lo(ds.lo[i])?,
            }
        }
        smoother.finish()
    })();
    write_diagnostics(&out_dir.join("diagnostics.jsonl"), &smoother)?;
    replayed?;

    let stride = cfg.estimator.output_stride.max(1);
    let estimate: Vec<TrajectorySample> =
        smoother.trajectory().iter().copied().step_by(stride).collect();
    write_trajectory_csv(&out_dir.join("estimate.csv"), &estimate)?;
    Ok(estimate)
}

fn write_plotdata(path: &Path, rows: &[PlotRow]) -> Result<()> {
    let mut text = String::with_capacity(64 * rows.len() + 64);
    text.push_str(PLOTDATA_HEADER);
    text.push('\n');
    for r in rows {
        let p = r.position_error;
        let v = r.velocity_error;
        writeln!(
            text,
            "{},{},{},{},{},{},{},{}",
            r.t_ns, p.x, p.y, p.z, v.x, v.y, v.z, r.rot_error_deg
        )
        .expect("writing to String cannot fail");
    }
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn write_metrics(path: &Path, report: &MetricReport) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| Error::Json {
        context: "serializing metrics".to_string(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Scores an estimate against truth.csv and writes metrics.json and
/// plotdata.csv into `out_dir`.
pub fn evaluate_estimate(
    cfg: &RunConfig,
    truth_csv: &Path,
    estimate: &[TrajectorySample],
    out_dir: &Path,
) -> Result<MetricReport> {
    ensure_dir(out_dir)?;
    let truth = load_trajectory_csv(truth_csv)?;
    let records = associate(&truth, estimate)?;
    let report = compute_report(
        &records,
        cfg.evaluation.rpe_delta_m,
        cfg.evaluation.ape_alignment,
    )?;
    write_metrics(&out_dir.join("metrics.json"), &report)?;
    write_plotdata(&out_dir.join("plotdata.csv"), &plot_rows(&records))?;
    Ok(report)
}

/// Resolves where the dataset for this run lives: a configured [scenario]
/// simulates into `<out>/dataset`, otherwise [dataset].dir is used as-is.
fn resolve_dataset_dir(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    if cfg.scenario.is_some() {
        let dir = out_dir.join("dataset");
        simulate_to_dir(cfg, seed, &dir)?;
        Ok(dir)
    } else if let Some(ds) = &cfg.dataset {
        Ok(ds.dir.clone())
    } else {
        Err(Error::Config(vec![
            "either a [scenario] or a [dataset] section is required".to_string(),
        ]))
    }
}

/// The full pipeline: simulate (when a scenario is configured), estimate,
/// evaluate. Returns the metric report; all artifacts land in `out_dir`.
pub fn run_experiment(cfg: &RunConfig, seed: u64, out_dir: &Path) -> Result<MetricReport> {
    cfg.validate()?;
    ensure_dir(out_dir)?;
    let dataset_dir = resolve_dataset_dir(cfg, seed, out_dir)?;
    let estimate = estimate_dataset(cfg, &dataset_dir, out_dir)?;
    evaluate_estimate(cfg, &dataset_dir.join("truth.csv"), &estimate, out_dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::ScenarioSpec;

    fn tmp_dir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("lri-experiment-{tag}-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn short_scenario() -> ScenarioSpec {
        let mut spec = ScenarioSpec::default();
        spec.trajectory.duration_s = 4.0;
        spec.trajectory.max_speed = 3.0;
        spec.trajectory.max_yaw_rate = 0.4;
        spec.trajectory.imu_rate_hz = 100.0;
        spec.radar = Some(crate::sim::RadarSimSpec::default());
        spec.lo = Some(crate::sim::LoSimSpec::default());
        spec
    }

    #[test]
    fn run_experiment_writes_every_artifact() {
        let dir = tmp_dir("artifacts");
        let mut cfg = RunConfig::default();
        cfg.scenario = Some(short_scenario());
        cfg.evaluation.rpe_delta_m = 2.0;
        let report = run_experiment(&cfg, 5, &dir).unwrap();
        assert!(report.records > 100);
        for name in [
            "estimate.csv",
            "diagnostics.jsonl",
            "metrics.json",
            "plotdata.csv",
            "dataset/imu.csv",
            "dataset/radar_doppler.csv",
            "dataset/lo_pose.csv",
            "dataset/rig.json",
            "dataset/truth.csv",
        ] {
            assert!(dir.join(name).exists(), "missing {name}");
        }
        let metrics = fs::read_to_string(dir.join("metrics.json")).unwrap();
        assert!(metrics.contains("ape_trans_rmse_m"));
        let plot = fs::read_to_string(dir.join("plotdata.csv")).unwrap();
        assert!(plot.starts_with(PLOTDATA_HEADER));
        let _ = fs::remove_dir_all(&dir);
    }

    #[test]
    fn reruns_are_byte_identical() {
        let dir_a = tmp_dir("rerun-a");
        let dir_b = tmp_dir("rerun-b");
        let mut cfg = RunConfig::default();
        cfg.scenario = Some(short_scenario());
        cfg.scenario.as_mut().unwrap().lo = Some(crate::sim::LoSimSpec {
            sigma_xy: 0.05,
            ..Default::default()
        });
        cfg.evaluation.rpe_delta_m = 2.0;
        run_experiment(&cfg, 7, &dir_a).unwrap();
        run_experiment(&cfg, 7, &dir_b).unwrap();
        for name in ["estimate.csv", "metrics.json"] {
            let a = fs::read(dir_a.join(name)).unwrap();
            let b = fs::read(dir_b.join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
        let _ = fs::remove_dir_all(&dir_a);
        let _ = fs::remove_dir_all(&dir_b);
    }

    #[test]
    fn output_stride_decimates_the_estimate() {
        let dir_full = tmp_dir("stride-full");
        let dir_strided = tmp_dir("stride-4");
        let mut cfg = RunConfig::default();
        cfg.scenario = Some(short_scenario());
        let full = run_experiment(&cfg, 3, &dir_full).unwrap();
        cfg.estimator.output_stride = 4;
        let strided = run_experiment(&cfg, 3, &dir_strided).unwrap();
        let want = (full.records + 3) / 4;
        assert!(
            (strided.records as i64 - want as i64).abs() <= 1,
            "full {} strided {}",
            full.records,
            strided.records
        );
        let _ = fs::remove_dir_all(&dir_full);
        let _ = fs::remove_dir_all(&dir_strided);
    }

    #[test]
    fn missing_scenario_and_dataset_is_a_config_error() {
        let dir = tmp_dir("no-source");
        let cfg = RunConfig::default();
        let err = run_experiment(&cfg, 1, &dir).unwrap_err();
        match err {
            Error::Config(v) => assert!(v[0].contains("[scenario]"), "{v:?}"),
            other => panic!("expected Config, got {other:?}"),
        }
        let _ = fs::remove_dir_all(&dir);
    }
}
