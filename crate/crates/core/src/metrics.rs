//! Trajectory evaluation: absolute pose error, relative pose error over a
//! fixed travel distance, and body-frame velocity errors.
//!
//! Estimates are paired with ground truth by nearest timestamp, rejecting
//! pairs further apart than half the estimate period. APE optionally aligns
//! the whole estimate with the closed-form SE(3) fit (rotation from the SVD
//! of the centered cross-covariance, no scale). RPE pairs samples separated
//! by approximately Δ meters of truth arc length (±5%) and scores the
//! discrepancy of the relative transforms, which cancels any global offset.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{log_rot, RigidTransform};
use crate::types::TrajectorySample;

/// One timestamp-associated truth/estimate pair.
#[derive(Clone, Copy, Debug)]
pub struct TrajectoryRecord {
    pub t_ns: i64,
    pub truth_pose: RigidTransform,
    pub truth_velocity: Vector3<f64>,
    pub est_pose: RigidTransform,
    pub est_velocity: Vector3<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApeAlignment {
    #[default]
    None,
    Se3Umeyama,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct ApeMetrics {
    pub trans_rmse_m: f64,
    pub trans_std_m: f64,
    pub rot_rmse_deg: f64,
    pub rot_std_deg: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RpeMetrics {
    pub delta_m: f64,
    pub pairs: usize,
    pub trans_median_m: f64,
    pub trans_rmse_m: f64,
    /// Translation error as a percentage of the pair's actual arc length.
    pub trans_median_pct: f64,
    pub trans_rmse_pct: f64,
    pub rot_median_deg: f64,
    pub rot_rmse_deg: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct VelocityMetrics {
    pub forward_rmse_mps: f64,
    pub forward_std_mps: f64,
    pub lateral_rmse_mps: f64,
    pub lateral_std_mps: f64,
}

/// Flat report written to metrics.json. RPE fields are null when the
/// trajectory is shorter than the requested delta.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MetricReport {
    pub records: usize,
    pub ape_trans_rmse_m: f64,
    pub ape_trans_std_m: f64,
    pub ape_rot_rmse_deg: f64,
    pub ape_rot_std_deg: f64,
    pub rpe_delta_m: f64,
    pub rpe_pairs: usize,
    pub rpe_trans_median_m: Option<f64>,
    pub rpe_trans_rmse_m: Option<f64>,
    pub rpe_trans_median_pct: Option<f64>,
    pub rpe_trans_rmse_pct: Option<f64>,
    pub rpe_rot_median_deg: Option<f64>,
    pub rpe_rot_rmse_deg: Option<f64>,
    pub vel_forward_rmse_mps: f64,
    pub vel_forward_std_mps: f64,
    pub vel_lateral_rmse_mps: f64,
    pub vel_lateral_std_mps: f64,
}

/// One plotdata.csv row: per-axis world-frame errors at one stamp.
#[derive(Clone, Copy, Debug)]
pub struct PlotRow {
    pub t_ns: i64,
    pub position_error: Vector3<f64>,
    pub velocity_error: Vector3<f64>,
    pub rot_error_deg: f64,
}

fn rmse(values: &[f64]) -> f64 {
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

fn std_dev(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / values.len() as f64).sqrt()
}

fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Pairs each estimate sample with the nearest truth sample, dropping pairs
/// with a stamp gap above half the (median) estimate period.
pub fn associate(
    truth: &[TrajectorySample],
    estimate: &[TrajectorySample],
) -> Result<Vec<TrajectoryRecord>> {
    if truth.is_empty() {
        return Err(Error::EmptyStream("truth trajectory"));
    }
    if estimate.len() < 2 {
        return Err(Error::Invalid(format!(
            "need at least 2 estimate samples to evaluate, got {}",
            estimate.len()
        )));
    }
    let mut gaps: Vec<i64> = estimate.windows(2).map(|w| w[1].t_ns - w[0].t_ns).collect();
    gaps.sort_unstable();
    let half_period = gaps[gaps.len() / 2] / 2;

    let times: Vec<i64> = truth.iter().map(|s| s.t_ns).collect();
    let mut records = Vec::with_capacity(estimate.len());
    for est in estimate {
        let idx = match times.binary_search(&est.t_ns) {
            Ok(i) => i,
            Err(i) => {
                // Nearest of the two neighbors, earlier on ties.
                if i == 0 {
                    0
                } else if i == times.len() {
                    times.len() - 1
                } else if est.t_ns - times[i - 1] <= times[i] - est.t_ns {
                    i - 1
                } else {
                    i
                }
            }
        };
        if (times[idx] - est.t_ns).abs() > half_period {
            continue;
        }
        let t = &truth[idx];
        records.push(TrajectoryRecord {
            t_ns: est.t_ns,
            truth_pose: t.state.world_from_imu,
            truth_velocity: t.state.velocity,
            est_pose: est.state.world_from_imu,
            est_velocity: est.state.velocity,
        });
    }
    if records.len() < 2 {
        return Err(Error::Invalid(
            "fewer than 2 estimate samples associate with the truth".to_string(),
        ));
    }
    Ok(records)
}

/// Closed-form rigid fit moving the estimate positions onto the truth:
/// returns g with g·p_est ≈ p_truth in the least-squares sense.
fn umeyama_se3(records: &[TrajectoryRecord]) -> RigidTransform {
    let n = records.len() as f64;
    let mean_est: Vector3<f64> = records.iter().map(|r| r.est_pose.translation).sum::<Vector3<f64>>() / n;
    let mean_truth: Vector3<f64> =
        records.iter().map(|r| r.truth_pose.translation).sum::<Vector3<f64>>() / n;
    let mut cross = Matrix3::<f64>::zeros();
    for r in records {
        cross += (r.truth_pose.translation - mean_truth)
            * (r.est_pose.translation - mean_est).transpose();
    }
    let svd = cross.svd(true, true);
    let u = svd.u.expect("svd requested");
    let vt = svd.v_t.expect("svd requested");
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let rot_mat = u * d * vt;
    let rotation = crate::lie::Rotation::from_matrix(&rot_mat);
    let translation = mean_truth - rotation.rotate(&mean_est);
    RigidTransform::new(rotation, translation)
}

pub fn ape(records: &[TrajectoryRecord], alignment: ApeAlignment) -> Result<ApeMetrics> {
    if records.len() < 2 {
        return Err(Error::Invalid(
            "APE needs at least 2 associated records".to_string(),
        ));
    }
    let g = match alignment {
        ApeAlignment::None => RigidTransform::identity(),
        ApeAlignment::Se3Umeyama => umeyama_se3(records),
    };
    let mut trans = Vec::with_capacity(records.len());
    let mut rot = Vec::with_capacity(records.len());
    for r in records {
        let aligned = g.compose(&r.est_pose);
        trans.push((aligned.translation - r.truth_pose.translation).norm());
        rot.push(
            log_rot(&r.truth_pose.rotation.inverse().compose(&aligned.rotation))
                .norm()
                .to_degrees(),
        );
    }
    Ok(ApeMetrics {
        trans_rmse_m: rmse(&trans),
        trans_std_m: std_dev(&trans),
        rot_rmse_deg: rmse(&rot),
        rot_std_deg: std_dev(&rot),
    })
}

pub fn rpe(records: &[TrajectoryRecord], delta_m: f64) -> Result<RpeMetrics> {
    if !(delta_m > 0.0) {
        return Err(Error::Invalid(format!(
            "RPE delta must be > 0, got {delta_m}"
        )));
    }
    // Truth arc length accumulated along the associated records.
    let mut arc = Vec::with_capacity(records.len());
    let mut total = 0.0;
    arc.push(0.0);
    for w in records.windows(2) {
        total += (w[1].truth_pose.translation - w[0].truth_pose.translation).norm();
        arc.push(total);
    }

    let mut trans_m = Vec::new();
    let mut trans_pct = Vec::new();
    let mut rot_deg = Vec::new();
    let mut j = 0usize;
    for i in 0..records.len() {
        if j < i + 1 {
            j = i + 1;
        }
        while j < records.len() && arc[j] - arc[i] < 0.95 * delta_m {
            j += 1;
        }
        if j >= records.len() {
            break;
        }
        let gap = arc[j] - arc[i];
        if gap > 1.05 * delta_m {
            continue;
        }
        let rel_truth = records[i]
            .truth_pose
            .inverse()
            .compose(&records[j].truth_pose);
        let rel_est = records[i].est_pose.inverse().compose(&records[j].est_pose);
        let err = rel_truth.inverse().compose(&rel_est);
        let e_t = err.translation.norm();
        trans_m.push(e_t);
        trans_pct.push(100.0 * e_t / gap);
        rot_deg.push(log_rot(&err.rotation).norm().to_degrees());
    }
    if trans_m.is_empty() {
        return Err(Error::Invalid(format!(
            "trajectory arc length {total:.3} m yields no pairs {delta_m} m apart"
        )));
    }
    Ok(RpeMetrics {
        delta_m,
        pairs: trans_m.len(),
        trans_median_m: median(&trans_m),
        trans_rmse_m: rmse(&trans_m),
        trans_median_pct: median(&trans_pct),
        trans_rmse_pct: rmse(&trans_pct),
        rot_median_deg: median(&rot_deg),
        rot_rmse_deg: rmse(&rot_deg),
    })
}

pub fn body_velocity_error(records: &[TrajectoryRecord]) -> Result<VelocityMetrics> {
    if records.is_empty() {
        return Err(Error::EmptyStream("associated records"));
    }
    let mut forward = Vec::with_capacity(records.len());
    let mut lateral = Vec::with_capacity(records.len());
    for r in records {
        let err_body = r
            .truth_pose
            .rotation
            .inverse()
            .rotate(&(r.est_velocity - r.truth_velocity));
        forward.push(err_body.x);
        lateral.push(err_body.y);
    }
    Ok(VelocityMetrics {
        forward_rmse_mps: rmse(&forward),
        forward_std_mps: std_dev(&forward),
        lateral_rmse_mps: rmse(&lateral),
        lateral_std_mps: std_dev(&lateral),
    })
}

pub fn plot_rows(records: &[TrajectoryRecord]) -> Vec<PlotRow> {
    records
        .iter()
        .map(|r| PlotRow {
            t_ns: r.t_ns,
            position_error: r.est_pose.translation - r.truth_pose.translation,
            velocity_error: r.est_velocity - r.truth_velocity,
            rot_error_deg: log_rot(&r.truth_pose.rotation.inverse().compose(&r.est_pose.rotation))
                .norm()
                .to_degrees(),
        })
        .collect()
}

/// Assembles the flat report; RPE fields go null when the run is too short.
pub fn compute_report(
    records: &[TrajectoryRecord],
    rpe_delta_m: f64,
    alignment: ApeAlignment,
) -> Result<MetricReport> {
    let a = ape(records, alignment)?;
    let v = body_velocity_error(records)?;
    let r = rpe(records, rpe_delta_m).ok();
    Ok(MetricReport {
        records: records.len(),
        ape_trans_rmse_m: a.trans_rmse_m,
        ape_trans_std_m: a.trans_std_m,
        ape_rot_rmse_deg: a.rot_rmse_deg,
        ape_rot_std_deg: a.rot_std_deg,
        rpe_delta_m,
        rpe_pairs: r.map_or(0, |r| r.pairs),
        rpe_trans_median_m: r.map(|r| r.trans_median_m),
        rpe_trans_rmse_m: r.map(|r| r.trans_rmse_m),
        rpe_trans_median_pct: r.map(|r| r.trans_median_pct),
        rpe_trans_rmse_pct: r.map(|r| r.trans_rmse_pct),
        rpe_rot_median_deg: r.map(|r| r.rot_median_deg),
        rpe_rot_rmse_deg: r.map(|r| r.rot_rmse_deg),
        vel_forward_rmse_mps: v.forward_rmse_mps,
        vel_forward_std_mps: v.forward_std_mps,
        vel_lateral_rmse_mps: v.lateral_rmse_mps,
        vel_lateral_std_mps: v.lateral_std_mps,
    })
}
