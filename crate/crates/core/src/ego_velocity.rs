//! Ego-velocity front-end for dense radar point clouds.
//!
//! Every return from a static target constrains the radar-frame sensor
//! velocity `v` through its unit bearing `mu`: the measured radial speed is
//! `v_r = -mu^T v`. Stacking a scan's returns gives an overdetermined linear
//! system; moving objects violate the static-world assumption, so the fit is
//! wrapped in RANSAC over minimal 3-point hypotheses. A final spread pass
//! picks at most `subset_size` inliers that cover the field of view, which
//! downstream become individual radial-speed factors instead of one fused
//! velocity measurement.
//!
//! Geometry matters more than point count here: if all bearings lie near a
//! plane, the out-of-plane velocity component is unobservable and the normal
//! matrix `sum(mu mu^T)` is rank 2. Such scans are rejected with the null
//! direction so the caller can log what was unobservable.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radar::RadarVelocityEstimate;
use crate::types::{RadarDopplerMeasurement, RadarPointCloud, MIN_BEARING_RANGE};

/// Condition-number ceiling of the bearing normal matrix; above this the
/// scan's geometry is treated as rank deficient.
pub const MAX_CONDITION: f64 = 1e6;

/// Tuning of the per-scan RANSAC velocity fit.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Inlier gate on |v_r + mu^T v|, m/s.
    pub inlier_threshold: f64,
    /// Maximum number of spread inliers forwarded as factors.
    pub subset_size: usize,
    /// Spread pass: a candidate too close to a kept point in both azimuth
    /// and elevation (each difference below this, radians) is skipped.
    pub min_angular_separation: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iterations: 100,
            inlier_threshold: 0.2,
            subset_size: 20,
            min_angular_separation: 2.0_f64.to_radians(),
            min_inliers: 10,
            seed: 0,
        }
    }
}

impl RansacConfig {
    /// Appends human-readable invariant violations to `out`.
    pub fn validate(&self, out: &mut Vec<String>) {
        if self.subset_size < 3 {
            out.push(format!(
                "ransac.subset_size must be >= 3 (3-D velocity needs 3 bearings), got {}",
                self.subset_size
            ));
        }
        if !(self.inlier_threshold > 0.0) {
            out.push(format!(
                "ransac.inlier_threshold must be > 0, got {}",
                self.inlier_threshold
            ));
        }
        if self.max_iterations == 0 {
            out.push("ransac.max_iterations must be >= 1".to_string());
        }
        if !(self.min_angular_separation >= 0.0) {
            out.push(format!(
                "ransac.min_angular_separation must be >= 0 radians, got {}",
                self.min_angular_separation
            ));
        }
    }
}

fn check_conditioning(normal: &Matrix3<f64>) -> Result<()> {
    let eig = normal.symmetric_eigen();
    let (mut lo, mut hi) = (0, 0);
    for i in 1..3 {
        if eig.eigenvalues[i] < eig.eigenvalues[lo] {
            lo = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[hi] {
            hi = i;
        }
    }
    let condition = if eig.eigenvalues[lo] > 0.0 {
        eig.eigenvalues[hi] / eig.eigenvalues[lo]
    } else {
        f64::INFINITY
    };
    if !(condition < MAX_CONDITION) {
        let n = eig.eigenvectors.column(lo);
        return Err(Error::DegenerateGeometry {
            condition,
            null_direction: [n.x, n.y, n.z],
        });
    }
    Ok(())
}

/// Least-squares radar-frame velocity from `(bearing, doppler)` pairs,
/// minimizing `sum (v_r + mu^T v)^2`, with covariance `sigma^2 (A^T A)^-1`.
pub fn solve_velocity_lsq(
    points: &[(Vector3<f64>, f64)],
    sigma: f64,
) -> Result<(Vector3<f64>, Matrix3<f64>)> {
    if points.len() < 3 {
        return Err(Error::Invalid(format!(
            "velocity least squares needs at least 3 points, got {}",
            points.len()
        )));
    }
    let mut normal = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (mu, doppler) in points {
        normal += mu * mu.transpose();
        rhs -= mu * *doppler;
    }
    check_conditioning(&normal)?;
    let inv = normal
        .try_inverse()
        .expect("conditioning check guarantees invertibility");
    Ok((inv * rhs, sigma * sigma * inv))
}

fn residual(mu: &Vector3<f64>, doppler: f64, v: &Vector3<f64>) -> f64 {
    doppler + mu.dot(v)
}

/// Robust per-scan velocity fit. Returns the refit estimate and a mask over
/// `cloud.points` that is exactly the thresholded residual set of the
/// returned velocity.
///
/// The scan's RNG is the config seed on a stream derived from the scan
/// stamp, so scans may be processed in any order (or in parallel) without
/// changing results.
pub fn ransac_velocity(
    cloud: &RadarPointCloud,
    cfg: &RansacConfig,
    sigma_doppler: f64,
) -> Result<(RadarVelocityEstimate, Vec<bool>)> {
    let required = cfg.min_inliers.max(3);
    let mut candidates = Vec::with_capacity(cloud.points.len());
    for (i, p) in cloud.points.iter().enumerate() {
        let pos = p.position();
        let range = pos.norm();
        if range >= MIN_BEARING_RANGE {
            candidates.push((i, pos / range, p.doppler));
        }
    }
    if candidates.len() < required {
        return Err(Error::NoConsensus {
            inliers: candidates.len(),
            required,
        });
    }
    // A coplanar scan cannot determine the out-of-plane component no matter
    // which subset wins; reject it up front with the null direction.
    let mut normal = Matrix3::zeros();
    for (_, mu, _) in &candidates {
        normal += mu * mu.transpose();
    }
    check_conditioning(&normal)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(cloud.t_ns as u64);

    let mut best_count = 0;
    let mut best_v = Vector3::zeros();
    for _ in 0..cfg.max_iterations {
        let picks = rand::seq::index::sample(&mut rng, candidates.len(), 3);
        let mut m = Matrix3::zeros();
        let mut b = Vector3::zeros();
        for (row, k) in picks.iter().enumerate() {
            let (_, mu, doppler) = &candidates[k];
            m.row_mut(row).copy_from(&(-mu.transpose()));
            b[row] = *doppler;
        }
        let Some(v) = m.lu().solve(&b) else { continue };
        if !v.iter().all(|x| x.is_finite()) {
            continue;
        }
        let count = candidates
            .iter()
            .filter(|(_, mu, d)| residual(mu, *d, &v).abs() <= cfg.inlier_threshold)
            .count();
        if count > best_count {
            best_count = count;
            best_v = v;
        }
    }
    if best_count < required {
        return Err(Error::NoConsensus {
            inliers: best_count,
            required,
        });
    }

    let consensus: Vec<(Vector3<f64>, f64)> = candidates
        .iter()
        .filter(|(_, mu, d)| residual(mu, *d, &best_v).abs() <= cfg.inlier_threshold)
        .map(|(_, mu, d)| (*mu, *d))
        .collect();
    let (v, covariance) = solve_velocity_lsq(&consensus, sigma_doppler)?;

    // Classify against the refit model, not the hypothesis, so the mask and
    // the returned velocity agree exactly.
    let mut mask = vec![false; cloud.points.len()];
    let mut inlier_count = 0;
    for (i, mu, d) in &candidates {
        if residual(mu, *d, &v).abs() <= cfg.inlier_threshold {
            mask[*i] = true;
            inlier_count += 1;
        }
    }
    if inlier_count < required {
        return Err(Error::NoConsensus {
            inliers: inlier_count,
            required,
        });
    }
    Ok((
        RadarVelocityEstimate {
            t_ns: cloud.t_ns,
            velocity: v,
            covariance,
            inlier_count,
        },
        mask,
    ))
}

fn azimuth_elevation(mu: &Vector3<f64>) -> (f64, f64) {
    (mu.y.atan2(mu.x), mu.z.clamp(-1.0, 1.0).asin())
}

fn wrapped_abs(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    } else if a < -PI {
        a += 2.0 * PI;
    }
    a.abs()
}

/// Greedy field-of-view spread over `(bearing, doppler)` inliers, visiting
/// points by ascending |residual from v_hat|. A candidate is skipped only
/// when some kept point is within `min_sep` of it in azimuth and elevation
/// at once; the pass stops after `n` keeps. Returns indices into `points`.
pub fn select_spread_points(
    points: &[(Vector3<f64>, f64)],
    v_hat: &Vector3<f64>,
    n: usize,
    min_sep: f64,
) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = residual(&points[a].0, points[a].1, v_hat).abs();
        let rb = residual(&points[b].0, points[b].1, v_hat).abs();
        ra.partial_cmp(&rb).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut kept = Vec::new();
    let mut kept_angles: Vec<(f64, f64)> = Vec::new();
    for &i in &order {
        if kept.len() >= n {
            break;
        }
        let (az, el) = azimuth_elevation(&points[i].0);
        let crowded = kept_angles
            .iter()
            .any(|&(ka, ke)| wrapped_abs(az - ka) < min_sep && (el - ke).abs() < min_sep);
        if !crowded {
            kept.push(i);
            kept_angles.push((az, el));
        }
    }
    kept
}

/// Full front-end for one scan: RANSAC fit, spread subselection, and
/// conversion of the kept inliers into doppler measurements (one future
/// radial-speed factor each, stamped with the scan time).
pub fn process_cloud(
    cloud: &RadarPointCloud,
    cfg: &RansacConfig,
    sigma_doppler: f64,
) -> Result<(RadarVelocityEstimate, Vec<RadarDopplerMeasurement>)> {
    let (estimate, mask) = ransac_velocity(cloud, cfg, sigma_doppler)?;
    let inliers: Vec<(Vector3<f64>, f64)> = cloud
        .points
        .iter()
        .zip(&mask)
        .filter(|(_, &kept)| kept)
        .map(|(p, _)| {
            let pos = p.position();
            (pos / pos.norm(), p.doppler)
        })
        .collect();
    let picks = select_spread_points(
        &inliers,
        &estimate.velocity,
        cfg.subset_size,
        cfg.min_angular_separation,
    );
    let measurements = picks
        .iter()
        .map(|&k| RadarDopplerMeasurement {
            t_ns: cloud.t_ns,
            bearing: inliers[k].0,
            radial_speed: inliers[k].1,
            sigma: sigma_doppler,
        })
        .collect();
    Ok((estimate, measurements))
}
