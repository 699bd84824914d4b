//! Sensor synthesis from analytic ground truth.
//!
//! The IMU is synthesized interval-consistently: each message at t_k carries
//! the average body rate Log(R_kᵀR_{k+1})/dt and the specific force
//! R_kᵀ((v_{k+1}−v_k)/dt − g), so the discrete propagation model reproduces
//! the true attitude and velocity exactly and the position to the trapezoid
//! error O(dt³) per step. White noise enters scaled by 1/√dt (a sampled
//! density) and the biases random-walk with σ_b√dt increments, matching the
//! factor whitening on the estimation side.
//!
//! Radar returns are projections −μᵀv_R of the radar-frame velocity
//! v_R = R_IRᵀ(R_WIᵀ v_W + ω × p_IR), either one beam per tick from a fixed
//! forward fan (narrow-FoV regime, all bearings in the body plane so the
//! vertical axis stays radar-unobservable) or as full point clouds for the
//! scan-based front end. A configurable fraction of returns is shifted by a
//! constant doppler offset to model moving objects.
//!
//! Odometry poses are corrupted on the right, T̃ = T·exp(ε^∧), with ε drawn
//! per message in the body frame; the degradation protocol populates only
//! the x,y translation components, optionally with σ_xy = √‖v‖, and holds
//! off until a warm-up time has passed.

use nalgebra::{SVector, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{exp_se3, log_rot};
use crate::types::{
    ImuMeasurement, LoPoseMeasurement, RadarDopplerMeasurement, RadarPoint, RadarPointCloud,
    SensorRig,
};

use super::trajectory::{Kinematics, Trajectory};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuSimSpec {
    /// White-noise densities, in measurement units per √Hz.
    pub sigma_g: f64,
    pub sigma_a: f64,
    /// Bias random-walk densities.
    pub sigma_bg: f64,
    pub sigma_ba: f64,
    pub initial_bias_gyro: [f64; 3],
    pub initial_bias_accel: [f64; 3],
}

impl Default for ImuSimSpec {
    fn default() -> Self {
        ImuSimSpec {
            sigma_g: 0.0,
            sigma_a: 0.0,
            sigma_bg: 0.0,
            sigma_ba: 0.0,
            initial_bias_gyro: [0.0; 3],
            initial_bias_accel: [0.0; 3],
        }
    }
}

impl ImuSimSpec {
    pub fn validate(&self, out: &mut Vec<String>) {
        for (name, v) in [
            ("scenario.imu.sigma_g", self.sigma_g),
            ("scenario.imu.sigma_a", self.sigma_a),
            ("scenario.imu.sigma_bg", self.sigma_bg),
            ("scenario.imu.sigma_ba", self.sigma_ba),
        ] {
            if !(v >= 0.0) {
                out.push(format!("{name} must be >= 0, got {v}"));
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RadarSimKind {
    /// A fixed fan of bearings, one doppler per tick, cycling through beams.
    Beams,
    /// Full point-cloud scans for the RANSAC front end.
    Cloud,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarSimSpec {
    pub kind: RadarSimKind,
    /// Per-return sigma written to the dataset (the sensor's claimed
    /// accuracy); must be positive even for noiseless runs.
    pub sigma: f64,
    /// Injected noise std; defaults to `sigma` when absent.
    pub noise: Option<f64>,
    pub outlier_fraction: f64,
    pub outlier_offset: f64,
    /// Beam bearings in the radar frame (normalized on use).
    pub bearings: Vec<[f64; 3]>,
    /// Beam cadence; one beam fires per tick.
    pub period_ns: i64,
    /// Cloud scan rate.
    pub rate_hz: f64,
    pub points_per_scan: usize,
    /// Cloud field of view, half-angles.
    pub azimuth_fov_deg: f64,
    pub elevation_fov_deg: f64,
    pub range_min_m: f64,
    pub range_max_m: f64,
}

/// Forward fan of five beams, ±20° azimuth, all at zero elevation.
pub fn default_beam_fan() -> Vec<[f64; 3]> {
    [-20.0f64, -10.0, 0.0, 10.0, 20.0]
        .iter()
        .map(|az| {
            let a = az.to_radians();
            [a.cos(), a.sin(), 0.0]
        })
        .collect()
}

impl Default for RadarSimSpec {
    fn default() -> Self {
        RadarSimSpec {
            kind: RadarSimKind::Beams,
            sigma: 0.169,
            noise: None,
            outlier_fraction: 0.0,
            outlier_offset: 2.0,
            bearings: default_beam_fan(),
            period_ns: 15_800_000,
            rate_hz: 10.0,
            points_per_scan: 120,
            azimuth_fov_deg: 60.0,
            elevation_fov_deg: 15.0,
            range_min_m: 2.0,
            range_max_m: 40.0,
        }
    }
}

impl RadarSimSpec {
    pub fn validate(&self, out: &mut Vec<String>) {
        if !(self.sigma > 0.0) {
            out.push(format!(
                "scenario.radar.sigma must be > 0, got {}",
                self.sigma
            ));
        }
        if let Some(n) = self.noise {
            if !(n >= 0.0) {
                out.push(format!("scenario.radar.noise must be >= 0, got {n}"));
            }
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            out.push(format!(
                "scenario.radar.outlier_fraction must be in [0, 1], got {}",
                self.outlier_fraction
            ));
        }
        match self.kind {
            RadarSimKind::Beams => {
                if self.bearings.is_empty() {
                    out.push("scenario.radar.bearings must not be empty".to_string());
                }
                for (i, b) in self.bearings.iter().enumerate() {
                    if unit_direction(b).is_err() {
                        out.push(format!(
                            "scenario.radar.bearings[{i}] cannot be normalized"
                        ));
                    }
                }
                if self.period_ns < 1 {
                    out.push(format!(
                        "scenario.radar.period_ns must be >= 1, got {}",
                        self.period_ns
                    ));
                }
            }
            RadarSimKind::Cloud => {
                if !(self.rate_hz > 0.0) {
                    out.push(format!(
                        "scenario.radar.rate_hz must be > 0, got {}",
                        self.rate_hz
                    ));
                }
                if self.points_per_scan == 0 {
                    out.push("scenario.radar.points_per_scan must be >= 1".to_string());
                }
                if !(self.azimuth_fov_deg > 0.0) || !(self.elevation_fov_deg > 0.0) {
                    out.push("scenario.radar azimuth/elevation FoV must be > 0".to_string());
                }
                if !(self.range_min_m > crate::types::MIN_BEARING_RANGE) {
                    out.push(format!(
                        "scenario.radar.range_min_m must exceed {}, got {}",
                        crate::types::MIN_BEARING_RANGE,
                        self.range_min_m
                    ));
                }
                if !(self.range_max_m > self.range_min_m) {
                    out.push(format!(
                        "scenario.radar.range_max_m must exceed range_min_m, got {}",
                        self.range_max_m
                    ));
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoSimSpec {
    pub rate_hz: f64,
    /// Noise injection starts only after this much of the run has passed.
    pub warmup_s: f64,
    pub sigma_xy: f64,
    /// Velocity-proportional preset: σ_xy = √‖v‖, re-evaluated per message.
    pub sigma_xy_sqrt_speed: bool,
    pub sigma_z: f64,
    pub sigma_rot: f64,
}

impl Default for LoSimSpec {
    fn default() -> Self {
        LoSimSpec {
            rate_hz: 10.0,
            warmup_s: 0.0,
            sigma_xy: 0.0,
            sigma_xy_sqrt_speed: false,
            sigma_z: 0.0,
            sigma_rot: 0.0,
        }
    }
}

impl LoSimSpec {
    pub fn validate(&self, out: &mut Vec<String>) {
        if !(self.rate_hz > 0.0) {
            out.push(format!("scenario.lo.rate_hz must be > 0, got {}", self.rate_hz));
        }
        if !(self.warmup_s >= 0.0) {
            out.push(format!(
                "scenario.lo.warmup_s must be >= 0, got {}",
                self.warmup_s
            ));
        }
        for (name, v) in [
            ("scenario.lo.sigma_xy", self.sigma_xy),
            ("scenario.lo.sigma_z", self.sigma_z),
            ("scenario.lo.sigma_rot", self.sigma_rot),
        ] {
            if !(v >= 0.0) {
                out.push(format!("{name} must be >= 0, got {v}"));
            }
        }
    }
}

/// Beam directions are free-form in the spec; scale them to unit length.
fn unit_direction(b: &[f64; 3]) -> Result<Vector3<f64>> {
    let v = Vector3::from_row_slice(b);
    let n = v.norm();
    if !n.is_finite() || n < 1e-9 {
        return Err(Error::Invalid(format!(
            "beam direction {b:?} cannot be normalized"
        )));
    }
    Ok(v / n)
}

fn normal3<R: Rng>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}

fn duration_ns(duration_s: f64) -> i64 {
    (duration_s * 1e9).round() as i64
}

fn period_from_rate(rate_hz: f64) -> i64 {
    (1e9 / rate_hz).round() as i64
}

/// Velocity of the radar origin expressed in the radar frame.
pub fn radar_frame_velocity(k: &Kinematics, rig: &SensorRig) -> Vector3<f64> {
    let v_body = k.pose.rotation.inverse().rotate(&k.velocity);
    let lever = rig.imu_from_radar.translation;
    rig.imu_from_radar
        .rotation
        .inverse()
        .rotate(&(v_body + k.body_rate.cross(&lever)))
}

/// Synthesizes IMU messages at `rate_hz` over `[0, duration_s]`, inclusive.
/// Also returns the true (gyro, accel) biases at every stamp for the ground
/// truth record.
pub fn synth_imu<R: Rng>(
    traj: &Trajectory,
    gravity: &Vector3<f64>,
    rate_hz: f64,
    duration_s: f64,
    spec: &ImuSimSpec,
    rng: &mut R,
) -> (Vec<ImuMeasurement>, Vec<(Vector3<f64>, Vector3<f64>)>) {
    let dt_ns = period_from_rate(rate_hz);
    let end_ns = duration_ns(duration_s);
    let dt = dt_ns as f64 * 1e-9;
    let sqrt_dt = dt.sqrt();
    let mut bias_gyro = Vector3::from_row_slice(&spec.initial_bias_gyro);
    let mut bias_accel = Vector3::from_row_slice(&spec.initial_bias_accel);
    let mut measurements = Vec::new();
    let mut biases = Vec::new();
    let mut t_ns = 0i64;
    while t_ns <= end_ns {
        let here = traj.sample(t_ns as f64 * 1e-9);
        let next = traj.sample((t_ns + dt_ns) as f64 * 1e-9);
        let psi = log_rot(&here.pose.rotation.inverse().compose(&next.pose.rotation));
        let angular_velocity = psi / dt + bias_gyro + spec.sigma_g / sqrt_dt * normal3(rng);
        let accel_world = (next.velocity - here.velocity) / dt - gravity;
        let specific_force = here.pose.rotation.inverse().rotate(&accel_world)
            + bias_accel
            + spec.sigma_a / sqrt_dt * normal3(rng);
        measurements.push(ImuMeasurement {
            t_ns,
            angular_velocity,
            specific_force,
        });
        biases.push((bias_gyro, bias_accel));
        bias_gyro += spec.sigma_bg * sqrt_dt * normal3(rng);
        bias_accel += spec.sigma_ba * sqrt_dt * normal3(rng);
        t_ns += dt_ns;
    }
    (measurements, biases)
}

/// One doppler per tick, cycling through the beam fan.
pub fn synth_radar_beams<R: Rng>(
    traj: &Trajectory,
    rig: &SensorRig,
    duration_s: f64,
    spec: &RadarSimSpec,
    rng: &mut R,
) -> Result<Vec<RadarDopplerMeasurement>> {
    let bearings: Vec<Vector3<f64>> = spec
        .bearings
        .iter()
        .map(unit_direction)
        .collect::<Result<_>>()?;
    let end_ns = duration_ns(duration_s);
    let noise = spec.noise.unwrap_or(spec.sigma);
    let mut out = Vec::new();
    let mut beam = 0usize;
    let mut t_ns = 0i64;
    while t_ns <= end_ns {
        let k = traj.sample(t_ns as f64 * 1e-9);
        let bearing = bearings[beam];
        let is_outlier = rng.random::<f64>() < spec.outlier_fraction;
        let n: f64 = rng.sample(StandardNormal);
        let mut radial_speed = -bearing.dot(&radar_frame_velocity(&k, rig)) + noise * n;
        if is_outlier {
            radial_speed += spec.outlier_offset;
        }
        out.push(RadarDopplerMeasurement {
            t_ns,
            bearing,
            radial_speed,
            sigma: spec.sigma,
        });
        beam = (beam + 1) % bearings.len();
        t_ns += spec.period_ns;
    }
    Ok(out)
}

/// Point-cloud scans with uniformly drawn bearings and ranges in the FoV.
pub fn synth_radar_clouds<R: Rng>(
    traj: &Trajectory,
    rig: &SensorRig,
    duration_s: f64,
    spec: &RadarSimSpec,
    rng: &mut R,
) -> Vec<RadarPointCloud> {
    let period = period_from_rate(spec.rate_hz);
    let end_ns = duration_ns(duration_s);
    let noise = spec.noise.unwrap_or(spec.sigma);
    let az = spec.azimuth_fov_deg.to_radians();
    let el = spec.elevation_fov_deg.to_radians();
    let mut out = Vec::new();
    let mut t_ns = 0i64;
    while t_ns <= end_ns {
        let k = traj.sample(t_ns as f64 * 1e-9);
        let v_radar = radar_frame_velocity(&k, rig);
        let points = (0..spec.points_per_scan)
            .map(|_| {
                let a = rng.random_range(-az..az);
                let e = rng.random_range(-el..el);
                let range = rng.random_range(spec.range_min_m..spec.range_max_m);
                let mu = Vector3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin());
                let is_outlier = rng.random::<f64>() < spec.outlier_fraction;
                let n: f64 = rng.sample(StandardNormal);
                let mut doppler = -mu.dot(&v_radar) + noise * n;
                if is_outlier {
                    doppler += spec.outlier_offset;
                }
                let p = mu * range;
                RadarPoint {
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    doppler,
                }
            })
            .collect();
        out.push(RadarPointCloud { t_ns, points });
        t_ns += period;
    }
    out
}

/// Odometry poses with right-multiplicative tangent noise after the warm-up.
/// `assumed_sigma` is the downstream factor sigma carried on the in-memory
/// measurements; pose files never store it.
pub fn synth_lo<R: Rng>(
    traj: &Trajectory,
    duration_s: f64,
    spec: &LoSimSpec,
    assumed_sigma: SVector<f64, 6>,
    rng: &mut R,
) -> Vec<LoPoseMeasurement> {
    let period = period_from_rate(spec.rate_hz);
    let end_ns = duration_ns(duration_s);
    let warmup_ns = duration_ns(spec.warmup_s);
    let mut out = Vec::new();
    let mut t_ns = 0i64;
    while t_ns <= end_ns {
        let k = traj.sample(t_ns as f64 * 1e-9);
        let mut pose = k.pose;
        if t_ns >= warmup_ns {
            let sigma_xy = if spec.sigma_xy_sqrt_speed {
                k.velocity.norm().sqrt()
            } else {
                spec.sigma_xy
            };
            let phi = spec.sigma_rot * normal3(rng);
            let xy = normal3(rng);
            let mut eps = SVector::<f64, 6>::zeros();
            eps.fixed_rows_mut::<3>(0).copy_from(&phi);
            eps[3] = sigma_xy * xy.x;
            eps[4] = sigma_xy * xy.y;
            eps[5] = spec.sigma_z * xy.z;
            pose = pose.compose(&exp_se3(&eps));
        }
        out.push(LoPoseMeasurement {
            t_ns,
            world_from_imu: pose,
            sigma: assumed_sigma,
        });
        t_ns += period;
    }
    out
}
