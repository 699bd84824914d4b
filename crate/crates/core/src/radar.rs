//! Radar radial-speed factor: a unary constraint on rotation, velocity, and
//! gyro bias from one doppler return.
//!
//! With `mu` the unit bearing in the radar frame, extrinsics
//! `{R_RI = radar<-IMU rotation, p_IR = radar origin in the IMU frame}`, and
//! a measured body rate `w` frozen from the gyro sample nearest the radar
//! stamp, the predicted radial speed of a static target is the negative
//! bearing projection of the radar-frame sensor velocity
//!
//! ```text
//! v_R = R_RI ( R_WI^T v_W + (w - b_g) x p_IR )
//! e   = -mu^T v_R - v_r_measured
//! ```
//!
//! Position and accel bias never enter, so their Jacobian blocks are exactly
//! zero and the residual is invariant under global position shifts. The
//! lever-arm sign follows from differentiating the radar position through
//! the kinematic chain; the finite-difference suite pins it.

use nalgebra::{RowSVector, SMatrix, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::lie::{wedge, RigidTransform, Rotation};
use crate::types::{normalize_bearing, NavState, ATT, BG, NODE_DOF, VEL};

/// Doppler noise and gating shared by the factor pipeline. The ambiguity
/// fields describe the FMCW sensor: radial speeds within one resolution bin
/// of the unambiguous maximum are treated as wrap-around suspects.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarConfig {
    /// Doppler noise standard deviation, m/s.
    pub sigma: f64,
    /// Huber threshold on the raw radial-speed residual, m/s.
    pub huber_delta: f64,
    /// Unambiguous doppler limit, m/s.
    pub max_doppler: f64,
    /// Doppler bin width, m/s.
    pub doppler_resolution: f64,
}

impl Default for RadarConfig {
    fn default() -> Self {
        RadarConfig {
            sigma: 0.169,
            huber_delta: 0.5,
            max_doppler: 43.178,
            doppler_resolution: 0.169,
        }
    }
}

impl RadarConfig {
    pub fn validate(&self, out: &mut Vec<String>) {
        if !(self.sigma > 0.0) {
            out.push(format!("radar.sigma must be > 0, got {}", self.sigma));
        }
        if !(self.huber_delta > 0.0) {
            out.push(format!(
                "radar.huber_delta must be > 0, got {}",
                self.huber_delta
            ));
        }
        if !(self.max_doppler > self.doppler_resolution) || !(self.doppler_resolution > 0.0) {
            out.push(format!(
                "radar doppler limits must satisfy max_doppler > doppler_resolution > 0, got {} and {}",
                self.max_doppler, self.doppler_resolution
            ));
        }
    }
}

/// Instantaneous velocity of the radar origin, expressed in the radar frame.
pub fn radar_velocity_from_state(
    state: &NavState,
    omega_meas: &Vector3<f64>,
    rotation_radar_from_imu: &Rotation,
    lever_arm: &Vector3<f64>,
) -> Vector3<f64> {
    let body_velocity = state.rotation().inverse().rotate(&state.velocity);
    let spin = (omega_meas - state.bias_gyro).cross(lever_arm);
    rotation_radar_from_imu.rotate(&(body_velocity + spin))
}

#[derive(Clone, Copy, Debug)]
pub struct RadarRadialSpeedFactor {
    pub bearing: Vector3<f64>,
    pub radial_speed: f64,
    /// Gyro sample nearest the radar stamp; only its bias is estimated.
    pub omega_meas: Vector3<f64>,
    pub rotation_radar_from_imu: Rotation,
    pub lever_arm: Vector3<f64>,
    pub sigma: f64,
    pub huber_delta: f64,
}

impl RadarRadialSpeedFactor {
    /// Validates and renormalizes the bearing (off-unit by more than 1e-6 is
    /// rejected), and derives the radar-frame extrinsics from the rig's
    /// IMU<-radar transform.
    pub fn new(
        bearing: &Vector3<f64>,
        radial_speed: f64,
        omega_meas: Vector3<f64>,
        imu_from_radar: &RigidTransform,
        sigma: f64,
        huber_delta: f64,
    ) -> Result<Self> {
        Ok(RadarRadialSpeedFactor {
            bearing: normalize_bearing(bearing)?,
            radial_speed,
            omega_meas,
            rotation_radar_from_imu: imu_from_radar.rotation.inverse(),
            lever_arm: imu_from_radar.translation,
            sigma,
            huber_delta,
        })
    }

    pub fn residual(&self, state: &NavState) -> f64 {
        let v_r = radar_velocity_from_state(
            state,
            &self.omega_meas,
            &self.rotation_radar_from_imu,
            &self.lever_arm,
        );
        -self.bearing.dot(&v_r) - self.radial_speed
    }

    /// Single-row Jacobian over the node tangent. Non-zero blocks:
    ///
    /// ```text
    /// d e / d att = -mu^T R_RI (R_WI^T v_W)^
    /// d e / d vel = -mu^T R_RI R_WI^T
    /// d e / d b_g = -mu^T R_RI (p_IR)^
    /// ```
    pub fn jacobian(&self, state: &NavState) -> RowSVector<f64, NODE_DOF> {
        let r_ri = self.rotation_radar_from_imu.matrix();
        let mu_t_rri = self.bearing.transpose() * r_ri;
        let body_velocity = state.rotation().inverse().rotate(&state.velocity);
        let mut j = RowSVector::<f64, NODE_DOF>::zeros();
        j.fixed_columns_mut::<3>(ATT)
            .copy_from(&(-mu_t_rri * wedge(&body_velocity)));
        j.fixed_columns_mut::<3>(VEL)
            .copy_from(&(-mu_t_rri * state.rotation().matrix().transpose()));
        j.fixed_columns_mut::<3>(BG)
            .copy_from(&(-mu_t_rri * wedge(&self.lever_arm)));
        j
    }
}

/// IRLS weight of the Huber loss: 1 inside the quadratic region, `delta/|r|`
/// outside.
pub fn robust_weight(residual: f64, huber_delta: f64) -> f64 {
    let a = residual.abs();
    if a <= huber_delta {
        1.0
    } else {
        huber_delta / a
    }
}

/// Huber cost of a whitened residual: quadratic below `delta_w`, linear
/// above. Used for the solver's accept/reject cost.
pub fn huber_cost(whitened_residual: f64, whitened_delta: f64) -> f64 {
    let a = whitened_residual.abs();
    if a <= whitened_delta {
        0.5 * a * a
    } else {
        whitened_delta * (a - 0.5 * whitened_delta)
    }
}

/// Instantaneous radar ego-velocity with uncertainty, as produced by the
/// point-cloud front-end.
#[derive(Clone, Copy, Debug)]
pub struct RadarVelocityEstimate {
    pub t_ns: i64,
    pub velocity: Vector3<f64>,
    pub covariance: SMatrix<f64, 3, 3>,
    pub inlier_count: usize,
}

/// Drop guard against FMCW doppler wrap-around: measurements within one
/// resolution bin of the unambiguous maximum are discarded.
pub fn is_aliasing_suspect(radial_speed: f64, max_doppler: f64, doppler_resolution: f64) -> bool {
    radial_speed.abs() > max_doppler - doppler_resolution
}
