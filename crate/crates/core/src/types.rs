//! Core value types: timestamps, sensor measurements, the navigation state,
//! and the sensor rig extrinsics.
//!
//! All timestamps are integer nanoseconds so stream merging and node
//! association never hit floating-point ties.

use nalgebra::{SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{exp_se3, log_se3, RigidTransform, Rotation};

/// Tangent dimension of one navigation-state node:
/// [rotation, position, velocity, gyro bias, accel bias], three each.
pub const NODE_DOF: usize = 15;

/// Block offsets inside a node's tangent vector.
pub const ATT: usize = 0;
pub const POS: usize = 3;
pub const VEL: usize = 6;
pub const BG: usize = 9;
pub const BA: usize = 12;

pub type NodeTangent = SVector<f64, NODE_DOF>;

/// One IMU message: body angular velocity (rad/s) and specific force (m/s^2),
/// both in the IMU frame.
#[derive(Clone, Copy, Debug)]
pub struct ImuMeasurement {
    pub t_ns: i64,
    pub angular_velocity: Vector3<f64>,
    pub specific_force: Vector3<f64>,
}

/// One processed radar return: unit bearing in the radar frame and the radial
/// speed along it (positive away from the sensor), with its noise sigma.
#[derive(Clone, Copy, Debug)]
pub struct RadarDopplerMeasurement {
    pub t_ns: i64,
    pub bearing: Vector3<f64>,
    pub radial_speed: f64,
    pub sigma: f64,
}

/// One raw radar point: position in the radar frame plus measured doppler.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RadarPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub doppler: f64,
}

impl RadarPoint {
    pub fn position(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }
}

/// One radar scan as a point cloud.
#[derive(Clone, Debug)]
pub struct RadarPointCloud {
    pub t_ns: i64,
    pub points: Vec<RadarPoint>,
}

/// One LiDAR-odometry pose, already expressed as world-from-IMU, with
/// per-axis standard deviations ordered [rotation; translation]. The pose
/// files carry no sigma columns, so sigmas come from config at load time.
#[derive(Clone, Copy, Debug)]
pub struct LoPoseMeasurement {
    pub t_ns: i64,
    pub world_from_imu: RigidTransform,
    pub sigma: SVector<f64, 6>,
}

/// Rigid extrinsics of the sensors relative to the IMU frame, plus the
/// gravity vector in the world frame.
#[derive(Clone, Copy, Debug)]
pub struct SensorRig {
    pub imu_from_radar: RigidTransform,
    pub imu_from_lidar: RigidTransform,
    pub gravity: Vector3<f64>,
}

impl SensorRig {
    pub fn identity() -> Self {
        SensorRig {
            imu_from_radar: RigidTransform::identity(),
            imu_from_lidar: RigidTransform::identity(),
            gravity: Vector3::new(0.0, 0.0, -9.81),
        }
    }
}

/// The estimated state at one node: world-from-IMU pose, velocity of the IMU
/// origin in the world frame, and the IMU biases.
#[derive(Clone, Copy, Debug)]
pub struct NavState {
    pub world_from_imu: RigidTransform,
    pub velocity: Vector3<f64>,
    pub bias_gyro: Vector3<f64>,
    pub bias_accel: Vector3<f64>,
}

impl NavState {
    pub fn identity() -> Self {
        NavState {
            world_from_imu: RigidTransform::identity(),
            velocity: Vector3::zeros(),
            bias_gyro: Vector3::zeros(),
            bias_accel: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Rotation {
        &self.world_from_imu.rotation
    }

    pub fn position(&self) -> &Vector3<f64> {
        &self.world_from_imu.translation
    }

    /// Right-perturbation retraction. The pose moves through the coupled
    /// SE(3) exponential of `[d_att; d_pos]`; velocity and biases are
    /// additive.
    pub fn retract(&self, delta: &NodeTangent) -> NavState {
        let xi = delta.fixed_rows::<6>(ATT).into_owned();
        NavState {
            world_from_imu: self.world_from_imu.compose(&exp_se3(&xi)),
            velocity: self.velocity + delta.fixed_rows::<3>(VEL),
            bias_gyro: self.bias_gyro + delta.fixed_rows::<3>(BG),
            bias_accel: self.bias_accel + delta.fixed_rows::<3>(BA),
        }
    }

    /// Sanity check used for divergence detection: all components finite and
    /// bias norms below the configured bounds. Returns a description of the
    /// first violation.
    pub fn sanity_violation(&self, max_bias_gyro: f64, max_bias_accel: f64) -> Option<String> {
        let finite = self.world_from_imu.translation.iter().all(|v| v.is_finite())
            && self.velocity.iter().all(|v| v.is_finite())
            && self.bias_gyro.iter().all(|v| v.is_finite())
            && self.bias_accel.iter().all(|v| v.is_finite())
            && self
                .world_from_imu
                .rotation
                .quaternion_wxyz()
                .iter()
                .all(|v| v.is_finite());
        if !finite {
            return Some("non-finite state component".to_string());
        }
        if self.bias_gyro.norm() > max_bias_gyro {
            return Some(format!(
                "gyro bias norm {:.3} exceeds {max_bias_gyro}",
                self.bias_gyro.norm()
            ));
        }
        if self.bias_accel.norm() > max_bias_accel {
            return Some(format!(
                "accel bias norm {:.3} exceeds {max_bias_accel}",
                self.bias_accel.norm()
            ));
        }
        None
    }

    /// Inverse of [`NavState::retract`]: the tangent that takes `self` to
    /// `other`, i.e. `other = self.retract(&self.local_coordinates(other))`.
    pub fn local_coordinates(&self, other: &NavState) -> NodeTangent {
        let xi = log_se3(
            &self
                .world_from_imu
                .inverse()
                .compose(&other.world_from_imu),
        );
        let mut d = NodeTangent::zeros();
        d.fixed_rows_mut::<6>(ATT).copy_from(&xi);
        d.fixed_rows_mut::<3>(VEL)
            .copy_from(&(other.velocity - self.velocity));
        d.fixed_rows_mut::<3>(BG)
            .copy_from(&(other.bias_gyro - self.bias_gyro));
        d.fixed_rows_mut::<3>(BA)
            .copy_from(&(other.bias_accel - self.bias_accel));
        d
    }
}

/// One row of a truth or estimate trajectory file.
#[derive(Clone, Copy, Debug)]
pub struct TrajectorySample {
    pub t_ns: i64,
    pub state: NavState,
}

/// Index of the node whose timestamp is nearest to `t_ns`. Ties are broken
/// toward the earlier node. `node_times` must be sorted ascending.
pub fn associate_to_node(t_ns: i64, node_times: &[i64]) -> Option<usize> {
    if node_times.is_empty() {
        return None;
    }
    let idx = node_times.partition_point(|&t| t < t_ns);
    if idx == 0 {
        return Some(0);
    }
    if idx == node_times.len() {
        return Some(node_times.len() - 1);
    }
    let before = t_ns - node_times[idx - 1];
    let after = node_times[idx] - t_ns;
    if before <= after {
        Some(idx - 1)
    } else {
        Some(idx)
    }
}

/// Minimum range for converting a radar point into a unit bearing.
pub const MIN_BEARING_RANGE: f64 = 0.1;

/// Unit bearing of a radar point. Points closer than [`MIN_BEARING_RANGE`]
/// have no usable direction and are rejected.
pub fn bearing_from_point(position: &Vector3<f64>) -> Result<Vector3<f64>> {
    let n = position.norm();
    if !n.is_finite() || n <= MIN_BEARING_RANGE {
        return Err(Error::ShortRange(n));
    }
    Ok(position / n)
}

/// Validates a claimed unit bearing, renormalizing small drift and rejecting
/// vectors that are off-unit by more than 1e-6.
pub fn normalize_bearing(bearing: &Vector3<f64>) -> Result<Vector3<f64>> {
    let n = bearing.norm();
    if !n.is_finite() || (n - 1.0).abs() > 1e-6 {
        return Err(Error::BadBearing((n - 1.0).abs()));
    }
    Ok(bearing / n)
}
