//! Sliding-window state estimation fusing FMCW-radar radial speeds, raw IMU
//! messages, and external LiDAR-odometry poses, together with a deterministic
//! simulator and an evaluation toolkit for degradation studies.

pub mod config;
pub mod dataset;
pub mod experiment;
pub mod ego_velocity;
pub mod error;
#[cfg(test)]
pub(crate) mod fdcheck;
pub mod imu;
pub mod lie;
pub mod lo;
pub mod metrics;
pub mod radar;
pub mod sim;
pub mod smoother;
pub mod types;

pub use error::{Error, Result};
