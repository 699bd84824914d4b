//! Deterministic dataset synthesis: an analytic trajectory plus seeded
//! sensor models, emitting the same stream formats the estimator consumes.

pub mod sensors;
pub mod trajectory;

pub use sensors::{
    default_beam_fan, radar_frame_velocity, synth_imu, synth_lo, synth_radar_beams,
    synth_radar_clouds, ImuSimSpec, LoSimSpec, RadarSimKind, RadarSimSpec,
};
pub use trajectory::{Kinematics, ShapeKind, Trajectory, TrajectorySpec};

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, LoadOptions};
use crate::error::{Error, Result};
use crate::lie::{RigidTransform, Rotation};
use crate::types::{NavState, SensorRig, TrajectorySample};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseSpec {
    pub translation: [f64; 3],
    pub rotation_wxyz: [f64; 4],
}

impl Default for PoseSpec {
    fn default() -> Self {
        PoseSpec {
            translation: [0.0; 3],
            rotation_wxyz: [1.0, 0.0, 0.0, 0.0],
        }
    }
}

impl PoseSpec {
    fn build(&self, name: &str) -> Result<RigidTransform> {
        let q = &self.rotation_wxyz;
        let rotation = Rotation::from_quaternion_wxyz(q[0], q[1], q[2], q[3])
            .map_err(|e| Error::Invalid(format!("{name}.rotation_wxyz: {e}")))?;
        Ok(RigidTransform::new(
            rotation,
            Vector3::from_row_slice(&self.translation),
        ))
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigSpec {
    pub imu_from_radar: PoseSpec,
    pub imu_from_lidar: PoseSpec,
    pub gravity: [f64; 3],
}

impl Default for RigSpec {
    fn default() -> Self {
        RigSpec {
            imu_from_radar: PoseSpec::default(),
            imu_from_lidar: PoseSpec::default(),
            gravity: [0.0, 0.0, -9.81],
        }
    }
}

impl RigSpec {
    pub fn build(&self) -> Result<SensorRig> {
        Ok(SensorRig {
            imu_from_radar: self.imu_from_radar.build("scenario.rig.imu_from_radar")?,
            imu_from_lidar: self.imu_from_lidar.build("scenario.rig.imu_from_lidar")?,
            gravity: Vector3::from_row_slice(&self.gravity),
        })
    }

    pub fn validate(&self, out: &mut Vec<String>) {
        for (name, q) in [
            ("scenario.rig.imu_from_radar", &self.imu_from_radar),
            ("scenario.rig.imu_from_lidar", &self.imu_from_lidar),
        ] {
            let n = q.rotation_wxyz.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 1e-9) || !n.is_finite() {
                out.push(format!("{name}.rotation_wxyz is not normalizable"));
            }
        }
        let g = Vector3::from_row_slice(&self.gravity).norm();
        if !g.is_finite() {
            out.push("scenario.rig.gravity must be finite".to_string());
        }
    }
}

/// Everything needed to synthesize one dataset, minus the seed.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub trajectory: TrajectorySpec,
    pub imu: ImuSimSpec,
    pub radar: Option<RadarSimSpec>,
    pub lo: Option<LoSimSpec>,
    pub rig: RigSpec,
}

impl ScenarioSpec {
    pub fn validate(&self, out: &mut Vec<String>) {
        self.trajectory.validate(out);
        self.imu.validate(out);
        if let Some(radar) = &self.radar {
            radar.validate(out);
        }
        if let Some(lo) = &self.lo {
            lo.validate(out);
        }
        self.rig.validate(out);
    }
}

#[derive(Clone, Debug)]
pub struct SimOutput {
    pub dataset: Dataset,
    pub truth: Vec<TrajectorySample>,
}

/// Synthesizes a full dataset. Each sensor draws from its own RNG stream of
/// the run seed, so enabling one stream never changes another's realization.
pub fn simulate(spec: &ScenarioSpec, seed: u64) -> Result<SimOutput> {
    let mut violations = Vec::new();
    spec.validate(&mut violations);
    if !violations.is_empty() {
        return Err(Error::Config(violations));
    }
    let rig = spec.rig.build()?;
    let traj = spec.trajectory.build()?;
    let duration = spec.trajectory.duration_s;

    let stream = |n: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(n);
        rng
    };

    let (imu, biases) = synth_imu(
        &traj,
        &rig.gravity,
        spec.trajectory.imu_rate_hz,
        duration,
        &spec.imu,
        &mut stream(1),
    );
    let truth = imu
        .iter()
        .zip(&biases)
        .map(|(m, (bias_gyro, bias_accel))| {
            let k = traj.sample(m.t_ns as f64 * 1e-9);
            TrajectorySample {
                t_ns: m.t_ns,
                state: NavState {
                    world_from_imu: k.pose,
                    velocity: k.velocity,
                    bias_gyro: *bias_gyro,
                    bias_accel: *bias_accel,
                },
            }
        })
        .collect();

    let mut dataset = Dataset {
        imu,
        rig: Some(rig),
        ..Dataset::default()
    };
    if let Some(radar) = &spec.radar {
        match radar.kind {
            RadarSimKind::Beams => {
                dataset.radar_doppler =
                    synth_radar_beams(&traj, &rig, duration, radar, &mut stream(2))?;
            }
            RadarSimKind::Cloud => {
                dataset.radar_clouds =
                    synth_radar_clouds(&traj, &rig, duration, radar, &mut stream(2));
            }
        }
    }
    if let Some(lo) = &spec.lo {
        dataset.lo = synth_lo(
            &traj,
            duration,
            lo,
            LoadOptions::default().lo_sigma,
            &mut stream(3),
        );
    }
    Ok(SimOutput { dataset, truth })
}
