//! Unary pose factor from an external lidar-odometry stream.
//!
//! The odometry pipeline publishes world-from-IMU poses `T_hat`, so the
//! factor compares in the tangent space of the measurement:
//!
//! ```text
//! e = Log( T_hat^-1 T )    (6 rows, [rotation; translation])
//! ```
//!
//! Because the node pose is perturbed on the right by the coupled SE(3)
//! exponential, the pose Jacobian is the inverse right Jacobian of SE(3)
//! evaluated at the residual; velocity and bias columns are zero.

use nalgebra::{SMatrix, SVector, Vector6};

use crate::lie::{se3_right_jacobian_inv, log_se3, RigidTransform};
use crate::types::{NavState, NODE_DOF};

#[derive(Clone, Copy, Debug)]
pub struct LoPoseFactor {
    pub measured: RigidTransform,
    /// Per-axis standard deviations, ordered [rotation; translation].
    pub sigma: SVector<f64, 6>,
}

impl LoPoseFactor {
    pub fn residual(&self, state: &NavState) -> Vector6<f64> {
        log_se3(&self.measured.inverse().compose(&state.world_from_imu))
    }

    pub fn jacobian(&self, state: &NavState) -> SMatrix<f64, 6, NODE_DOF> {
        let e = self.residual(state);
        let mut j = SMatrix::<f64, 6, NODE_DOF>::zeros();
        j.fixed_view_mut::<6, 6>(0, 0)
            .copy_from(&se3_right_jacobian_inv(&e));
        j
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fdcheck::{jacobian_mismatch, random_nav_state, random_vec3};
    use crate::lie::exp_rot;
    use nalgebra::{DMatrix, DVector, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unit_sigma() -> SVector<f64, 6> {
        SVector::<f64, 6>::repeat(1.0)
    }

    #[test]
    fn residual_vanishes_at_the_measured_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(81);
        for _ in 0..50 {
            let state = random_nav_state(&mut rng);
            let f = LoPoseFactor {
                measured: state.world_from_imu,
                sigma: unit_sigma(),
            };
            assert!(f.residual(&state).norm() < 1e-12);
        }
    }

    #[test]
    fn pure_translation_offset_maps_into_the_measurement_frame() {
        let rot = exp_rot(&Vector3::new(0.3, -0.2, 0.9));
        let measured = RigidTransform::new(rot, Vector3::new(1.0, 2.0, 3.0));
        let offset = Vector3::new(0.1, -0.05, 0.02);
        let mut state = NavState::identity();
        state.world_from_imu = RigidTransform::new(rot, measured.translation + offset);
        let e = f64::EPSILON;
        let r = LoPoseFactor {
            measured,
            sigma: unit_sigma(),
        }
        .residual(&state);
        assert!(r.fixed_rows::<3>(0).norm() < 1e3 * e);
        let expected = rot.inverse().rotate(&offset);
        assert!((r.fixed_rows::<3>(3).into_owned() - expected).norm() < 1e-12);
    }

    #[test]
    fn rotation_offset_appears_as_the_log_of_the_relative_rotation() {
        let measured = RigidTransform::identity();
        let phi = Vector3::new(0.0, 0.0, 0.25);
        let mut state = NavState::identity();
        state.world_from_imu = RigidTransform::new(exp_rot(&phi), Vector3::zeros());
        let r = LoPoseFactor {
            measured,
            sigma: unit_sigma(),
        }
        .residual(&state);
        assert!((r.fixed_rows::<3>(0).into_owned() - phi).norm() < 1e-12);
        assert!(r.fixed_rows::<3>(3).norm() < 1e-12);
    }

    #[test]
    fn velocity_and_bias_columns_are_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(82);
        let state = random_nav_state(&mut rng);
        let f = LoPoseFactor {
            measured: RigidTransform::new(exp_rot(&random_vec3(&mut rng, 1.0)), random_vec3(&mut rng, 5.0)),
            sigma: unit_sigma(),
        };
        let j = f.jacobian(&state);
        for r in 0..6 {
            for c in 6..NODE_DOF {
                assert_eq!(j[(r, c)], 0.0);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(83);
        let eps = 1e-6;
        for k in 0..200 {
            let state = random_nav_state(&mut rng);
            let f = LoPoseFactor {
                measured: RigidTransform::new(
                    exp_rot(&random_vec3(&mut rng, 1.2)),
                    random_vec3(&mut rng, 8.0),
                ),
                sigma: unit_sigma(),
            };
            let j = f.jacobian(&state);
            let j_d = DMatrix::from_fn(6, NODE_DOF, |r, c| j[(r, c)]);
            let fd = crate::fdcheck::numeric_state_jacobian(
                |s| DVector::from_iterator(6, f.residual(s).iter().cloned()),
                &state,
                eps,
            );
            if let Some(err) = jacobian_mismatch(&j_d, &fd, 1e-5, 1e-8) {
                panic!("instance {k}: {err}");
            }
        }
    }
}
