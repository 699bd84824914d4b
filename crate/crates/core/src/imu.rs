//! Single-message IMU motion factor and the bias random-walk factor.
//!
//! One node is created per IMU message, so each motion factor spans exactly
//! one measurement interval: the message stamped `t_i` drives `[t_i, t_j)`
//! with order-1 (Euler) integration, which at 400 Hz keeps the per-step
//! error far below the measurement noise.
//!
//! Residual (9 rows, `[rotation; position; velocity]`), with
//! `psi = (w - b_g) dt`, `c = a - b_a`, `a_w = R_i c + g`:
//!
//! ```text
//! e_R = Log( (R_i Exp(psi))^T R_j )
//! e_p = p_j - (p_i + v_i dt + 1/2 a_w dt^2)
//! e_v = v_j - (v_i + a_w dt)
//! ```
//!
//! Jacobians are with respect to right perturbations of the coupled SE(3)
//! pose (so position columns pick up a factor of the node's rotation).

use nalgebra::{Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::lie::{
    exp_rot, log_rot, so3_left_jacobian, so3_right_jacobian_inv, wedge,
};
use crate::types::{ImuMeasurement, NavState, ATT, BA, BG, NODE_DOF, POS, VEL};

/// Continuous-time noise densities of the IMU channels.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImuNoise {
    /// Gyro white noise, rad/s/sqrt(Hz).
    pub sigma_g: f64,
    /// Accelerometer white noise, m/s^2/sqrt(Hz).
    pub sigma_a: f64,
    /// Gyro bias random walk, rad/s^2/sqrt(Hz).
    pub sigma_bg: f64,
    /// Accelerometer bias random walk, m/s^3/sqrt(Hz).
    pub sigma_ba: f64,
}

impl Default for ImuNoise {
    fn default() -> Self {
        ImuNoise {
            sigma_g: 1e-3,
            sigma_a: 1e-2,
            sigma_bg: 1e-5,
            sigma_ba: 1e-4,
        }
    }
}

impl ImuNoise {
    pub fn validate(&self, out: &mut Vec<String>) {
        for (name, v) in [
            ("imu.sigma_g", self.sigma_g),
            ("imu.sigma_a", self.sigma_a),
            ("imu.sigma_bg", self.sigma_bg),
            ("imu.sigma_ba", self.sigma_ba),
        ] {
            if !(v > 0.0) {
                out.push(format!("{name} must be > 0, got {v}"));
            }
        }
    }
}

/// Order-1 propagation of one IMU interval.
pub fn propagate(
    state: &NavState,
    m: &ImuMeasurement,
    dt: f64,
    gravity: &Vector3<f64>,
) -> NavState {
    let psi = (m.angular_velocity - state.bias_gyro) * dt;
    let c = m.specific_force - state.bias_accel;
    let a_w = state.rotation().rotate(&c) + gravity;
    let mut next = *state;
    next.world_from_imu.rotation = state.rotation().compose(&exp_rot(&psi));
    next.world_from_imu.translation =
        state.position() + state.velocity * dt + 0.5 * dt * dt * a_w;
    next.velocity = state.velocity + a_w * dt;
    next
}

/// Motion factor between adjacent nodes `i` and `j = i + 1`.
#[derive(Clone, Copy, Debug)]
pub struct ImuFactor {
    pub measurement: ImuMeasurement,
    pub dt: f64,
    pub noise: ImuNoise,
    pub gravity: Vector3<f64>,
}

impl ImuFactor {
    pub fn residual(&self, state_i: &NavState, state_j: &NavState) -> SVector<f64, 9> {
        let pred = propagate(state_i, &self.measurement, self.dt, &self.gravity);
        let mut e = SVector::<f64, 9>::zeros();
        e.fixed_rows_mut::<3>(0).copy_from(&log_rot(
            &pred
                .rotation()
                .inverse()
                .compose(state_j.rotation()),
        ));
        e.fixed_rows_mut::<3>(3)
            .copy_from(&(state_j.position() - pred.position()));
        e.fixed_rows_mut::<3>(6)
            .copy_from(&(state_j.velocity - pred.velocity));
        e
    }

    /// Analytic Jacobians `(d e / d state_i, d e / d state_j)`.
    pub fn jacobians(
        &self,
        state_i: &NavState,
        state_j: &NavState,
    ) -> (SMatrix<f64, 9, NODE_DOF>, SMatrix<f64, 9, NODE_DOF>) {
        let dt = self.dt;
        let psi = (self.measurement.angular_velocity - state_i.bias_gyro) * dt;
        let c = self.measurement.specific_force - state_i.bias_accel;
        let r_i = state_i.rotation().matrix();
        let r_j = state_j.rotation().matrix();
        let e_r = {
            let pred_rot = state_i.rotation().compose(&exp_rot(&psi));
            log_rot(&pred_rot.inverse().compose(state_j.rotation()))
        };
        let jr_inv_e = so3_right_jacobian_inv(&e_r);
        let m = r_i.transpose() * r_j; // R_i^T R_j
        let r_i_cx = r_i * wedge(&c);

        let mut ji = SMatrix::<f64, 9, NODE_DOF>::zeros();
        let mut jj = SMatrix::<f64, 9, NODE_DOF>::zeros();

        // Rotation rows.
        ji.fixed_view_mut::<3, 3>(0, ATT)
            .copy_from(&(-jr_inv_e * m.transpose()));
        ji.fixed_view_mut::<3, 3>(0, BG)
            .copy_from(&(jr_inv_e * m.transpose() * so3_left_jacobian(&psi) * dt));
        jj.fixed_view_mut::<3, 3>(0, ATT).copy_from(&jr_inv_e);

        // Position rows.
        ji.fixed_view_mut::<3, 3>(3, ATT)
            .copy_from(&(0.5 * dt * dt * r_i_cx));
        ji.fixed_view_mut::<3, 3>(3, POS).copy_from(&(-r_i));
        ji.fixed_view_mut::<3, 3>(3, VEL)
            .copy_from(&(-dt * Matrix3::identity()));
        ji.fixed_view_mut::<3, 3>(3, BA)
            .copy_from(&(0.5 * dt * dt * r_i));
        jj.fixed_view_mut::<3, 3>(3, POS).copy_from(&r_j);

        // Velocity rows.
        ji.fixed_view_mut::<3, 3>(6, ATT).copy_from(&(dt * r_i_cx));
        ji.fixed_view_mut::<3, 3>(6, VEL)
            .copy_from(&(-Matrix3::identity()));
        ji.fixed_view_mut::<3, 3>(6, BA).copy_from(&(dt * r_i));
        jj.fixed_view_mut::<3, 3>(6, VEL)
            .copy_from(&Matrix3::identity());

        (ji, jj)
    }

    /// Per-row whitening sigmas: integrated white noise over one interval
    /// (`sqrt(dt)` scaling, an extra `dt` for the doubly integrated
    /// position rows).
    pub fn whitening_sigmas(&self) -> SVector<f64, 9> {
        let sdt = self.dt.sqrt();
        let mut s = SVector::<f64, 9>::zeros();
        s.fixed_rows_mut::<3>(0)
            .fill(self.noise.sigma_g * sdt);
        s.fixed_rows_mut::<3>(3)
            .fill(self.noise.sigma_a * sdt * self.dt);
        s.fixed_rows_mut::<3>(6)
            .fill(self.noise.sigma_a * sdt);
        s
    }
}

/// Random-walk factor tying the biases of adjacent nodes together.
#[derive(Clone, Copy, Debug)]
pub struct BiasWalkFactor {
    pub dt: f64,
    pub sigma_bg: f64,
    pub sigma_ba: f64,
}

impl BiasWalkFactor {
    pub fn residual(&self, state_i: &NavState, state_j: &NavState) -> SVector<f64, 6> {
        let mut e = SVector::<f64, 6>::zeros();
        e.fixed_rows_mut::<3>(0)
            .copy_from(&(state_j.bias_gyro - state_i.bias_gyro));
        e.fixed_rows_mut::<3>(3)
            .copy_from(&(state_j.bias_accel - state_i.bias_accel));
        e
    }

    pub fn jacobians(&self) -> (SMatrix<f64, 6, NODE_DOF>, SMatrix<f64, 6, NODE_DOF>) {
        let mut ji = SMatrix::<f64, 6, NODE_DOF>::zeros();
        let mut jj = SMatrix::<f64, 6, NODE_DOF>::zeros();
        ji.fixed_view_mut::<3, 3>(0, BG)
            .copy_from(&(-Matrix3::identity()));
        ji.fixed_view_mut::<3, 3>(3, BA)
            .copy_from(&(-Matrix3::identity()));
        jj.fixed_view_mut::<3, 3>(0, BG).copy_from(&Matrix3::identity());
        jj.fixed_view_mut::<3, 3>(3, BA).copy_from(&Matrix3::identity());
        (ji, jj)
    }

    /// Random-walk whitening: variance grows linearly with dt.
    pub fn whitening_sigmas(&self) -> SVector<f64, 6> {
        let sdt = self.dt.sqrt();
        let mut s = SVector::<f64, 6>::zeros();
        s.fixed_rows_mut::<3>(0).fill(self.sigma_bg * sdt);
        s.fixed_rows_mut::<3>(3).fill(self.sigma_ba * sdt);
        s
    }
}
