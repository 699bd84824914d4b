//! Rotations, rigid transforms, and their tangent-space maps.
//!
//! Conventions used throughout the crate:
//! - tangent vectors order rotation before translation: `xi = [phi; rho]`
//! - perturbations compose on the right: `T(delta) = T * exp(delta)`
//! - `log` of a rotation returns an angle in `[0, pi]`
//!
//! Rotations are stored as unit quaternions. The quaternion logarithm keeps a
//! stable axis all the way to pi, where the rotation-matrix trace formula
//! degrades, and composition renormalizes so long products cannot drift.

use nalgebra::{Matrix3, Matrix6, Quaternion, Rotation3, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

/// Angle below which Taylor series replace the closed-form coefficients.
/// The closed forms lose accuracy to cancellation long before f64 epsilon,
/// so this branches several orders of magnitude above the minimum required.
const SMALL_ANGLE: f64 = 1e-4;

/// Branch point for the SE(3) coupling coefficients, whose numerators cancel
/// more aggressively (down to theta^5).
const SMALL_ANGLE_Q: f64 = 1e-2;

/// A rotation in SO(3), backed by a unit quaternion.
#[derive(Clone, Copy, Debug)]
pub struct Rotation(UnitQuaternion<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(UnitQuaternion::identity())
    }

    pub fn from_unit_quaternion(q: UnitQuaternion<f64>) -> Self {
        Rotation(q)
    }

    /// Builds from scalar-first components. Components already unit to
    /// within 1e-9 are taken as-is so serialization round-trips are exact;
    /// larger drift is normalized away, and degenerate norms are rejected.
    pub fn from_quaternion_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        let q = Quaternion::new(w, x, y, z);
        let n = q.norm();
        if !n.is_finite() || n < 1e-9 {
            return Err(Error::Invalid(format!(
                "quaternion norm {n:.3e} cannot be normalized"
            )));
        }
        if (n - 1.0).abs() <= 1e-9 {
            Ok(Rotation(UnitQuaternion::new_unchecked(q)))
        } else {
            Ok(Rotation(UnitQuaternion::new_normalize(q)))
        }
    }

    /// Scalar-first components with the scalar part canonicalized to be
    /// non-negative, so serialized values round-trip to the same sign.
    pub fn quaternion_wxyz(&self) -> [f64; 4] {
        let q = self.0.quaternion();
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    /// Interprets `m` as an orthonormal rotation matrix.
    pub fn from_matrix(m: &Matrix3<f64>) -> Self {
        let r = Rotation3::from_matrix_unchecked(*m);
        Rotation(UnitQuaternion::from_rotation_matrix(&r))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        self.0.to_rotation_matrix().into_inner()
    }

    pub fn unit_quaternion(&self) -> UnitQuaternion<f64> {
        self.0
    }

    /// Composition `self * other`, renormalized so chains of thousands of
    /// compositions stay orthonormal.
    pub fn compose(&self, other: &Rotation) -> Rotation {
        let q = self.0.into_inner() * other.0.into_inner();
        Rotation(UnitQuaternion::new_normalize(q))
    }

    pub fn inverse(&self) -> Rotation {
        Rotation(self.0.inverse())
    }

    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        log_rot(self).norm()
    }

    /// Angle of `self^-1 * other`, a metric between rotations.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        log_rot(&self.inverse().compose(other)).norm()
    }
}

/// A rigid transform in SE(3): `x_parent = rotation * x_child + translation`.
#[derive(Clone, Copy, Debug)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Rotation::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation.compose(&other.rotation),
            translation: self.rotation.rotate(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rot_inv = self.rotation.inverse();
        RigidTransform {
            rotation: rot_inv,
            translation: -rot_inv.rotate(&self.translation),
        }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }
}

/// Skew-symmetric matrix of `v`, so that `wedge(a) * b = a x b`.
pub fn wedge(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`wedge`]. Rejects matrices whose symmetric part exceeds 1e-9,
/// averaging the antisymmetric entries otherwise.
pub fn vee(m: &Matrix3<f64>) -> Result<Vector3<f64>> {
    let sym = 0.5 * (m + m.transpose());
    let dev = sym.amax();
    if dev > 1e-9 {
        return Err(Error::NotSkewSymmetric(dev));
    }
    Ok(Vector3::new(
        0.5 * (m[(2, 1)] - m[(1, 2)]),
        0.5 * (m[(0, 2)] - m[(2, 0)]),
        0.5 * (m[(1, 0)] - m[(0, 1)]),
    ))
}

/// Exponential map of SO(3).
pub fn exp_rot(tau: &Vector3<f64>) -> Rotation {
    let theta2 = tau.norm_squared();
    let theta = theta2.sqrt();
    let (w, k) = if theta < SMALL_ANGLE {
        // cos(t/2) and sin(t/2)/t expanded about zero.
        (
            1.0 - theta2 / 8.0 + theta2 * theta2 / 384.0,
            0.5 - theta2 / 48.0 + theta2 * theta2 / 3840.0,
        )
    } else {
        ((0.5 * theta).cos(), (0.5 * theta).sin() / theta)
    };
    let q = Quaternion::new(w, k * tau.x, k * tau.y, k * tau.z);
    Rotation(UnitQuaternion::new_normalize(q))
}

/// Logarithm map of SO(3). Returns the rotation vector with angle in
/// `[0, pi]`; the quaternion form keeps the axis stable arbitrarily close
/// to pi.
pub fn log_rot(r: &Rotation) -> Vector3<f64> {
    let q = r.0.quaternion();
    let (w, v) = if q.w < 0.0 {
        (-q.w, -q.imag())
    } else {
        (q.w, q.imag())
    };
    let s = v.norm();
    if s < SMALL_ANGLE {
        // 2 atan2(s, w) / s expanded about s = 0 (w is near 1 here).
        v * (2.0 / w) * (1.0 - s * s / (3.0 * w * w))
    } else {
        v * (2.0 * s.atan2(w) / s)
    }
}

/// `(1 - cos t) / t^2`.
fn coeff_a(theta: f64, theta2: f64) -> f64 {
    if theta < SMALL_ANGLE {
        0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0
    } else {
        (1.0 - theta.cos()) / theta2
    }
}

/// `(t - sin t) / t^3`.
fn coeff_b(theta: f64, theta2: f64) -> f64 {
    if theta < SMALL_ANGLE {
        1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0
    } else {
        (theta - theta.sin()) / (theta2 * theta)
    }
}

/// `1/t^2 - (1 + cos t) / (2 t sin t)`, written via `cot(t/2)` so it stays
/// finite at pi.
fn coeff_c(theta: f64, theta2: f64) -> f64 {
    if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        let half = 0.5 * theta;
        1.0 / theta2 - half.cos() / (2.0 * theta * half.sin())
    }
}

/// Right Jacobian of SO(3): `exp(phi + d) = exp(phi) exp(Jr(phi) d) + O(d^2)`.
pub fn so3_right_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let px = wedge(phi);
    Matrix3::identity() - coeff_a(theta, theta2) * px + coeff_b(theta, theta2) * (px * px)
}

pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let px = wedge(phi);
    Matrix3::identity() + coeff_a(theta, theta2) * px + coeff_b(theta, theta2) * (px * px)
}

pub fn so3_right_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let px = wedge(phi);
    Matrix3::identity() + 0.5 * px + coeff_c(theta, theta2) * (px * px)
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let px = wedge(phi);
    Matrix3::identity() - 0.5 * px + coeff_c(theta, theta2) * (px * px)
}

/// Exponential map of SE(3) with `xi = [phi; rho]`. The translation part is
/// `Jl(phi) rho`, the left Jacobian doubling as the usual `V` matrix.
pub fn exp_se3(xi: &Vector6<f64>) -> RigidTransform {
    let phi = xi.fixed_rows::<3>(0).into_owned();
    let rho = xi.fixed_rows::<3>(3).into_owned();
    RigidTransform {
        rotation: exp_rot(&phi),
        translation: so3_left_jacobian(&phi) * rho,
    }
}

/// Logarithm map of SE(3), inverse of [`exp_se3`].
pub fn log_se3(t: &RigidTransform) -> Vector6<f64> {
    let phi = log_rot(&t.rotation);
    let rho = so3_left_jacobian_inv(&phi) * t.translation;
    let mut xi = Vector6::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&phi);
    xi.fixed_rows_mut::<3>(3).copy_from(&rho);
    xi
}

/// Coupling block of the left Jacobian of SE(3) at `xi = [phi; rho]`.
fn q_matrix(phi: &Vector3<f64>, rho: &Vector3<f64>) -> Matrix3<f64> {
    let p = wedge(phi);
    let r = wedge(rho);
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (c1, c2, c3) = if theta < SMALL_ANGLE_Q {
        let c1 = 1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0;
        let c2 = 1.0 / 24.0 - theta2 / 720.0 + theta2 * theta2 / 40320.0;
        let c4 = -1.0 / 120.0 + theta2 / 5040.0 - theta2 * theta2 / 362_880.0;
        (c1, c2, 0.5 * (c2 + 3.0 * c4))
    } else {
        let (sin_t, cos_t) = (theta.sin(), theta.cos());
        let c1 = (theta - sin_t) / (theta2 * theta);
        let c2 = (0.5 * theta2 + cos_t - 1.0) / (theta2 * theta2);
        let c4 = (theta - sin_t - theta2 * theta / 6.0) / (theta2 * theta2 * theta);
        (c1, c2, 0.5 * (c2 + 3.0 * c4))
    };
    let prp = p * r * p;
    0.5 * r + c1 * (p * r + r * p + prp) + c2 * (p * p * r + r * p * p - 3.0 * prp)
        + c3 * (prp * p + p * prp)
}

/// Inverse right Jacobian of SE(3):
/// `log(exp(xi) exp(d)) = xi + Jr_inv(xi) d + O(d^2)`.
///
/// Built from the left-Jacobian blocks at `-xi`: the rotation blocks are
/// `Jr_inv(phi)` and the translation-rotation coupling is
/// `-Jr_inv Q(-xi) Jr_inv`.
pub fn se3_right_jacobian_inv(xi: &Vector6<f64>) -> Matrix6<f64> {
    let phi_n = -xi.fixed_rows::<3>(0).into_owned();
    let rho_n = -xi.fixed_rows::<3>(3).into_owned();
    let jinv = so3_left_jacobian_inv(&phi_n);
    let q = q_matrix(&phi_n, &rho_n);
    let coupling = -jinv * q * jinv;
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&jinv);
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&coupling);
    out
}
