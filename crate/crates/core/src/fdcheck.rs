//! Test-only helpers: randomized states and central finite differences
//! against the crate's retraction, used as the oracle for every analytic
//! Jacobian.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::lie::{exp_rot, RigidTransform};
use crate::types::{NavState, NodeTangent, NODE_DOF};

pub fn random_vec3(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

pub fn random_nav_state(rng: &mut ChaCha8Rng) -> NavState {
    NavState {
        world_from_imu: RigidTransform::new(
            exp_rot(&random_vec3(rng, 1.0)),
            random_vec3(rng, 10.0),
        ),
        velocity: random_vec3(rng, 5.0),
        bias_gyro: random_vec3(rng, 0.05),
        bias_accel: random_vec3(rng, 0.3),
    }
}

/// Central finite differences of `f` with respect to the tangent of `state`.
pub fn numeric_state_jacobian<F>(f: F, state: &NavState, eps: f64) -> DMatrix<f64>
where
    F: Fn(&NavState) -> DVector<f64>,
{
    let rows = f(state).len();
    let mut j = DMatrix::zeros(rows, NODE_DOF);
    for col in 0..NODE_DOF {
        let mut d = NodeTangent::zeros();
        d[col] = eps;
        let plus = f(&state.retract(&d));
        d[col] = -eps;
        let minus = f(&state.retract(&d));
        j.set_column(col, &((plus - minus) / (2.0 * eps)));
    }
    j
}

/// Largest elementwise error of `analytic` vs `numeric` under a relative
/// tolerance with an absolute floor; `None` when everything is within tol.
pub fn jacobian_mismatch(
    analytic: &DMatrix<f64>,
    numeric: &DMatrix<f64>,
    rel_tol: f64,
    abs_floor: f64,
) -> Option<String> {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst: Option<(usize, usize, f64, f64)> = None;
    for r in 0..analytic.nrows() {
        for c in 0..analytic.ncols() {
            let a = analytic[(r, c)];
            let n = numeric[(r, c)];
            let tol = abs_floor.max(rel_tol * a.abs().max(n.abs()));
            let err = (a - n).abs();
            if err > tol && worst.map(|w| err > w.2).unwrap_or(true) {
                worst = Some((r, c, err, tol));
            }
        }
    }
    worst.map(|(r, c, err, tol)| {
        format!(
            "jacobian mismatch at ({r},{c}): |{} - {}| = {err:.3e} > tol {tol:.3e}",
            analytic[(r, c)],
            numeric[(r, c)]
        )
    })
}
