//! Analytic ground-truth trajectories.
//!
//! Every path is a planar C² curve p(t) = A·q(s(t)) built from a periodic
//! unit shape q(s) and the schedule s(t) = Ω(t − τ(1 − e^{−t/τ})), whose
//! rate ṡ = Ω(1 − e^{−t/τ}) ramps smoothly from zero so the vehicle starts
//! at rest. The body heading tracks the path tangent, making the yaw rate
//! θ̇ = (dθ/ds)·ṡ with dθ/ds = (q'×q'')/|q'|², a pure shape property.
//!
//! Peak yaw rate is scale-invariant: max|θ̇| = M_y·Ω with M_y = max|dθ/ds|
//! scanned once per shape. That fixes Ω from the yaw-rate target, and the
//! speed bound max|v| = A·M_v·Ω (M_v = max|q'|) then fixes the scale A, so
//! both targets are hit exactly once the ramp has settled.

use nalgebra::{DMatrix, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{exp_rot, RigidTransform};

/// Unit-shape scan resolution for the M_v / M_y constants.
const SCAN_SAMPLES: usize = 200_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    FigureEight,
    LoopTrack,
    WaypointSpline,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySpec {
    pub kind: ShapeKind,
    pub duration_s: f64,
    /// Peak ground speed the trajectory is scaled to, m/s.
    pub max_speed: f64,
    /// Peak yaw rate the trajectory is scaled to, rad/s.
    pub max_yaw_rate: f64,
    pub imu_rate_hz: f64,
    /// Time constant of the start-of-run speed ramp.
    pub ramp_tau_s: f64,
    /// Minor/major axis ratio of the loop track.
    pub loop_aspect: f64,
    /// Waypoints (x, y) for the spline path; closed into a loop.
    pub waypoints: Vec<[f64; 2]>,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        TrajectorySpec {
            kind: ShapeKind::FigureEight,
            duration_s: 30.0,
            max_speed: 12.0,
            max_yaw_rate: 0.5,
            imu_rate_hz: 200.0,
            ramp_tau_s: 2.0,
            loop_aspect: 0.6,
            waypoints: Vec::new(),
        }
    }
}

impl TrajectorySpec {
    pub fn validate(&self, out: &mut Vec<String>) {
        if !(self.duration_s > 0.0) {
            out.push(format!(
                "scenario.trajectory.duration_s must be > 0, got {}",
                self.duration_s
            ));
        }
        if !(self.max_speed >= 0.0) {
            out.push(format!(
                "scenario.trajectory.max_speed must be >= 0, got {}",
                self.max_speed
            ));
        }
        if !(self.max_yaw_rate >= 0.0) {
            out.push(format!(
                "scenario.trajectory.max_yaw_rate must be >= 0, got {}",
                self.max_yaw_rate
            ));
        }
        if !(self.imu_rate_hz > 0.0) {
            out.push(format!(
                "scenario.trajectory.imu_rate_hz must be > 0, got {}",
                self.imu_rate_hz
            ));
        }
        if !(self.ramp_tau_s > 0.0) {
            out.push(format!(
                "scenario.trajectory.ramp_tau_s must be > 0, got {}",
                self.ramp_tau_s
            ));
        }
        if self.kind == ShapeKind::LoopTrack && !(self.loop_aspect > 0.0) {
            out.push(format!(
                "scenario.trajectory.loop_aspect must be > 0, got {}",
                self.loop_aspect
            ));
        }
        if self.kind == ShapeKind::WaypointSpline && self.waypoints.len() < 3 {
            out.push(format!(
                "scenario.trajectory.waypoints needs at least 3 points for a spline, got {}",
                self.waypoints.len()
            ));
        }
    }

    pub fn build(&self) -> Result<Trajectory> {
        let shape = match self.kind {
            ShapeKind::FigureEight => Shape::FigureEight,
            ShapeKind::LoopTrack => Shape::Ellipse {
                aspect: self.loop_aspect,
            },
            ShapeKind::WaypointSpline => Shape::Spline(PeriodicSpline::new(&self.waypoints)?),
        };
        let scan = scan_shape(&shape);
        if scan.min_tangent < 1e-6 * scan.max_tangent {
            return Err(Error::Invalid(
                "path tangent vanishes somewhere; the heading would be undefined".to_string(),
            ));
        }
        let (scale, omega) = if self.max_speed > 0.0 && self.max_yaw_rate > 0.0 {
            let omega = self.max_yaw_rate / scan.max_turn;
            (self.max_speed / (scan.max_tangent * omega), omega)
        } else {
            (0.0, 0.0)
        };
        Ok(Trajectory {
            shape,
            scale,
            omega,
            tau: self.ramp_tau_s,
        })
    }
}

/// Ground-truth kinematics at one instant.
#[derive(Clone, Copy, Debug)]
pub struct Kinematics {
    pub pose: RigidTransform,
    /// Velocity of the IMU origin in the world frame.
    pub velocity: Vector3<f64>,
    /// Acceleration of the IMU origin in the world frame.
    pub acceleration: Vector3<f64>,
    /// Angular velocity in the body frame.
    pub body_rate: Vector3<f64>,
}

pub struct Trajectory {
    shape: Shape,
    scale: f64,
    omega: f64,
    tau: f64,
}

impl Trajectory {
    pub fn sample(&self, t: f64) -> Kinematics {
        let decay = (-t / self.tau).exp();
        let s = self.omega * (t - self.tau * (1.0 - decay));
        let sd = self.omega * (1.0 - decay);
        let sdd = self.omega / self.tau * decay;

        let q = self.shape.value(s);
        let d1 = self.shape.d1(s);
        let d2 = self.shape.d2(s);

        let position = self.scale * Vector3::new(q.x, q.y, 0.0);
        let velocity = self.scale * sd * Vector3::new(d1.x, d1.y, 0.0);
        let acceleration = self.scale
            * Vector3::new(
                sdd * d1.x + sd * sd * d2.x,
                sdd * d1.y + sd * sd * d2.y,
                0.0,
            );

        let heading = d1.y.atan2(d1.x);
        let turn = (d1.x * d2.y - d1.y * d2.x) / d1.norm_squared();
        Kinematics {
            pose: RigidTransform::new(exp_rot(&Vector3::new(0.0, 0.0, heading)), position),
            velocity,
            acceleration,
            body_rate: Vector3::new(0.0, 0.0, turn * sd),
        }
    }
}

enum Shape {
    FigureEight,
    Ellipse { aspect: f64 },
    Spline(PeriodicSpline),
}

impl Shape {
    fn period(&self) -> f64 {
        match self {
            Shape::FigureEight | Shape::Ellipse { .. } => std::f64::consts::TAU,
            Shape::Spline(sp) => sp.period(),
        }
    }

    fn value(&self, s: f64) -> Vector2<f64> {
        match self {
            Shape::FigureEight => Vector2::new(s.sin(), 0.5 * (2.0 * s).sin()),
            Shape::Ellipse { aspect } => Vector2::new(s.cos(), aspect * s.sin()),
            Shape::Spline(sp) => sp.value(s),
        }
    }

    fn d1(&self, s: f64) -> Vector2<f64> {
        match self {
            Shape::FigureEight => Vector2::new(s.cos(), (2.0 * s).cos()),
            Shape::Ellipse { aspect } => Vector2::new(-s.sin(), aspect * s.cos()),
            Shape::Spline(sp) => sp.d1(s),
        }
    }

    fn d2(&self, s: f64) -> Vector2<f64> {
        match self {
            Shape::FigureEight => Vector2::new(-s.sin(), -2.0 * (2.0 * s).sin()),
            Shape::Ellipse { aspect } => Vector2::new(-s.cos(), -aspect * s.sin()),
            Shape::Spline(sp) => sp.d2(s),
        }
    }
}

struct ShapeScan {
    max_tangent: f64,
    min_tangent: f64,
    max_turn: f64,
}

fn scan_shape(shape: &Shape) -> ShapeScan {
    let period = shape.period();
    let mut max_tangent: f64 = 0.0;
    let mut min_tangent = f64::INFINITY;
    let mut max_turn: f64 = 0.0;
    for i in 0..SCAN_SAMPLES {
        let s = period * i as f64 / SCAN_SAMPLES as f64;
        let d1 = shape.d1(s);
        let d2 = shape.d2(s);
        let speed = d1.norm();
        max_tangent = max_tangent.max(speed);
        min_tangent = min_tangent.min(speed);
        if speed > 0.0 {
            max_turn = max_turn.max(((d1.x * d2.y - d1.y * d2.x) / (speed * speed)).abs());
        }
    }
    ShapeScan {
        max_tangent,
        min_tangent,
        max_turn,
    }
}

/// Closed C² cubic spline through waypoints, parametrized by chord length.
struct PeriodicSpline {
    /// Knot values u_0 = 0 .. u_n = period, one per waypoint plus the wrap.
    knots: Vec<f64>,
    /// Waypoints with the first repeated at the end.
    points: Vec<Vector2<f64>>,
    /// Second derivatives at the knots, last equal to first.
    curvatures: Vec<Vector2<f64>>,
}

impl PeriodicSpline {
    fn new(waypoints: &[[f64; 2]]) -> Result<Self> {
        let n = waypoints.len();
        if n < 3 {
            return Err(Error::Invalid(format!(
                "a closed spline needs at least 3 waypoints, got {n}"
            )));
        }
        let mut points: Vec<Vector2<f64>> =
            waypoints.iter().map(|p| Vector2::new(p[0], p[1])).collect();
        points.push(points[0]);
        let mut knots = vec![0.0];
        for i in 0..n {
            let h = (points[i + 1] - points[i]).norm();
            if h < 1e-9 {
                return Err(Error::Invalid(format!(
                    "spline waypoints {i} and {} coincide",
                    (i + 1) % n
                )));
            }
            knots.push(knots[i] + h);
        }

        // Periodic second-derivative continuity: at every knot i,
        //   h_{i-1}/6·M_{i-1} + (h_{i-1}+h_i)/3·M_i + h_i/6·M_{i+1}
        //     = (P_{i+1}-P_i)/h_i − (P_i-P_{i-1})/h_{i-1},
        // indices mod n. Dense solve; waypoint counts are tiny.
        let h = |i: usize| knots[i + 1] - knots[i];
        let mut a = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DMatrix::<f64>::zeros(n, 2);
        for i in 0..n {
            let prev = (i + n - 1) % n;
            let next = (i + 1) % n;
            a[(i, prev)] += h(prev) / 6.0;
            a[(i, i)] += (h(prev) + h(i)) / 3.0;
            a[(i, next)] += h(i) / 6.0;
            let d = (points[i + 1] - points[i]) / h(i)
                - (points[i] - points[(i + n - 1) % n]) / h(prev);
            rhs[(i, 0)] = d.x;
            rhs[(i, 1)] = d.y;
        }
        let m = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Invalid("spline system is singular".to_string()))?;
        let mut curvatures: Vec<Vector2<f64>> =
            (0..n).map(|i| Vector2::new(m[(i, 0)], m[(i, 1)])).collect();
        curvatures.push(curvatures[0]);
        Ok(PeriodicSpline {
            knots,
            points,
            curvatures,
        })
    }

    fn period(&self) -> f64 {
        *self.knots.last().expect("knots non-empty")
    }

    fn locate(&self, s: f64) -> (usize, f64, f64) {
        let sp = s.rem_euclid(self.period());
        let n = self.points.len() - 1;
        let i = self
            .knots
            .partition_point(|&u| u <= sp)
            .saturating_sub(1)
            .min(n - 1);
        (i, sp - self.knots[i], self.knots[i + 1] - self.knots[i])
    }

    fn value(&self, s: f64) -> Vector2<f64> {
        let (i, t, h) = self.locate(s);
        let r = h - t;
        self.curvatures[i] * r.powi(3) / (6.0 * h)
            + self.curvatures[i + 1] * t.powi(3) / (6.0 * h)
            + (self.points[i] / h - self.curvatures[i] * h / 6.0) * r
            + (self.points[i + 1] / h - self.curvatures[i + 1] * h / 6.0) * t
    }

    fn d1(&self, s: f64) -> Vector2<f64> {
        let (i, t, h) = self.locate(s);
        let r = h - t;
        -self.curvatures[i] * r * r / (2.0 * h)
            + self.curvatures[i + 1] * t * t / (2.0 * h)
            + (self.points[i + 1] - self.points[i]) / h
            - (self.curvatures[i + 1] - self.curvatures[i]) * h / 6.0
    }

    fn d2(&self, s: f64) -> Vector2<f64> {
        let (i, t, h) = self.locate(s);
        self.curvatures[i] * (h - t) / h + self.curvatures[i + 1] * t / h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::log_rot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FD_STEP: f64 = 1e-6;
    const FD_TOL: f64 = 1e-4;

    fn wiggly_waypoints() -> Vec<[f64; 2]> {
        vec![[0.0, 0.0], [10.0, 2.0], [14.0, 10.0], [6.0, 14.0], [-2.0, 8.0]]
    }

    fn spec(kind: ShapeKind) -> TrajectorySpec {
        TrajectorySpec {
            kind,
            max_speed: 8.0,
            max_yaw_rate: 0.6,
            waypoints: wiggly_waypoints(),
            ..TrajectorySpec::default()
        }
    }

    #[test]
    fn zero_speed_spec_is_static() {
        let traj = TrajectorySpec {
            max_speed: 0.0,
            ..TrajectorySpec::default()
        }
        .build()
        .unwrap();
        let first = traj.sample(0.0);
        for k in 0..20 {
            let s = traj.sample(k as f64 * 0.7);
            assert_eq!(s.pose.translation, first.pose.translation);
            assert_eq!(s.velocity, Vector3::zeros());
            assert_eq!(s.acceleration, Vector3::zeros());
            assert_eq!(s.body_rate, Vector3::zeros());
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for kind in [
            ShapeKind::FigureEight,
            ShapeKind::LoopTrack,
            ShapeKind::WaypointSpline,
        ] {
            let traj = spec(kind).build().unwrap();
            for _ in 0..40 {
                let t = rng.random_range(0.5..25.0);
                let minus = traj.sample(t - FD_STEP);
                let plus = traj.sample(t + FD_STEP);
                let mid = traj.sample(t);

                let v_fd = (plus.pose.translation - minus.pose.translation) / (2.0 * FD_STEP);
                assert!(
                    (v_fd - mid.velocity).norm() < FD_TOL,
                    "{kind:?} velocity vs position slope at t={t}"
                );
                let a_fd = (plus.velocity - minus.velocity) / (2.0 * FD_STEP);
                assert!(
                    (a_fd - mid.acceleration).norm() < FD_TOL,
                    "{kind:?} acceleration vs velocity slope at t={t}"
                );
                let w_fd = log_rot(
                    &minus
                        .pose
                        .rotation
                        .inverse()
                        .compose(&plus.pose.rotation),
                ) / (2.0 * FD_STEP);
                assert!(
                    (w_fd - mid.body_rate).norm() < FD_TOL,
                    "{kind:?} body rate vs attitude slope at t={t}"
                );
            }
        }
    }

    #[test]
    fn steady_circle_turns_with_centripetal_acceleration() {
        let v = 5.0;
        let w = 0.5;
        let traj = TrajectorySpec {
            kind: ShapeKind::LoopTrack,
            loop_aspect: 1.0,
            max_speed: v,
            max_yaw_rate: w,
            ..TrajectorySpec::default()
        }
        .build()
        .unwrap();
        // Radius follows from the two targets: r = v / w.
        let r = v / w;
        let k = traj.sample(40.0);
        assert!((k.velocity.norm() - v).abs() < 1e-4);
        assert!((k.acceleration.norm() - v * v / r).abs() < 1e-4);
        // Purely centripetal: no component along the velocity, pointing at
        // the track center (the origin).
        assert!(k.acceleration.dot(&k.velocity).abs() < 1e-4);
        let inward = -k.pose.translation.normalize();
        assert!((k.acceleration.normalize() - inward).norm() < 1e-4);
        // Body frame: forward velocity only, yaw rate at the target.
        let v_body = k.pose.rotation.inverse().rotate(&k.velocity);
        assert!((v_body - Vector3::new(v, 0.0, 0.0)).norm() < 1e-4);
        assert!((k.body_rate.z.abs() - w).abs() < 1e-4);
    }

    #[test]
    fn figure_eight_yaw_rate_alternates_sign() {
        let traj = spec(ShapeKind::FigureEight).build().unwrap();
        let mut most_negative: f64 = 0.0;
        let mut most_positive: f64 = 0.0;
        for i in 0..4000 {
            let t = 20.0 + i as f64 * 0.02;
            let wz = traj.sample(t).body_rate.z;
            most_negative = most_negative.min(wz);
            most_positive = most_positive.max(wz);
        }
        assert!(most_positive > 0.1, "never turned left: {most_positive}");
        assert!(most_negative < -0.1, "never turned right: {most_negative}");
    }

    #[test]
    fn peak_speed_and_yaw_rate_hit_their_targets() {
        for kind in [
            ShapeKind::FigureEight,
            ShapeKind::LoopTrack,
            ShapeKind::WaypointSpline,
        ] {
            let traj = spec(kind).build().unwrap();
            let mut max_speed: f64 = 0.0;
            let mut max_yaw: f64 = 0.0;
            for i in 0..25_000 {
                let k = traj.sample(i as f64 * 100.0 / 25_000.0);
                max_speed = max_speed.max(k.velocity.norm());
                max_yaw = max_yaw.max(k.body_rate.z.abs());
            }
            assert!(
                max_speed > 0.99 * 8.0 && max_speed < 1.001 * 8.0,
                "{kind:?} peak speed {max_speed}"
            );
            assert!(
                max_yaw > 0.99 * 0.6 && max_yaw < 1.001 * 0.6,
                "{kind:?} peak yaw rate {max_yaw}"
            );
        }
    }

    #[test]
    fn spline_interpolates_waypoints_and_is_smooth_at_knots() {
        let sp = PeriodicSpline::new(&wiggly_waypoints()).unwrap();
        let n = wiggly_waypoints().len();
        for (i, p) in wiggly_waypoints().iter().enumerate() {
            let q = sp.value(sp.knots[i]);
            assert!((q - Vector2::new(p[0], p[1])).norm() < 1e-9, "waypoint {i}");
        }
        // C² across every knot, including the wrap.
        let eps = 1e-7;
        for i in 0..=n {
            let u = sp.knots[i];
            for (name, f) in [
                ("value", &(|s| sp.value(s)) as &dyn Fn(f64) -> Vector2<f64>),
                ("d1", &|s| sp.d1(s)),
                ("d2", &|s| sp.d2(s)),
            ] {
                let left = f(u - eps);
                let right = f(u + eps);
                assert!(
                    (left - right).norm() < 1e-5,
                    "{name} jumps at knot {i}: {left:?} vs {right:?}"
                );
            }
        }
        // Periodic in the parameter.
        for k in 0..10 {
            let s = 0.37 * k as f64;
            assert!((sp.value(s + sp.period()) - sp.value(s)).norm() < 1e-9);
        }
    }
}
