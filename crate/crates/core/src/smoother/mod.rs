//! Fixed-lag sliding-window estimator.
//!
//! A node is created for every IMU message and initialized by propagating
//! the previous estimate, so the graph grows at IMU rate. Radar and
//! lidar-odometry measurements never create nodes: they attach to the
//! nearest node by timestamp, which also gives delayed measurements a home
//! as long as they land inside the lag. Every `optimize_every_n_nodes`
//! messages the window is re-optimized and everything older than the lag is
//! folded into the marginalization prior.
//!
//! Measurements stamped after the newest node are buffered until a node at
//! or past their stamp exists, so "nearest" is decided with both neighbors
//! present rather than whichever node happened to exist first.

mod marginalize;
mod solve;
mod window;

pub use marginalize::marginalize_one;
pub use solve::{optimize, solve_damped, SolveOutcome, SolverSettings};
pub use window::{Factor, FactorCounts, FactorGraphWindow, InfoMatrix, MarginalPrior, Node};

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::ego_velocity::{process_cloud, RansacConfig};
use crate::error::{Error, Result};
use crate::imu::{propagate, BiasWalkFactor, ImuFactor, ImuNoise};
use crate::lie::RigidTransform;
use crate::lo::LoPoseFactor;
use crate::radar::{is_aliasing_suspect, RadarConfig, RadarRadialSpeedFactor};
use crate::types::{
    associate_to_node, ImuMeasurement, LoPoseMeasurement, NavState, RadarDopplerMeasurement,
    RadarPointCloud, SensorRig, TrajectorySample,
};

/// An IMU interval longer than this multiple of the nominal period is
/// treated as a sensor dropout: no motion factor is created and the new
/// segment is re-anchored with weak priors.
const GAP_FACTOR: f64 = 3.0;
const GAP_SIGMA_ROT: f64 = 0.5;
const GAP_SIGMA_POS: f64 = 5.0;
const GAP_SIGMA_VEL: f64 = 5.0;

/// Which measurement streams feed the graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// LiDAR odometry + radar + IMU.
    Lri,
    /// LiDAR odometry + IMU.
    Li,
    /// Radar + IMU.
    Ri,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmootherConfig {
    pub mode: FusionMode,
    /// Window length in seconds.
    pub lag_s: f64,
    pub max_solver_iterations: usize,
    /// Relative cost-decrease threshold for convergence.
    pub convergence_tol: f64,
    pub lm_initial_lambda: f64,
    /// Optimization + slide cadence, in nodes.
    pub optimize_every_n_nodes: usize,
    /// Keep every n-th node when writing the estimate.
    pub output_stride: usize,
    pub prior_sigma_rot: f64,
    pub prior_sigma_pos: f64,
    pub prior_sigma_vel: f64,
    pub prior_sigma_bias_gyro: f64,
    pub prior_sigma_bias_accel: f64,
    /// Drop every position anchor (initial prior and dropout re-anchors),
    /// leaving global position to the measurements. Used for observability
    /// analysis.
    pub disable_position_prior: bool,
    /// Divergence guards on the estimated bias norms.
    pub max_bias_gyro: f64,
    pub max_bias_accel: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig {
            mode: FusionMode::Lri,
            lag_s: 2.0,
            max_solver_iterations: 15,
            convergence_tol: 1e-8,
            lm_initial_lambda: 1e-6,
            optimize_every_n_nodes: 40,
            output_stride: 1,
            prior_sigma_rot: 0.1,
            prior_sigma_pos: 0.1,
            prior_sigma_vel: 1.0,
            prior_sigma_bias_gyro: 0.05,
            prior_sigma_bias_accel: 0.5,
            disable_position_prior: false,
            max_bias_gyro: 1.0,
            max_bias_accel: 10.0,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self, out: &mut Vec<String>) {
        if !(self.lag_s > 0.0) {
            out.push(format!("estimator.lag_s must be > 0, got {}", self.lag_s));
        }
        if self.max_solver_iterations == 0 {
            out.push("estimator.max_solver_iterations must be >= 1".to_string());
        }
        if !(self.convergence_tol > 0.0) {
            out.push(format!(
                "estimator.convergence_tol must be > 0, got {}",
                self.convergence_tol
            ));
        }
        if !(self.lm_initial_lambda > 0.0) {
            out.push(format!(
                "estimator.lm_initial_lambda must be > 0, got {}",
                self.lm_initial_lambda
            ));
        }
        if self.optimize_every_n_nodes == 0 {
            out.push("estimator.optimize_every_n_nodes must be >= 1".to_string());
        }
        if self.output_stride == 0 {
            out.push("estimator.output_stride must be >= 1".to_string());
        }
        for (name, v) in [
            ("estimator.prior_sigma_rot", self.prior_sigma_rot),
            ("estimator.prior_sigma_pos", self.prior_sigma_pos),
            ("estimator.prior_sigma_vel", self.prior_sigma_vel),
            ("estimator.prior_sigma_bias_gyro", self.prior_sigma_bias_gyro),
            (
                "estimator.prior_sigma_bias_accel",
                self.prior_sigma_bias_accel,
            ),
            ("estimator.max_bias_gyro", self.max_bias_gyro),
            ("estimator.max_bias_accel", self.max_bias_accel),
        ] {
            if !(v > 0.0) {
                out.push(format!("{name} must be > 0, got {v}"));
            }
        }
    }

    fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            max_iterations: self.max_solver_iterations,
            convergence_tol: self.convergence_tol,
            initial_lambda: self.lm_initial_lambda,
        }
    }
}

/// Measurements dropped or skipped so far, cumulative over the run.
#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct DropCounters {
    pub expired_radar: u64,
    pub expired_lo: u64,
    pub aliased_radar: u64,
    pub radar_skipped_by_mode: u64,
    pub lo_skipped_by_mode: u64,
    pub cloud_no_consensus: u64,
    pub cloud_degenerate: u64,
}

/// One optimization report, serialized as a diagnostics JSONL row.
#[derive(Clone, Debug, Serialize)]
pub struct OptimizeDiagnostics {
    pub t_ns: i64,
    pub nodes: usize,
    pub iterations: usize,
    pub converged: bool,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub cost_trace: Vec<f64>,
    pub factors: FactorCounts,
    pub dropped: DropCounters,
    pub marginalized: usize,
    pub wall_time_ms: f64,
}

pub struct Smoother {
    cfg: SmootherConfig,
    imu_noise: ImuNoise,
    radar_cfg: RadarConfig,
    rig: SensorRig,
    window: FactorGraphWindow,
    pending_radar: VecDeque<RadarDopplerMeasurement>,
    pending_lo: VecDeque<LoPoseMeasurement>,
    results: Vec<TrajectorySample>,
    diagnostics: Vec<OptimizeDiagnostics>,
    counters: DropCounters,
    initial_pose: RigidTransform,
    nominal_dt: Option<f64>,
    nodes_since_optimize: usize,
    finished: bool,
}

impl Smoother {
    /// `initial_pose` anchors the first node (typically the first
    /// lidar-odometry pose); identity when the run starts unreferenced.
    pub fn new(
        cfg: SmootherConfig,
        imu_noise: ImuNoise,
        radar_cfg: RadarConfig,
        rig: SensorRig,
        initial_pose: Option<RigidTransform>,
    ) -> Self {
        Smoother {
            cfg,
            imu_noise,
            radar_cfg,
            rig,
            window: FactorGraphWindow::new(),
            pending_radar: VecDeque::new(),
            pending_lo: VecDeque::new(),
            results: Vec::new(),
            diagnostics: Vec::new(),
            counters: DropCounters::default(),
            initial_pose: initial_pose.unwrap_or_else(RigidTransform::identity),
            nominal_dt: None,
            nodes_since_optimize: 0,
            finished: false,
        }
    }

    pub fn window(&self) -> &FactorGraphWindow {
        &self.window
    }

    pub fn counters(&self) -> &DropCounters {
        &self.counters
    }

    pub fn diagnostics(&self) -> &[OptimizeDiagnostics] {
        &self.diagnostics
    }

    /// Finalized estimates in time order; complete only after [`Self::finish`].
    pub fn trajectory(&self) -> &[TrajectorySample] {
        &self.results
    }

    /// Creates the next node, attaches motion factors, and runs the
    /// optimize/slide cadence.
    pub fn add_imu(&mut self, m: ImuMeasurement) -> Result<()> {
        match self.window.nodes.back().copied() {
            None => {
                let state = NavState {
                    world_from_imu: self.initial_pose,
                    velocity: Vector3::zeros(),
                    bias_gyro: Vector3::zeros(),
                    bias_accel: Vector3::zeros(),
                };
                let id = self.window.push_node(m.t_ns, state, m)?;
                self.window.add_factor(Factor::PriorRot {
                    node: id,
                    mean: self.initial_pose.rotation,
                    sigma: self.cfg.prior_sigma_rot,
                });
                if !self.cfg.disable_position_prior {
                    self.window.add_factor(Factor::PriorPos {
                        node: id,
                        mean: self.initial_pose.translation,
                        sigma: self.cfg.prior_sigma_pos,
                    });
                }
                self.window.add_factor(Factor::PriorVel {
                    node: id,
                    mean: Vector3::zeros(),
                    sigma: self.cfg.prior_sigma_vel,
                });
                self.window.add_factor(Factor::PriorBias {
                    node: id,
                    mean_bg: Vector3::zeros(),
                    mean_ba: Vector3::zeros(),
                    sigma_bg: self.cfg.prior_sigma_bias_gyro,
                    sigma_ba: self.cfg.prior_sigma_bias_accel,
                });
            }
            Some(last) => {
                let dt = (m.t_ns - last.t_ns) as f64 * 1e-9;
                if dt <= 0.0 {
                    return Err(Error::Invalid(format!(
                        "IMU message at {} does not advance past node {}",
                        m.t_ns, last.t_ns
                    )));
                }
                let gap = self.nominal_dt.is_some_and(|nominal| dt > GAP_FACTOR * nominal);
                if !gap {
                    self.nominal_dt = Some(self.nominal_dt.map_or(dt, |n| n.min(dt)));
                }
                let state = if gap {
                    last.state
                } else {
                    propagate(&last.state, &last.imu, dt, &self.rig.gravity)
                };
                let id = self.window.push_node(m.t_ns, state, m)?;
                self.window.add_factor(Factor::BiasWalk {
                    first: last.id,
                    f: BiasWalkFactor {
                        dt,
                        sigma_bg: self.imu_noise.sigma_bg,
                        sigma_ba: self.imu_noise.sigma_ba,
                    },
                });
                if gap {
                    self.window.add_factor(Factor::PriorRot {
                        node: id,
                        mean: state.world_from_imu.rotation,
                        sigma: GAP_SIGMA_ROT,
                    });
                    if !self.cfg.disable_position_prior {
                        self.window.add_factor(Factor::PriorPos {
                            node: id,
                            mean: state.world_from_imu.translation,
                            sigma: GAP_SIGMA_POS,
                        });
                    }
                    self.window.add_factor(Factor::PriorVel {
                        node: id,
                        mean: state.velocity,
                        sigma: GAP_SIGMA_VEL,
                    });
                } else {
                    self.window.add_factor(Factor::Imu {
                        first: last.id,
                        f: ImuFactor {
                            measurement: last.imu,
                            dt,
                            noise: self.imu_noise,
                            gravity: self.rig.gravity,
                        },
                    });
                }
            }
        }
        self.drain_pending(m.t_ns)?;
        self.nodes_since_optimize += 1;
        if self.nodes_since_optimize >= self.cfg.optimize_every_n_nodes {
            self.optimize_and_slide(m.t_ns)?;
            self.nodes_since_optimize = 0;
        }
        Ok(())
    }

    /// Queues or attaches one doppler measurement, applying the mode filter
    /// and the ambiguity guard.
    pub fn add_radar(&mut self, m: RadarDopplerMeasurement) -> Result<()> {
        if self.cfg.mode == FusionMode::Li {
            self.counters.radar_skipped_by_mode += 1;
            return Ok(());
        }
        if is_aliasing_suspect(
            m.radial_speed,
            self.radar_cfg.max_doppler,
            self.radar_cfg.doppler_resolution,
        ) {
            self.counters.aliased_radar += 1;
            return Ok(());
        }
        match self.window.nodes.back() {
            Some(last) if m.t_ns <= last.t_ns => self.attach_radar(&m),
            _ => {
                self.pending_radar.push_back(m);
                Ok(())
            }
        }
    }

    /// Runs the point-cloud front-end and forwards its spread inliers. Scans
    /// without a static consensus or with degenerate geometry are counted
    /// and skipped.
    pub fn add_radar_cloud(&mut self, cloud: &RadarPointCloud, ransac: &RansacConfig) -> Result<()> {
        if self.cfg.mode == FusionMode::Li {
            self.counters.radar_skipped_by_mode += 1;
            return Ok(());
        }
        match process_cloud(cloud, ransac, self.radar_cfg.sigma) {
            Ok((_, measurements)) => {
                for m in measurements {
                    self.add_radar(m)?;
                }
                Ok(())
            }
            Err(Error::NoConsensus { .. }) => {
                self.counters.cloud_no_consensus += 1;
                Ok(())
            }
            Err(Error::DegenerateGeometry { .. }) => {
                self.counters.cloud_degenerate += 1;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    pub fn add_lo(&mut self, m: LoPoseMeasurement) -> Result<()> {
        if self.cfg.mode == FusionMode::Ri {
            self.counters.lo_skipped_by_mode += 1;
            return Ok(());
        }
        match self.window.nodes.back() {
            Some(last) if m.t_ns <= last.t_ns => self.attach_lo(&m),
            _ => {
                self.pending_lo.push_back(m);
                Ok(())
            }
        }
    }

    fn attach_radar(&mut self, m: &RadarDopplerMeasurement) -> Result<()> {
        let Some(front) = self.window.nodes.front() else {
            self.counters.expired_radar += 1;
            return Ok(());
        };
        if m.t_ns < front.t_ns {
            self.counters.expired_radar += 1;
            return Ok(());
        }
        let idx = associate_to_node(m.t_ns, self.window.node_times())
            .expect("window checked non-empty");
        let node = &self.window.nodes[idx];
        let f = RadarRadialSpeedFactor::new(
            &m.bearing,
            m.radial_speed,
            node.imu.angular_velocity,
            &self.rig.imu_from_radar,
            m.sigma,
            self.radar_cfg.huber_delta,
        )?;
        self.window.add_factor(Factor::Radar { node: node.id, f });
        Ok(())
    }

    fn attach_lo(&mut self, m: &LoPoseMeasurement) -> Result<()> {
        let Some(front) = self.window.nodes.front() else {
            self.counters.expired_lo += 1;
            return Ok(());
        };
        if m.t_ns < front.t_ns {
            self.counters.expired_lo += 1;
            return Ok(());
        }
        let idx = associate_to_node(m.t_ns, self.window.node_times())
            .expect("window checked non-empty");
        let node_id = self.window.nodes[idx].id;
        self.window.add_factor(Factor::Lo {
            node: node_id,
            f: LoPoseFactor {
                measured: m.world_from_imu,
                sigma: m.sigma,
            },
        });
        Ok(())
    }

    fn drain_pending(&mut self, up_to_ns: i64) -> Result<()> {
        while self
            .pending_radar
            .front()
            .is_some_and(|m| m.t_ns <= up_to_ns)
        {
            let m = self.pending_radar.pop_front().expect("front checked");
            self.attach_radar(&m)?;
        }
        while self.pending_lo.front().is_some_and(|m| m.t_ns <= up_to_ns) {
            let m = self.pending_lo.pop_front().expect("front checked");
            self.attach_lo(&m)?;
        }
        Ok(())
    }

    fn optimize_and_slide(&mut self, now_ns: i64) -> Result<()> {
        let started = Instant::now();
        let nodes = self.window.len();
        let outcome = optimize(&mut self.window, &self.cfg.solver_settings())?;
        for node in &self.window.nodes {
            if let Some(violation) = node
                .state
                .sanity_violation(self.cfg.max_bias_gyro, self.cfg.max_bias_accel)
            {
                return Err(Error::Diverged(format!(
                    "node {} at {} ns: {violation}",
                    node.id, node.t_ns
                )));
            }
        }
        let lag_ns = (self.cfg.lag_s * 1e9) as i64;
        let mut marginalized = 0;
        while self.window.len() >= 2
            && self.window.nodes[0].t_ns < now_ns.saturating_sub(lag_ns)
        {
            let node = marginalize_one(&mut self.window)?;
            self.results.push(TrajectorySample {
                t_ns: node.t_ns,
                state: node.state,
            });
            marginalized += 1;
        }
        self.diagnostics.push(OptimizeDiagnostics {
            t_ns: now_ns,
            nodes,
            iterations: outcome.iterations,
            converged: outcome.converged,
            initial_cost: outcome.initial_cost(),
            final_cost: outcome.final_cost(),
            cost_trace: outcome.cost_trace,
            factors: self.window.factor_counts(),
            dropped: self.counters,
            marginalized,
            wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        });
        Ok(())
    }

    /// Flushes buffered measurements, runs a final optimization, and moves
    /// the remaining window estimates into the trajectory.
    pub fn finish(&mut self) -> Result<()> {
        if self.finished {
            return Ok(());
        }
        if self.window.is_empty() {
            return Err(Error::EmptyStream("imu stream produced no nodes"));
        }
        let pending_radar: Vec<_> = self.pending_radar.drain(..).collect();
        for m in &pending_radar {
            self.attach_radar(m)?;
        }
        let pending_lo: Vec<_> = self.pending_lo.drain(..).collect();
        for m in &pending_lo {
            self.attach_lo(m)?;
        }
        let now = self.window.nodes.back().expect("window non-empty").t_ns;
        self.optimize_and_slide(now)?;
        for node in &self.window.nodes {
            self.results.push(TrajectorySample {
                t_ns: node.t_ns,
                state: node.state,
            });
        }
        self.finished = true;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::exp_rot;
    use nalgebra::{DMatrix, DVector, SVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dummy_imu(t_ns: i64) -> ImuMeasurement {
        ImuMeasurement {
            t_ns,
            angular_velocity: Vector3::zeros(),
            specific_force: Vector3::new(0.0, 0.0, 9.81),
        }
    }

    fn anchored_window(nodes: usize) -> FactorGraphWindow {
        let mut w = FactorGraphWindow::new();
        for k in 0..nodes {
            let t = k as i64 * 10_000_000;
            let id = w
                .push_node(t, NavState::identity(), dummy_imu(t))
                .unwrap();
            w.add_factor(Factor::PriorRot {
                node: id,
                mean: crate::lie::Rotation::identity(),
                sigma: 1e-3,
            });
            w.add_factor(Factor::PriorPos {
                node: id,
                mean: Vector3::zeros(),
                sigma: 1e-3,
            });
            w.add_factor(Factor::PriorVel {
                node: id,
                mean: Vector3::zeros(),
                sigma: 1e-3,
            });
        }
        w
    }

    fn settings() -> SolverSettings {
        SolverSettings {
            max_iterations: 25,
            convergence_tol: 1e-12,
            initial_lambda: 1e-8,
        }
    }

    #[test]
    fn priors_at_their_means_converge_in_zero_iterations() {
        let mut w = anchored_window(1);
        w.add_factor(Factor::PriorBias {
            node: 0,
            mean_bg: Vector3::zeros(),
            mean_ba: Vector3::zeros(),
            sigma_bg: 1e-4,
            sigma_ba: 1e-3,
        });
        let outcome = optimize(&mut w, &settings()).unwrap();
        assert_eq!(outcome.iterations, 0);
        assert!(outcome.converged);
        assert!(outcome.final_cost() < 1e-15);
    }

    #[test]
    fn equal_sigma_position_prior_and_lo_fuse_at_the_midpoint() {
        let mut w = FactorGraphWindow::new();
        let id = w.push_node(0, NavState::identity(), dummy_imu(0)).unwrap();
        w.add_factor(Factor::PriorRot {
            node: id,
            mean: crate::lie::Rotation::identity(),
            sigma: 1e-3,
        });
        w.add_factor(Factor::PriorPos {
            node: id,
            mean: Vector3::zeros(),
            sigma: 0.01,
        });
        w.add_factor(Factor::PriorVel {
            node: id,
            mean: Vector3::zeros(),
            sigma: 1.0,
        });
        let mut sigma = SVector::<f64, 6>::repeat(1e-3);
        sigma.fixed_rows_mut::<3>(3).fill(0.01);
        w.add_factor(Factor::Lo {
            node: id,
            f: LoPoseFactor {
                measured: RigidTransform::new(
                    crate::lie::Rotation::identity(),
                    Vector3::new(0.01, 0.0, 0.0),
                ),
                sigma,
            },
        });
        let outcome = optimize(&mut w, &settings()).unwrap();
        assert!(outcome.converged);
        let p = *w.nodes[0].state.position();
        assert!(
            (p - Vector3::new(0.005, 0.0, 0.0)).norm() < 1e-9,
            "fused position {p:?}"
        );
    }

    #[test]
    fn accepted_steps_never_increase_cost() {
        let mut w = anchored_window(4);
        // Pull node 2 around with a deliberately inconsistent pose factor.
        let mut sigma = SVector::<f64, 6>::repeat(0.05);
        sigma.fixed_rows_mut::<3>(3).fill(0.2);
        w.add_factor(Factor::Lo {
            node: 2,
            f: LoPoseFactor {
                measured: RigidTransform::new(
                    exp_rot(&Vector3::new(0.2, -0.1, 0.4)),
                    Vector3::new(1.0, -2.0, 0.5),
                ),
                sigma,
            },
        });
        let outcome = optimize(&mut w, &settings()).unwrap();
        for pair in outcome.cost_trace.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "trace {:?}", outcome.cost_trace);
        }
        assert!(outcome.iterations > 0);
    }

    /// Linear-Gaussian chain over the bias coordinates: the window solution
    /// must match a dense normal-equation solve, and sliding must not move
    /// the retained states.
    #[test]
    fn linear_bias_chain_matches_dense_solve_and_survives_sliding() {
        let n = 8usize;
        let dt = 0.01;
        let sigma_walk_bg = 1e-3;
        let sigma_walk_ba = 2e-3;
        let sigma_meas = 5e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(91);
        let means: Vec<(Vector3<f64>, Vector3<f64>)> = (0..n)
            .map(|_| {
                (
                    Vector3::new(
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                        rng.random_range(-0.01..0.01),
                    ),
                    Vector3::new(
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.05..0.05),
                        rng.random_range(-0.05..0.05),
                    ),
                )
            })
            .collect();

        let build = || {
            let mut w = anchored_window(n);
            for k in 0..n - 1 {
                w.add_factor(Factor::BiasWalk {
                    first: k as u64,
                    f: BiasWalkFactor {
                        dt,
                        sigma_bg: sigma_walk_bg,
                        sigma_ba: sigma_walk_ba,
                    },
                });
            }
            for (k, (bg, ba)) in means.iter().enumerate() {
                w.add_factor(Factor::PriorBias {
                    node: k as u64,
                    mean_bg: *bg,
                    mean_ba: *ba,
                    sigma_bg: sigma_meas,
                    sigma_ba: sigma_meas,
                });
            }
            w
        };

        // Dense oracle over the 6n bias coordinates (everything else is
        // pinned at its prior mean and stays there).
        let dim = 6 * n;
        let mut h = DMatrix::<f64>::zeros(dim, dim);
        let mut b = DVector::<f64>::zeros(dim);
        let wg = 1.0 / (sigma_walk_bg * dt.sqrt());
        let wa = 1.0 / (sigma_walk_ba * dt.sqrt());
        for k in 0..n - 1 {
            for axis in 0..6 {
                let w = if axis < 3 { wg } else { wa };
                let i = 6 * k + axis;
                let j = 6 * (k + 1) + axis;
                h[(i, i)] += w * w;
                h[(j, j)] += w * w;
                h[(i, j)] -= w * w;
                h[(j, i)] -= w * w;
            }
        }
        let wm = 1.0 / sigma_meas;
        for (k, (bg, ba)) in means.iter().enumerate() {
            for axis in 0..6 {
                let i = 6 * k + axis;
                let target = if axis < 3 { bg[axis] } else { ba[axis - 3] };
                h[(i, i)] += wm * wm;
                b[i] += wm * wm * target;
            }
        }
        let oracle = h.lu().solve(&b).unwrap();

        let mut batch = build();
        optimize(&mut batch, &settings()).unwrap();
        for k in 0..n {
            let s = batch.nodes[k].state;
            for axis in 0..3 {
                assert!((s.bias_gyro[axis] - oracle[6 * k + axis]).abs() < 1e-9);
                assert!((s.bias_accel[axis] - oracle[6 * k + 3 + axis]).abs() < 1e-9);
            }
        }

        let mut slid = build();
        optimize(&mut slid, &settings()).unwrap();
        for _ in 0..3 {
            marginalize_one(&mut slid).unwrap();
        }
        optimize(&mut slid, &settings()).unwrap();
        for k in 3..n {
            let s = slid.nodes[k - 3].state;
            for axis in 0..3 {
                assert!(
                    (s.bias_gyro[axis] - oracle[6 * k + axis]).abs() < 1e-9,
                    "node {k} gyro axis {axis} after sliding"
                );
                assert!((s.bias_accel[axis] - oracle[6 * k + 3 + axis]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn marginalization_leaves_retained_estimates_untouched() {
        let mut w = anchored_window(5);
        for k in 0..4 {
            w.add_factor(Factor::BiasWalk {
                first: k,
                f: BiasWalkFactor {
                    dt: 0.01,
                    sigma_bg: 1e-4,
                    sigma_ba: 1e-3,
                },
            });
        }
        optimize(&mut w, &settings()).unwrap();
        let before = w.current_states();
        marginalize_one(&mut w).unwrap();
        let after = w.current_states();
        for (b, a) in before[1..].iter().zip(&after) {
            assert_eq!(b.position(), a.position());
            assert_eq!(b.velocity, a.velocity);
            assert_eq!(b.bias_gyro, a.bias_gyro);
        }
        assert!(w.marginal_prior.is_some());
    }

    fn smoother_config() -> SmootherConfig {
        SmootherConfig {
            lag_s: 0.05,
            optimize_every_n_nodes: 5,
            ..SmootherConfig::default()
        }
    }

    #[test]
    fn node_count_equals_imu_message_count() {
        let mut s = Smoother::new(
            SmootherConfig {
                lag_s: 100.0,
                ..smoother_config()
            },
            ImuNoise::default(),
            RadarConfig::default(),
            SensorRig::identity(),
            None,
        );
        for k in 0..50 {
            s.add_imu(dummy_imu(k * 2_500_000)).unwrap();
        }
        // Radar and LO must not create nodes.
        s.add_radar(RadarDopplerMeasurement {
            t_ns: 31_000_000,
            bearing: Vector3::x(),
            radial_speed: 0.0,
            sigma: 0.1,
        })
        .unwrap();
        s.add_lo(LoPoseMeasurement {
            t_ns: 52_000_000,
            world_from_imu: RigidTransform::identity(),
            sigma: SVector::<f64, 6>::repeat(0.05),
        })
        .unwrap();
        assert_eq!(s.window().len(), 50);
        s.finish().unwrap();
        assert_eq!(s.trajectory().len(), 50);
    }

    #[test]
    fn delayed_measurements_attach_to_the_nearest_node() {
        let mut s = Smoother::new(
            SmootherConfig {
                lag_s: 100.0,
                optimize_every_n_nodes: 1000,
                ..SmootherConfig::default()
            },
            ImuNoise::default(),
            RadarConfig::default(),
            SensorRig::identity(),
            None,
        );
        for k in 0..6 {
            s.add_imu(dummy_imu(k * 10_000_000)).unwrap();
        }
        // 41 ms is nearest to the 40 ms node even though 50 ms is newest.
        s.add_lo(LoPoseMeasurement {
            t_ns: 41_000_000,
            world_from_imu: RigidTransform::identity(),
            sigma: SVector::<f64, 6>::repeat(0.05),
        })
        .unwrap();
        let lo_nodes: Vec<u64> = s
            .window()
            .factors
            .iter()
            .filter_map(|f| match f {
                Factor::Lo { node, .. } => Some(*node),
                _ => None,
            })
            .collect();
        assert_eq!(lo_nodes, vec![4]);

        // A measurement past the newest node waits for its right neighbor.
        s.add_radar(RadarDopplerMeasurement {
            t_ns: 55_000_000,
            bearing: Vector3::x(),
            radial_speed: 0.0,
            sigma: 0.1,
        })
        .unwrap();
        let radar_count = |s: &Smoother| {
            s.window()
                .factors
                .iter()
                .filter(|f| matches!(f, Factor::Radar { .. }))
                .count()
        };
        assert_eq!(radar_count(&s), 0);
        s.add_imu(dummy_imu(60_000_000)).unwrap();
        assert_eq!(radar_count(&s), 1);
        let radar_node = s
            .window()
            .factors
            .iter()
            .find_map(|f| match f {
                Factor::Radar { node, .. } => Some(*node),
                _ => None,
            })
            .unwrap();
        assert_eq!(radar_node, 5);
    }

    #[test]
    fn expired_measurements_increment_drop_counters() {
        let mut s = Smoother::new(
            smoother_config(),
            ImuNoise::default(),
            RadarConfig::default(),
            SensorRig::identity(),
            None,
        );
        for k in 0..100 {
            s.add_imu(dummy_imu(k * 2_500_000)).unwrap();
        }
        assert!(s.window().nodes[0].t_ns > 0, "window should have slid");
        s.add_radar(RadarDopplerMeasurement {
            t_ns: 0,
            bearing: Vector3::x(),
            radial_speed: 0.0,
            sigma: 0.1,
        })
        .unwrap();
        s.add_lo(LoPoseMeasurement {
            t_ns: 0,
            world_from_imu: RigidTransform::identity(),
            sigma: SVector::<f64, 6>::repeat(0.05),
        })
        .unwrap();
        assert_eq!(s.counters().expired_radar, 1);
        assert_eq!(s.counters().expired_lo, 1);
    }

    #[test]
    fn mode_filters_skip_streams_and_count_them() {
        let mut li = Smoother::new(
            SmootherConfig {
                mode: FusionMode::Li,
                ..smoother_config()
            },
            ImuNoise::default(),
            RadarConfig::default(),
            SensorRig::identity(),
            None,
        );
        li.add_imu(dummy_imu(0)).unwrap();
        li.add_radar(RadarDopplerMeasurement {
            t_ns: 0,
            bearing: Vector3::x(),
            radial_speed: 0.0,
            sigma: 0.1,
        })
        .unwrap();
        assert_eq!(li.counters().radar_skipped_by_mode, 1);

        let mut ri = Smoother::new(
            SmootherConfig {
                mode: FusionMode::Ri,
                ..smoother_config()
            },
            ImuNoise::default(),
            RadarConfig::default(),
            SensorRig::identity(),
            None,
        );
        ri.add_imu(dummy_imu(0)).unwrap();
        ri.add_lo(LoPoseMeasurement {
            t_ns: 0,
            world_from_imu: RigidTransform::identity(),
            sigma: SVector::<f64, 6>::repeat(0.05),
        })
        .unwrap();
        assert_eq!(ri.counters().lo_skipped_by_mode, 1);
        assert!(ri
            .window()
            .factors
            .iter()
            .all(|f| !matches!(f, Factor::Lo { .. })));
    }

    #[test]
    fn aliasing_suspects_are_dropped() {
        let mut s = Smoother::new(
            smoother_config(),
            ImuNoise::default(),
            RadarConfig::default(),
            SensorRig::identity(),
            None,
        );
        s.add_imu(dummy_imu(0)).unwrap();
        s.add_radar(RadarDopplerMeasurement {
            t_ns: 0,
            bearing: Vector3::x(),
            radial_speed: 43.1,
            sigma: 0.1,
        })
        .unwrap();
        assert_eq!(s.counters().aliased_radar, 1);
    }

    #[test]
    fn imu_dropout_splits_the_motion_chain_and_reanchors() {
        let mut s = Smoother::new(
            SmootherConfig {
                lag_s: 100.0,
                optimize_every_n_nodes: 1000,
                ..SmootherConfig::default()
            },
            ImuNoise::default(),
            RadarConfig::default(),
            SensorRig::identity(),
            None,
        );
        for k in 0..10 {
            s.add_imu(dummy_imu(k * 2_500_000)).unwrap();
        }
        // 12.5 ms hole: five nominal periods.
        s.add_imu(dummy_imu(9 * 2_500_000 + 12_500_000)).unwrap();
        s.add_imu(dummy_imu(9 * 2_500_000 + 15_000_000)).unwrap();
        let imu_factors = s
            .window()
            .factors
            .iter()
            .filter(|f| matches!(f, Factor::Imu { .. }))
            .count();
        let walks = s
            .window()
            .factors
            .iter()
            .filter(|f| matches!(f, Factor::BiasWalk { .. }))
            .count();
        // 11 intervals, one of them a dropout.
        assert_eq!(imu_factors, 10);
        assert_eq!(walks, 11);
        // The post-gap node carries fresh weak anchors.
        let gap_priors = s
            .window()
            .factors
            .iter()
            .filter(|f| matches!(f, Factor::PriorRot { node: 10, .. } | Factor::PriorPos { node: 10, .. } | Factor::PriorVel { node: 10, .. }))
            .count();
        assert_eq!(gap_priors, 3);
    }

    #[test]
    fn marginal_prior_stays_psd_over_a_thousand_slides() {
        let mut s = Smoother::new(
            SmootherConfig {
                lag_s: 0.02,
                optimize_every_n_nodes: 10,
                ..SmootherConfig::default()
            },
            ImuNoise::default(),
            RadarConfig::default(),
            SensorRig::identity(),
            None,
        );
        let mut slides = 0usize;
        for k in 0..1200 {
            let t = k * 1_000_000;
            s.add_imu(ImuMeasurement {
                t_ns: t,
                angular_velocity: Vector3::new(0.0, 0.0, 0.4),
                specific_force: Vector3::new(0.0, 0.0, 9.81),
            })
            .unwrap();
            if let Some(prior) = &s.window().marginal_prior {
                let eig = prior.info.symmetric_eigen();
                let min = eig.eigenvalues.min();
                let max = eig.eigenvalues.max().max(1.0);
                assert!(
                    min >= -1e-9 * max,
                    "prior lost PSD at node {k}: min eigenvalue {min}"
                );
            }
        }
        for d in s.diagnostics() {
            slides += d.marginalized;
        }
        assert!(slides >= 1000, "only {slides} slides");
    }
}
