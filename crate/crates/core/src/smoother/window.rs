//! Sliding-window graph storage: time-ordered nodes, the factors between
//! them, and the Gaussian prior left behind by marginalization.
//!
//! Nodes are keyed by a monotonically increasing id that survives sliding,
//! so factors stay valid while the front of the window is eliminated. All
//! factors are unary or join adjacent nodes, which keeps the normal
//! equations block tridiagonal.

use std::collections::VecDeque;

use nalgebra::{DMatrix, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::imu::{BiasWalkFactor, ImuFactor};
use crate::lie::{se3_right_jacobian_inv, log_rot, so3_right_jacobian_inv, Rotation};
use crate::lo::LoPoseFactor;
use crate::radar::{huber_cost, robust_weight, RadarRadialSpeedFactor};
use crate::types::{ImuMeasurement, NavState, NodeTangent, ATT, BA, BG, NODE_DOF, POS, VEL};

pub type InfoMatrix = SMatrix<f64, NODE_DOF, NODE_DOF>;

/// One estimation node. The stored IMU message is the one that created the
/// node; it drives the interval to the next node and serves as the gyro
/// sample for radar factors associated here.
#[derive(Clone, Copy, Debug)]
pub struct Node {
    pub id: u64,
    pub t_ns: i64,
    pub state: NavState,
    pub imu: ImuMeasurement,
}

#[derive(Clone, Debug)]
pub enum Factor {
    /// Motion factor between `first` and `first + 1`.
    Imu { first: u64, f: ImuFactor },
    /// Bias random walk between `first` and `first + 1` (spans IMU gaps too).
    BiasWalk { first: u64, f: BiasWalkFactor },
    Radar { node: u64, f: RadarRadialSpeedFactor },
    Lo { node: u64, f: LoPoseFactor },
    PriorRot { node: u64, mean: Rotation, sigma: f64 },
    PriorPos { node: u64, mean: Vector3<f64>, sigma: f64 },
    PriorVel { node: u64, mean: Vector3<f64>, sigma: f64 },
    PriorBias {
        node: u64,
        mean_bg: Vector3<f64>,
        mean_ba: Vector3<f64>,
        sigma_bg: f64,
        sigma_ba: f64,
    },
}

impl Factor {
    /// Lowest node id the factor touches.
    pub fn first_node(&self) -> u64 {
        match self {
            Factor::Imu { first, .. } | Factor::BiasWalk { first, .. } => *first,
            Factor::Radar { node, .. }
            | Factor::Lo { node, .. }
            | Factor::PriorRot { node, .. }
            | Factor::PriorPos { node, .. }
            | Factor::PriorVel { node, .. }
            | Factor::PriorBias { node, .. } => *node,
        }
    }

    pub fn is_binary(&self) -> bool {
        matches!(self, Factor::Imu { .. } | Factor::BiasWalk { .. })
    }

    pub fn describe(&self) -> String {
        match self {
            Factor::Imu { first, .. } => format!("imu factor between nodes {first} and {}", first + 1),
            Factor::BiasWalk { first, .. } => {
                format!("bias walk between nodes {first} and {}", first + 1)
            }
            Factor::Radar { node, .. } => format!("radial-speed factor at node {node}"),
            Factor::Lo { node, .. } => format!("lidar-odometry pose factor at node {node}"),
            Factor::PriorRot { node, .. } => format!("rotation prior at node {node}"),
            Factor::PriorPos { node, .. } => format!("position prior at node {node}"),
            Factor::PriorVel { node, .. } => format!("velocity prior at node {node}"),
            Factor::PriorBias { node, .. } => format!("bias prior at node {node}"),
        }
    }
}

/// Gaussian information left behind by marginalization, anchored at a fixed
/// linearization point over the window's first node:
///
/// ```text
/// cost(x) = 1/2 d^T H d + g^T d,   d = x0.local_coordinates(x)
/// ```
#[derive(Clone, Debug)]
pub struct MarginalPrior {
    pub node: u64,
    pub x0: NavState,
    pub info: InfoMatrix,
    pub grad: SVector<f64, NODE_DOF>,
}

impl MarginalPrior {
    /// The local offset from the stored linearization point plus the exact
    /// Jacobian of that offset under right perturbations of `state` (the
    /// inverse right SE(3) Jacobian on the pose block, identity elsewhere).
    pub fn delta_and_jacobian(&self, state: &NavState) -> (NodeTangent, InfoMatrix) {
        let delta = self.x0.local_coordinates(state);
        let xi = delta.fixed_rows::<6>(ATT).into_owned();
        let mut a = InfoMatrix::identity();
        a.fixed_view_mut::<6, 6>(0, 0)
            .copy_from(&se3_right_jacobian_inv(&xi));
        (delta, a)
    }

    pub fn cost(&self, state: &NavState) -> f64 {
        let delta = self.x0.local_coordinates(state);
        0.5 * (delta.transpose() * self.info * delta)[0] + self.grad.dot(&delta)
    }

    /// Adds the prior's quadratic model to a node's normal-equation blocks.
    pub fn contribute(&self, state: &NavState, h: &mut InfoMatrix, b: &mut SVector<f64, NODE_DOF>) {
        let (delta, a) = self.delta_and_jacobian(state);
        *h += a.transpose() * self.info * a;
        *b -= a.transpose() * (self.info * delta + self.grad);
    }
}

/// Per-kind factor totals, reported in diagnostics.
#[derive(Clone, Copy, Debug, Default, serde::Serialize)]
pub struct FactorCounts {
    pub imu: usize,
    pub bias_walk: usize,
    pub radar: usize,
    pub lo: usize,
    pub prior: usize,
}

pub struct FactorGraphWindow {
    pub nodes: VecDeque<Node>,
    pub factors: Vec<Factor>,
    pub marginal_prior: Option<MarginalPrior>,
    node_times: Vec<i64>,
    next_id: u64,
}

impl Default for FactorGraphWindow {
    fn default() -> Self {
        Self::new()
    }
}

impl FactorGraphWindow {
    pub fn new() -> Self {
        FactorGraphWindow {
            nodes: VecDeque::new(),
            factors: Vec::new(),
            marginal_prior: None,
            node_times: Vec::new(),
            next_id: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first_id(&self) -> u64 {
        self.nodes.front().map(|n| n.id).unwrap_or(self.next_id)
    }

    pub fn node_times(&self) -> &[i64] {
        &self.node_times
    }

    pub fn index_of(&self, id: u64) -> usize {
        (id - self.first_id()) as usize
    }

    /// Appends a node; timestamps must strictly increase.
    pub fn push_node(&mut self, t_ns: i64, state: NavState, imu: ImuMeasurement) -> Result<u64> {
        if let Some(last) = self.nodes.back() {
            if t_ns <= last.t_ns {
                return Err(Error::Invalid(format!(
                    "node time {t_ns} does not advance past {}",
                    last.t_ns
                )));
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        self.nodes.push_back(Node { id, t_ns, state, imu });
        self.node_times.push(t_ns);
        Ok(id)
    }

    pub(crate) fn pop_front_node(&mut self) -> Option<Node> {
        let n = self.nodes.pop_front();
        if n.is_some() {
            self.node_times.remove(0);
        }
        n
    }

    pub fn add_factor(&mut self, f: Factor) {
        debug_assert!(f.first_node() >= self.first_id());
        debug_assert!(f.first_node() + if f.is_binary() { 1 } else { 0 } < self.next_id);
        self.factors.push(f);
    }

    pub fn factor_counts(&self) -> FactorCounts {
        let mut c = FactorCounts::default();
        for f in &self.factors {
            match f {
                Factor::Imu { .. } => c.imu += 1,
                Factor::BiasWalk { .. } => c.bias_walk += 1,
                Factor::Radar { .. } => c.radar += 1,
                Factor::Lo { .. } => c.lo += 1,
                _ => c.prior += 1,
            }
        }
        c
    }

    pub fn current_states(&self) -> Vec<NavState> {
        self.nodes.iter().map(|n| n.state).collect()
    }

    pub fn write_states(&mut self, states: &[NavState]) {
        debug_assert_eq!(states.len(), self.nodes.len());
        for (node, s) in self.nodes.iter_mut().zip(states) {
            node.state = *s;
        }
    }

    /// Total robust cost of the graph at `states` (parallel to the nodes):
    /// `1/2 ||e||^2` of whitened residuals, the Huber cost for radar rows,
    /// and the marginal prior's quadratic. Non-finite contributions abort
    /// with the offending factor.
    pub fn total_cost(&self, states: &[NavState]) -> Result<f64> {
        let first = self.first_id();
        let mut total = 0.0;
        for f in &self.factors {
            let k = (f.first_node() - first) as usize;
            let c = match f {
                Factor::Imu { f, .. } => {
                    let e = f.residual(&states[k], &states[k + 1]);
                    let s = f.whitening_sigmas();
                    let mut acc = 0.0;
                    for r in 0..9 {
                        let w = e[r] / s[r];
                        acc += 0.5 * w * w;
                    }
                    acc
                }
                Factor::BiasWalk { f, .. } => {
                    let e = f.residual(&states[k], &states[k + 1]);
                    let s = f.whitening_sigmas();
                    let mut acc = 0.0;
                    for r in 0..6 {
                        let w = e[r] / s[r];
                        acc += 0.5 * w * w;
                    }
                    acc
                }
                Factor::Radar { f, .. } => {
                    huber_cost(f.residual(&states[k]) / f.sigma, f.huber_delta / f.sigma)
                }
                Factor::Lo { f, .. } => {
                    let e = f.residual(&states[k]);
                    let mut acc = 0.0;
                    for r in 0..6 {
                        let w = e[r] / f.sigma[r];
                        acc += 0.5 * w * w;
                    }
                    acc
                }
                Factor::PriorRot { mean, sigma, .. } => {
                    let e = log_rot(&mean.inverse().compose(states[k].rotation()));
                    0.5 * (e / *sigma).norm_squared()
                }
                Factor::PriorPos { mean, sigma, .. } => {
                    0.5 * ((states[k].position() - mean) / *sigma).norm_squared()
                }
                Factor::PriorVel { mean, sigma, .. } => {
                    0.5 * ((states[k].velocity - mean) / *sigma).norm_squared()
                }
                Factor::PriorBias {
                    mean_bg,
                    mean_ba,
                    sigma_bg,
                    sigma_ba,
                    ..
                } => {
                    0.5 * ((states[k].bias_gyro - mean_bg) / *sigma_bg).norm_squared()
                        + 0.5 * ((states[k].bias_accel - mean_ba) / *sigma_ba).norm_squared()
                }
            };
            if !c.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite cost from {}",
                    f.describe()
                )));
            }
            total += c;
        }
        if let Some(prior) = &self.marginal_prior {
            let k = (prior.node - first) as usize;
            let c = prior.cost(&states[k]);
            if !c.is_finite() {
                return Err(Error::Diverged(
                    "non-finite cost from the marginalization prior".to_string(),
                ));
            }
            total += c;
        }
        Ok(total)
    }

    /// Block-tridiagonal normal equations at the current estimates, whitened
    /// and IRLS-weighted: diagonal blocks, upper off-diagonal blocks, and
    /// the right-hand side `-J^T W e`.
    pub fn assemble(
        &self,
    ) -> (
        Vec<InfoMatrix>,
        Vec<InfoMatrix>,
        Vec<SVector<f64, NODE_DOF>>,
    ) {
        let n = self.nodes.len();
        let first = self.first_id();
        let mut diag = vec![InfoMatrix::zeros(); n];
        let mut upper = vec![InfoMatrix::zeros(); n.saturating_sub(1)];
        let mut rhs = vec![SVector::<f64, NODE_DOF>::zeros(); n];
        for f in &self.factors {
            let k = (f.first_node() - first) as usize;
            match f {
                Factor::Imu { f, .. } => {
                    let (si, sj) = (&self.nodes[k].state, &self.nodes[k + 1].state);
                    let e = f.residual(si, sj);
                    let (ji, jj) = f.jacobians(si, sj);
                    let (ji, jj, ew) = whiten_binary(&ji, &jj, &e, &f.whitening_sigmas());
                    add_binary(&mut diag, &mut upper, &mut rhs, k, &ji, &jj, &ew);
                }
                Factor::BiasWalk { f, .. } => {
                    let (si, sj) = (&self.nodes[k].state, &self.nodes[k + 1].state);
                    let e = f.residual(si, sj);
                    let (ji, jj) = f.jacobians();
                    let (ji, jj, ew) = whiten_binary(&ji, &jj, &e, &f.whitening_sigmas());
                    add_binary(&mut diag, &mut upper, &mut rhs, k, &ji, &jj, &ew);
                }
                Factor::Radar { f, .. } => {
                    let s = &self.nodes[k].state;
                    let e = SVector::<f64, 1>::new(f.residual(s));
                    let j = f.jacobian(s);
                    let w = robust_weight(e[0], f.huber_delta);
                    let (jw, ew) = whiten_unary(&j, &e, &SVector::<f64, 1>::new(f.sigma), w);
                    add_unary(&mut diag, &mut rhs, k, &jw, &ew);
                }
                Factor::Lo { f, .. } => {
                    let s = &self.nodes[k].state;
                    let e = f.residual(s);
                    let j = f.jacobian(s);
                    let (jw, ew) = whiten_unary(&j, &e, &f.sigma, 1.0);
                    add_unary(&mut diag, &mut rhs, k, &jw, &ew);
                }
                Factor::PriorRot { mean, sigma, .. } => {
                    let s = &self.nodes[k].state;
                    let e = log_rot(&mean.inverse().compose(s.rotation()));
                    let mut j = SMatrix::<f64, 3, NODE_DOF>::zeros();
                    j.fixed_view_mut::<3, 3>(0, ATT)
                        .copy_from(&so3_right_jacobian_inv(&e));
                    let (jw, ew) = whiten_unary(&j, &e, &Vector3::repeat(*sigma), 1.0);
                    add_unary(&mut diag, &mut rhs, k, &jw, &ew);
                }
                Factor::PriorPos { mean, sigma, .. } => {
                    let s = &self.nodes[k].state;
                    let e = s.position() - mean;
                    let mut j = SMatrix::<f64, 3, NODE_DOF>::zeros();
                    j.fixed_view_mut::<3, 3>(0, POS)
                        .copy_from(&s.rotation().matrix());
                    let (jw, ew) = whiten_unary(&j, &e, &Vector3::repeat(*sigma), 1.0);
                    add_unary(&mut diag, &mut rhs, k, &jw, &ew);
                }
                Factor::PriorVel { mean, sigma, .. } => {
                    let s = &self.nodes[k].state;
                    let e = s.velocity - mean;
                    let mut j = SMatrix::<f64, 3, NODE_DOF>::zeros();
                    j.fixed_view_mut::<3, 3>(0, VEL)
                        .copy_from(&SMatrix::<f64, 3, 3>::identity());
                    let (jw, ew) = whiten_unary(&j, &e, &Vector3::repeat(*sigma), 1.0);
                    add_unary(&mut diag, &mut rhs, k, &jw, &ew);
                }
                Factor::PriorBias {
                    mean_bg,
                    mean_ba,
                    sigma_bg,
                    sigma_ba,
                    ..
                } => {
                    let s = &self.nodes[k].state;
                    let mut e = SVector::<f64, 6>::zeros();
                    e.fixed_rows_mut::<3>(0).copy_from(&(s.bias_gyro - mean_bg));
                    e.fixed_rows_mut::<3>(3).copy_from(&(s.bias_accel - mean_ba));
                    let mut j = SMatrix::<f64, 6, NODE_DOF>::zeros();
                    j.fixed_view_mut::<3, 3>(0, BG)
                        .copy_from(&SMatrix::<f64, 3, 3>::identity());
                    j.fixed_view_mut::<3, 3>(3, BA)
                        .copy_from(&SMatrix::<f64, 3, 3>::identity());
                    let mut sig = SVector::<f64, 6>::zeros();
                    sig.fixed_rows_mut::<3>(0).fill(*sigma_bg);
                    sig.fixed_rows_mut::<3>(3).fill(*sigma_ba);
                    let (jw, ew) = whiten_unary(&j, &e, &sig, 1.0);
                    add_unary(&mut diag, &mut rhs, k, &jw, &ew);
                }
            }
        }
        if let Some(prior) = &self.marginal_prior {
            let k = (prior.node - first) as usize;
            prior.contribute(&self.nodes[k].state, &mut diag[k], &mut rhs[k]);
        }
        (diag, upper, rhs)
    }

    /// The whitened, IRLS-weighted factor Jacobian stacked over all factor
    /// rows and all node tangents, for observability analysis. The
    /// marginalization prior is not a residual and is excluded.
    pub fn stacked_whitened_jacobian(&self) -> DMatrix<f64> {
        let n = self.nodes.len();
        let first = self.first_id();
        let rows: usize = self
            .factors
            .iter()
            .map(|f| match f {
                Factor::Imu { .. } => 9,
                Factor::BiasWalk { .. } | Factor::Lo { .. } | Factor::PriorBias { .. } => 6,
                Factor::Radar { .. } => 1,
                _ => 3,
            })
            .sum();
        let mut out = DMatrix::<f64>::zeros(rows, n * NODE_DOF);
        let mut row = 0usize;
        let mut put = |row: usize, k: usize, block: &DMatrix<f64>| {
            let mut view =
                out.view_mut((row, k * NODE_DOF), (block.nrows(), NODE_DOF));
            view.copy_from(block);
        };
        for f in &self.factors {
            let k = (f.first_node() - first) as usize;
            match f {
                Factor::Imu { f, .. } => {
                    let (si, sj) = (&self.nodes[k].state, &self.nodes[k + 1].state);
                    let e = f.residual(si, sj);
                    let (ji, jj) = f.jacobians(si, sj);
                    let (ji, jj, _) = whiten_binary(&ji, &jj, &e, &f.whitening_sigmas());
                    put(row, k, &to_dyn(&ji));
                    put(row, k + 1, &to_dyn(&jj));
                    row += 9;
                }
                Factor::BiasWalk { f, .. } => {
                    let (si, sj) = (&self.nodes[k].state, &self.nodes[k + 1].state);
                    let e = f.residual(si, sj);
                    let (ji, jj) = f.jacobians();
                    let (ji, jj, _) = whiten_binary(&ji, &jj, &e, &f.whitening_sigmas());
                    put(row, k, &to_dyn(&ji));
                    put(row, k + 1, &to_dyn(&jj));
                    row += 6;
                }
                Factor::Radar { f, .. } => {
                    let s = &self.nodes[k].state;
                    let e = SVector::<f64, 1>::new(f.residual(s));
                    let w = robust_weight(e[0], f.huber_delta);
                    let (jw, _) =
                        whiten_unary(&f.jacobian(s), &e, &SVector::<f64, 1>::new(f.sigma), w);
                    put(row, k, &to_dyn(&jw));
                    row += 1;
                }
                Factor::Lo { f, .. } => {
                    let s = &self.nodes[k].state;
                    let (jw, _) = whiten_unary(&f.jacobian(s), &f.residual(s), &f.sigma, 1.0);
                    put(row, k, &to_dyn(&jw));
                    row += 6;
                }
                Factor::PriorRot { mean, sigma, .. } => {
                    let s = &self.nodes[k].state;
                    let e = log_rot(&mean.inverse().compose(s.rotation()));
                    let mut j = SMatrix::<f64, 3, NODE_DOF>::zeros();
                    j.fixed_view_mut::<3, 3>(0, ATT)
                        .copy_from(&so3_right_jacobian_inv(&e));
                    let (jw, _) = whiten_unary(&j, &e, &Vector3::repeat(*sigma), 1.0);
                    put(row, k, &to_dyn(&jw));
                    row += 3;
                }
                Factor::PriorPos { sigma, .. } => {
                    let s = &self.nodes[k].state;
                    let mut j = SMatrix::<f64, 3, NODE_DOF>::zeros();
                    j.fixed_view_mut::<3, 3>(0, POS)
                        .copy_from(&s.rotation().matrix());
                    let (jw, _) =
                        whiten_unary(&j, &Vector3::zeros(), &Vector3::repeat(*sigma), 1.0);
                    put(row, k, &to_dyn(&jw));
                    row += 3;
                }
                Factor::PriorVel { sigma, .. } => {
                    let mut j = SMatrix::<f64, 3, NODE_DOF>::zeros();
                    j.fixed_view_mut::<3, 3>(0, VEL)
                        .copy_from(&SMatrix::<f64, 3, 3>::identity());
                    let (jw, _) =
                        whiten_unary(&j, &Vector3::zeros(), &Vector3::repeat(*sigma), 1.0);
                    put(row, k, &to_dyn(&jw));
                    row += 3;
                }
                Factor::PriorBias {
                    sigma_bg, sigma_ba, ..
                } => {
                    let mut j = SMatrix::<f64, 6, NODE_DOF>::zeros();
                    j.fixed_view_mut::<3, 3>(0, BG)
                        .copy_from(&SMatrix::<f64, 3, 3>::identity());
                    j.fixed_view_mut::<3, 3>(3, BA)
                        .copy_from(&SMatrix::<f64, 3, 3>::identity());
                    let mut sig = SVector::<f64, 6>::zeros();
                    sig.fixed_rows_mut::<3>(0).fill(*sigma_bg);
                    sig.fixed_rows_mut::<3>(3).fill(*sigma_ba);
                    let (jw, _) = whiten_unary(&j, &SVector::<f64, 6>::zeros(), &sig, 1.0);
                    put(row, k, &to_dyn(&jw));
                    row += 6;
                }
            }
        }
        out
    }
}

fn to_dyn<const R: usize>(m: &SMatrix<f64, R, NODE_DOF>) -> DMatrix<f64> {
    DMatrix::from_fn(R, NODE_DOF, |r, c| m[(r, c)])
}

/// Scales Jacobian rows and residual by `sqrt(weight) / sigma_row`.
pub(crate) fn whiten_unary<const R: usize>(
    j: &SMatrix<f64, R, NODE_DOF>,
    e: &SVector<f64, R>,
    sigma: &SVector<f64, R>,
    weight: f64,
) -> (SMatrix<f64, R, NODE_DOF>, SVector<f64, R>) {
    let sw = weight.sqrt();
    let mut jw = *j;
    let mut ew = *e;
    for r in 0..R {
        let s = sw / sigma[r];
        jw.row_mut(r).scale_mut(s);
        ew[r] *= s;
    }
    (jw, ew)
}

pub(crate) fn whiten_binary<const R: usize>(
    ji: &SMatrix<f64, R, NODE_DOF>,
    jj: &SMatrix<f64, R, NODE_DOF>,
    e: &SVector<f64, R>,
    sigma: &SVector<f64, R>,
) -> (
    SMatrix<f64, R, NODE_DOF>,
    SMatrix<f64, R, NODE_DOF>,
    SVector<f64, R>,
) {
    let mut jiw = *ji;
    let mut jjw = *jj;
    let mut ew = *e;
    for r in 0..R {
        let s = 1.0 / sigma[r];
        jiw.row_mut(r).scale_mut(s);
        jjw.row_mut(r).scale_mut(s);
        ew[r] *= s;
    }
    (jiw, jjw, ew)
}

fn add_unary<const R: usize>(
    diag: &mut [InfoMatrix],
    rhs: &mut [SVector<f64, NODE_DOF>],
    k: usize,
    jw: &SMatrix<f64, R, NODE_DOF>,
    ew: &SVector<f64, R>,
) {
    diag[k] += jw.transpose() * jw;
    rhs[k] -= jw.transpose() * ew;
}

fn add_binary<const R: usize>(
    diag: &mut [InfoMatrix],
    upper: &mut [InfoMatrix],
    rhs: &mut [SVector<f64, NODE_DOF>],
    k: usize,
    ji: &SMatrix<f64, R, NODE_DOF>,
    jj: &SMatrix<f64, R, NODE_DOF>,
    ew: &SVector<f64, R>,
) {
    diag[k] += ji.transpose() * ji;
    diag[k + 1] += jj.transpose() * jj;
    upper[k] += ji.transpose() * jj;
    rhs[k] -= ji.transpose() * ew;
    rhs[k + 1] -= jj.transpose() * ew;
}
