//! Elimination of the window's oldest node into the marginalization prior.
//!
//! All factors touching the first node (adjacency means they involve at
//! most the first two nodes) are linearized once at the current estimates,
//! stacked into a 30x30 information form over the pair, and the first
//! node's block is removed by Schur complement:
//!
//! ```text
//! H' = H_bb - H_ba H_aa^-1 H_ab        g' = g_b - H_ba H_aa^-1 g_a
//! ```
//!
//! The result becomes the prior on the surviving node, anchored at that
//! node's current estimate. The act of marginalizing leaves every retained
//! estimate untouched; only future linearizations feel the folded-in
//! information. Huber weights of radar factors are frozen at their values
//! at elimination time.

use nalgebra::{Cholesky, SMatrix, SVector, Vector3};

use crate::error::{Error, Result};
use crate::lie::{log_rot, so3_right_jacobian_inv};
use crate::radar::robust_weight;
use crate::types::{ATT, BA, BG, NODE_DOF, POS, VEL};

use super::window::{
    whiten_binary, whiten_unary, Factor, FactorGraphWindow, InfoMatrix, MarginalPrior, Node,
};

type PairInfo = SMatrix<f64, 30, 30>;
type PairGrad = SVector<f64, 30>;

/// Inverse of a symmetric PSD block: Cholesky when positive definite, a
/// clamped eigendecomposition (Moore-Penrose) otherwise.
fn invert_psd(m: &InfoMatrix) -> InfoMatrix {
    if let Some(chol) = Cholesky::new(*m) {
        return chol.inverse();
    }
    let eig = m.symmetric_eigen();
    let max = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let cutoff = max * 1e-12;
    let mut inv = InfoMatrix::zeros();
    for i in 0..NODE_DOF {
        if eig.eigenvalues[i] > cutoff {
            let v = eig.eigenvectors.column(i);
            inv += v * v.transpose() / eig.eigenvalues[i];
        }
    }
    inv
}

fn add_unary_info<const R: usize>(
    h: &mut PairInfo,
    g: &mut PairGrad,
    offset: usize,
    jw: &SMatrix<f64, R, NODE_DOF>,
    ew: &SVector<f64, R>,
) {
    let mut hb = h.fixed_view_mut::<NODE_DOF, NODE_DOF>(offset, offset);
    hb += jw.transpose() * jw;
    let mut gb = g.fixed_view_mut::<NODE_DOF, 1>(offset, 0);
    gb += jw.transpose() * ew;
}

fn add_binary_info<const R: usize>(
    h: &mut PairInfo,
    g: &mut PairGrad,
    ji: &SMatrix<f64, R, NODE_DOF>,
    jj: &SMatrix<f64, R, NODE_DOF>,
    ew: &SVector<f64, R>,
) {
    let cross = ji.transpose() * jj;
    let mut haa = h.fixed_view_mut::<NODE_DOF, NODE_DOF>(0, 0);
    haa += ji.transpose() * ji;
    let mut hbb = h.fixed_view_mut::<NODE_DOF, NODE_DOF>(NODE_DOF, NODE_DOF);
    hbb += jj.transpose() * jj;
    let mut hab = h.fixed_view_mut::<NODE_DOF, NODE_DOF>(0, NODE_DOF);
    hab += cross;
    let mut hba = h.fixed_view_mut::<NODE_DOF, NODE_DOF>(NODE_DOF, 0);
    hba += cross.transpose();
    let mut ga = g.fixed_view_mut::<NODE_DOF, 1>(0, 0);
    ga += ji.transpose() * ew;
    let mut gb = g.fixed_view_mut::<NODE_DOF, 1>(NODE_DOF, 0);
    gb += jj.transpose() * ew;
}

/// Folds the oldest node into the marginal prior and removes it. Requires
/// at least two nodes. Returns the removed node (its state is final).
pub fn marginalize_one(window: &mut FactorGraphWindow) -> Result<Node> {
    if window.len() < 2 {
        return Err(Error::Invalid(
            "marginalization needs at least two nodes".to_string(),
        ));
    }
    let first = window.first_id();
    let state_a = window.nodes[0].state;
    let state_b = window.nodes[1].state;

    let mut h = PairInfo::zeros();
    let mut g = PairGrad::zeros();

    // Extract the handful of factors touching the eliminated node without
    // rebuilding the whole factor vector; sliding runs once per node, so a
    // drain-and-reallocate here dominates the optimization wall time on
    // full windows. Factor order in the vector carries no meaning.
    let mut i = 0;
    while i < window.factors.len() {
        if window.factors[i].first_node() != first {
            i += 1;
            continue;
        }
        let f = window.factors.swap_remove(i);
        match &f {
            Factor::Imu { f, .. } => {
                let e = f.residual(&state_a, &state_b);
                let (ji, jj) = f.jacobians(&state_a, &state_b);
                let (ji, jj, ew) = whiten_binary(&ji, &jj, &e, &f.whitening_sigmas());
                add_binary_info(&mut h, &mut g, &ji, &jj, &ew);
            }
            Factor::BiasWalk { f, .. } => {
                let e = f.residual(&state_a, &state_b);
                let (ji, jj) = f.jacobians();
                let (ji, jj, ew) = whiten_binary(&ji, &jj, &e, &f.whitening_sigmas());
                add_binary_info(&mut h, &mut g, &ji, &jj, &ew);
            }
            Factor::Radar { f, .. } => {
                let e = SVector::<f64, 1>::new(f.residual(&state_a));
                let w = robust_weight(e[0], f.huber_delta);
                let (jw, ew) =
                    whiten_unary(&f.jacobian(&state_a), &e, &SVector::<f64, 1>::new(f.sigma), w);
                add_unary_info(&mut h, &mut g, 0, &jw, &ew);
            }
            Factor::Lo { f, .. } => {
                let (jw, ew) =
                    whiten_unary(&f.jacobian(&state_a), &f.residual(&state_a), &f.sigma, 1.0);
                add_unary_info(&mut h, &mut g, 0, &jw, &ew);
            }
            Factor::PriorRot { mean, sigma, .. } => {
                let e = log_rot(&mean.inverse().compose(state_a.rotation()));
                let mut j = SMatrix::<f64, 3, NODE_DOF>::zeros();
                j.fixed_view_mut::<3, 3>(0, ATT)
                    .copy_from(&so3_right_jacobian_inv(&e));
                let (jw, ew) = whiten_unary(&j, &e, &Vector3::repeat(*sigma), 1.0);
                add_unary_info(&mut h, &mut g, 0, &jw, &ew);
            }
            Factor::PriorPos { mean, sigma, .. } => {
                let e = state_a.position() - mean;
                let mut j = SMatrix::<f64, 3, NODE_DOF>::zeros();
                j.fixed_view_mut::<3, 3>(0, POS)
                    .copy_from(&state_a.rotation().matrix());
                let (jw, ew) = whiten_unary(&j, &e, &Vector3::repeat(*sigma), 1.0);
                add_unary_info(&mut h, &mut g, 0, &jw, &ew);
            }
            Factor::PriorVel { mean, sigma, .. } => {
                let e = state_a.velocity - mean;
                let mut j = SMatrix::<f64, 3, NODE_DOF>::zeros();
                j.fixed_view_mut::<3, 3>(0, VEL)
                    .copy_from(&SMatrix::<f64, 3, 3>::identity());
                let (jw, ew) = whiten_unary(&j, &e, &Vector3::repeat(*sigma), 1.0);
                add_unary_info(&mut h, &mut g, 0, &jw, &ew);
            }
            Factor::PriorBias {
                mean_bg,
                mean_ba,
                sigma_bg,
                sigma_ba,
                ..
            } => {
                let mut e = SVector::<f64, 6>::zeros();
                e.fixed_rows_mut::<3>(0)
                    .copy_from(&(state_a.bias_gyro - mean_bg));
                e.fixed_rows_mut::<3>(3)
                    .copy_from(&(state_a.bias_accel - mean_ba));
                let mut j = SMatrix::<f64, 6, NODE_DOF>::zeros();
                j.fixed_view_mut::<3, 3>(0, BG)
                    .copy_from(&SMatrix::<f64, 3, 3>::identity());
                j.fixed_view_mut::<3, 3>(3, BA)
                    .copy_from(&SMatrix::<f64, 3, 3>::identity());
                let mut sig = SVector::<f64, 6>::zeros();
                sig.fixed_rows_mut::<3>(0).fill(*sigma_bg);
                sig.fixed_rows_mut::<3>(3).fill(*sigma_ba);
                let (jw, ew) = whiten_unary(&j, &e, &sig, 1.0);
                add_unary_info(&mut h, &mut g, 0, &jw, &ew);
            }
        }
    }

    if let Some(prior) = window.marginal_prior.take() {
        debug_assert_eq!(prior.node, first);
        let (delta, a) = prior.delta_and_jacobian(&state_a);
        let mut haa = h.fixed_view_mut::<NODE_DOF, NODE_DOF>(0, 0);
        haa += a.transpose() * prior.info * a;
        let mut ga = g.fixed_view_mut::<NODE_DOF, 1>(0, 0);
        ga += a.transpose() * (prior.info * delta + prior.grad);
    }

    let haa = h.fixed_view::<NODE_DOF, NODE_DOF>(0, 0).into_owned();
    let hab = h.fixed_view::<NODE_DOF, NODE_DOF>(0, NODE_DOF).into_owned();
    let hbb = h
        .fixed_view::<NODE_DOF, NODE_DOF>(NODE_DOF, NODE_DOF)
        .into_owned();
    let ga = g.fixed_view::<NODE_DOF, 1>(0, 0).into_owned();
    let gb = g.fixed_view::<NODE_DOF, 1>(NODE_DOF, 0).into_owned();

    let haa_inv = invert_psd(&haa);
    let mut info = hbb - hab.transpose() * haa_inv * hab;
    info = (info + info.transpose()) * 0.5;
    let grad = gb - hab.transpose() * haa_inv * ga;

    window.marginal_prior = Some(MarginalPrior {
        node: window.nodes[1].id,
        x0: state_b,
        info,
        grad,
    });
    Ok(window.pop_front_node().expect("window checked non-empty"))
}
