//! Levenberg-Marquardt on the window's block-tridiagonal normal equations.
//!
//! Damping is additive (`H + lambda I`); Gauss-Newton is the small-lambda
//! limit. The damped system is solved by block Thomas elimination with a
//! Cholesky factorization per diagonal block, so one iteration is linear in
//! the node count.
//!
//! Step rejection is handled in two tiers. A full step that raises the cost
//! is first backtracked (half, quarter, eighth), which costs one residual
//! pass per attempt and usually absorbs the mild overshoot that Huber
//! reweighting induces between linearizations. Only if backtracking fails
//! does lambda grow and the system get re-solved; since the whitened normal
//! equations put diagonal entries many orders of magnitude above any useful
//! floor, the climb is aggressive (100x per rejection) to cross the inert
//! decades quickly. A failed Cholesky or a non-finite candidate cost is
//! treated the same way; the last accepted estimates stay in place
//! throughout.

use nalgebra::{Cholesky, SVector};

use crate::error::Result;
use crate::types::{NavState, NODE_DOF};

use super::window::{FactorGraphWindow, InfoMatrix};

/// Accepted steps shrink lambda toward this floor.
const LAMBDA_MIN: f64 = 1e-12;
/// Rejections beyond this give up on the current optimization.
const LAMBDA_MAX: f64 = 1e32;
/// Costs below this count as already converged.
const COST_FLOOR: f64 = 1e-15;
/// Fractions of a rejected step tried before re-solving with more damping.
const BACKTRACK: [f64; 3] = [0.5, 0.25, 0.125];

#[derive(Clone, Copy, Debug)]
pub struct SolverSettings {
    pub max_iterations: usize,
    /// Relative cost-decrease threshold for convergence.
    pub convergence_tol: f64,
    pub initial_lambda: f64,
}

#[derive(Clone, Debug)]
pub struct SolveOutcome {
    /// Number of accepted steps.
    pub iterations: usize,
    pub converged: bool,
    pub cost_trace: Vec<f64>,
}

impl SolveOutcome {
    pub fn initial_cost(&self) -> f64 {
        *self.cost_trace.first().unwrap_or(&0.0)
    }

    pub fn final_cost(&self) -> f64 {
        *self.cost_trace.last().unwrap_or(&0.0)
    }
}

/// Solves `(H + lambda I) delta = rhs` for the block-tridiagonal `H` given
/// by diagonal and upper blocks. Returns `None` when a diagonal pivot block
/// is not positive definite.
pub fn solve_damped(
    diag: &[InfoMatrix],
    upper: &[InfoMatrix],
    rhs: &[SVector<f64, NODE_DOF>],
    lambda: f64,
) -> Option<Vec<SVector<f64, NODE_DOF>>> {
    let n = diag.len();
    let damping = InfoMatrix::identity() * lambda;
    let mut chol: Vec<Cholesky<f64, nalgebra::Const<NODE_DOF>>> = Vec::with_capacity(n);
    let mut b = rhs.to_vec();
    chol.push(Cholesky::new(diag[0] + damping)?);
    for k in 1..n {
        // Eliminate block k-1: M = U^T D'^-1, folded into row k.
        let dinv_u = chol[k - 1].solve(&upper[k - 1]);
        let m = dinv_u.transpose();
        let d = diag[k] + damping - m * upper[k - 1];
        let mb = m * b[k - 1];
        b[k] -= mb;
        chol.push(Cholesky::new(d)?);
    }
    let mut delta = vec![SVector::<f64, NODE_DOF>::zeros(); n];
    delta[n - 1] = chol[n - 1].solve(&b[n - 1]);
    for k in (0..n - 1).rev() {
        let reduced = b[k] - upper[k] * delta[k + 1];
        delta[k] = chol[k].solve(&reduced);
    }
    Some(delta)
}

/// Robust LM over the window. Node states are updated in place on accepted
/// steps only; a divergent initial cost aborts with the offending factor.
pub fn optimize(window: &mut FactorGraphWindow, settings: &SolverSettings) -> Result<SolveOutcome> {
    let mut cost = window.total_cost(&window.current_states())?;
    let mut trace = vec![cost];
    if cost < COST_FLOOR {
        return Ok(SolveOutcome {
            iterations: 0,
            converged: true,
            cost_trace: trace,
        });
    }
    let mut lambda = settings.initial_lambda;
    let mut iterations = 0;
    let mut converged = false;
    'outer: for _ in 0..settings.max_iterations {
        let (diag, upper, rhs) = window.assemble();
        let mut fresh_linearization = true;
        loop {
            if lambda > LAMBDA_MAX {
                break 'outer;
            }
            let Some(delta) = solve_damped(&diag, &upper, &rhs, lambda) else {
                fresh_linearization = false;
                lambda *= 100.0;
                continue;
            };
            let try_step = |scale: f64| -> (Vec<NavState>, Option<f64>) {
                let candidate: Vec<NavState> = window
                    .nodes
                    .iter()
                    .zip(&delta)
                    .map(|(node, d)| node.state.retract(&(d * scale)))
                    .collect();
                let c = window.total_cost(&candidate).ok();
                (candidate, c)
            };
            let mut accepted = None;
            let (candidate, full_cost) = try_step(1.0);
            if let Some(c) = full_cost {
                if c <= cost {
                    accepted = Some((candidate, c, true));
                } else if fresh_linearization
                    && c - cost <= settings.convergence_tol * cost.max(COST_FLOOR)
                {
                    // The undamped step out of a fresh linearization moving
                    // the cost by less than the tolerance in the wrong
                    // direction is convergence jitter, not divergence;
                    // growing lambda from its floor would burn a solve per
                    // decade to learn nothing.
                    converged = true;
                    break 'outer;
                }
            }
            if accepted.is_none() {
                for scale in BACKTRACK {
                    let (candidate, c) = try_step(scale);
                    if let Some(c) = c.filter(|&c| c <= cost) {
                        accepted = Some((candidate, c, false));
                        break;
                    }
                }
            }
            let Some((candidate, c, full_step)) = accepted else {
                // Even shortened steps fail: the linearization is locally
                // untrustworthy, so damp harder and re-solve.
                fresh_linearization = false;
                lambda *= 100.0;
                continue;
            };
            window.write_states(&candidate);
            iterations += 1;
            trace.push(c);
            // A backtracked acceptance means the full step overshot; keep
            // the current damping rather than rewarding it.
            if full_step {
                lambda = (lambda / 10.0).max(LAMBDA_MIN);
            }
            let drop = cost - c;
            cost = c;
            if drop <= settings.convergence_tol * cost.max(COST_FLOOR) || cost < COST_FLOOR {
                converged = true;
                break 'outer;
            }
            break;
        }
    }
    Ok(SolveOutcome {
        iterations,
        converged,
        cost_trace: trace,
    })
}
