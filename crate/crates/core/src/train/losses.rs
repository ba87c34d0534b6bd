//! Loss functions with their gradients w.r.t. the primal estimate.

use crate::grid::Network;
use crate::sampler::Instance;
use crate::scopf::{self, PrimalEstimate};

/// Loss value with `∂L/∂g̃` and `∂L/∂g_k` per generator contingency.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub dg: Vec<f64>,
    pub dgk: Vec<Vec<f64>>,
}

impl LossGrad {
    fn zero(est: &PrimalEstimate) -> Self {
        Self {
            value: 0.0,
            dg: vec![0.0; est.g.len()],
            dgk: est.gk.iter().map(|r| vec![0.0; r.len()]).collect(),
        }
    }

    /// Add `Σ_k w_k h_k` where `w_k` is the given weight on residual `k`.
    fn add_residual_weights(&mut self, weights: &[f64]) {
        for (row, &w) in self.dgk.iter_mut().zip(weights) {
            for v in row.iter_mut() {
                *v += w;
            }
        }
    }

    fn add_objective(&mut self, net: &Network, inst: &Instance, est: &PrimalEstimate, scale: f64) {
        let f = scopf::scopf_objective(inst, est, &net.case);
        let (dg, dgk) = scopf::objective_gradient(net, inst, est);
        self.value += f / scale;
        for (a, b) in self.dg.iter_mut().zip(dg) {
            *a += b / scale;
        }
        for (ra, rb) in self.dgk.iter_mut().zip(dgk) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b / scale;
            }
        }
    }
}

/// `f/s + λᵀh + (ρ/2) 1ᵀh²`.
pub fn primal_loss(
    net: &Network,
    inst: &Instance,
    est: &PrimalEstimate,
    lambda: &[f64],
    rho: f64,
    obj_scale: f64,
) -> LossGrad {
    let h = scopf::balance_residuals(est, inst);
    let mut out = LossGrad::zero(est);
    out.add_objective(net, inst, est, obj_scale);
    out.value += h
        .iter()
        .zip(lambda)
        .map(|(h, l)| l * h + 0.5 * rho * h * h)
        .sum::<f64>();
    let w: Vec<f64> = h.iter().zip(lambda).map(|(h, l)| l + rho * h).collect();
    out.add_residual_weights(&w);
    out
}

/// `f/s + ρ 1ᵀh²`.
pub fn penalty_loss(net: &Network, inst: &Instance, est: &PrimalEstimate, rho: f64, obj_scale: f64) -> LossGrad {
    let h = scopf::balance_residuals(est, inst);
    let mut out = LossGrad::zero(est);
    out.add_objective(net, inst, est, obj_scale);
    out.value += rho * h.iter().map(|h| h * h).sum::<f64>();
    let w: Vec<f64> = h.iter().map(|h| 2.0 * rho * h).collect();
    out.add_residual_weights(&w);
    out
}

/// `‖g̃ - g*‖₂` (subgradient zero at the target).
pub fn naive_loss(est: &PrimalEstimate, target: &[f64]) -> LossGrad {
    let mut out = LossGrad::zero(est);
    let diff: Vec<f64> = est.g.iter().zip(target).map(|(a, b)| a - b).collect();
    let norm = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
    out.value = norm;
    if norm > 0.0 {
        for (g, d) in out.dg.iter_mut().zip(&diff) {
            *g = d / norm;
        }
    }
    out
}

/// `‖g̃ - g*‖₂ + ρ 1ᵀh²` with a fixed `ρ`.
pub fn ld_loss(est: &PrimalEstimate, inst: &Instance, target: &[f64], rho: f64) -> LossGrad {
    let h = scopf::balance_residuals(est, inst);
    let mut out = naive_loss(est, target);
    out.value += rho * h.iter().map(|h| h * h).sum::<f64>();
    let w: Vec<f64> = h.iter().map(|h| 2.0 * rho * h).collect();
    out.add_residual_weights(&w);
    out
}

/// `‖λ - (λ_k + ρ_d h)‖₂` for one instance.
pub fn dual_loss(lambda_new: &[f64], lambda_frozen: &[f64], h: &[f64], dual_rho: f64) -> f64 {
    dual_targets(lambda_frozen, h, dual_rho)
        .iter()
        .zip(lambda_new)
        .map(|(t, l)| (l - t) * (l - t))
        .sum::<f64>()
        .sqrt()
}

/// `λ_k + ρ_d h`.
pub fn dual_targets(lambda_frozen: &[f64], h: &[f64], dual_rho: f64) -> Vec<f64> {
    lambda_frozen
        .iter()
        .zip(h)
        .map(|(l, h)| l + dual_rho * h)
        .collect()
}

/// Squared error `Σ (λ - t)²` and its gradient; the trainer averages it
/// over batch and components.
pub fn dual_squared_error(lambda_new: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    let diff: Vec<f64> = lambda_new.iter().zip(target).map(|(l, t)| l - t).collect();
    let value = diff.iter().map(|d| d * d).sum();
    (value, diff.into_iter().map(|d| 2.0 * d).collect())
}
