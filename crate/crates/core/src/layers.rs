//! Differentiable stages of the primal network.
//!
//! Each stage has an exact forward rule and a vector-Jacobian product.
//! Discrete choices made in the forward pass (repair branch, cap flags,
//! converged signal) are recorded and reused by the backward pass; the
//! global signal of the binary search is treated as a constant.

use crate::error::{Error, Result};
use crate::scopf::apr_response;

/// Bisection iterations used by the primal network.
pub const DEFAULT_BS_ITERATIONS: usize = 25;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Saved sigmoid values of [`bound_map`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundMapTape {
    pub sig: Vec<f64>,
}

/// `ǧ = glb + sigmoid(z) ⊙ (gub - glb)`.
pub fn bound_map(z: &[f64], glb: &[f64], gub: &[f64]) -> (Vec<f64>, BoundMapTape) {
    let sig: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
    let out = sig
        .iter()
        .zip(glb.iter().zip(gub))
        .map(|(s, (&lo, &hi))| (lo + s * (hi - lo)).clamp(lo, hi))
        .collect();
    (out, BoundMapTape { sig })
}

pub fn bound_map_backward(tape: &BoundMapTape, glb: &[f64], gub: &[f64], dout: &[f64]) -> Vec<f64> {
    tape.sig
        .iter()
        .zip(glb.iter().zip(gub))
        .zip(dout)
        .map(|((s, (lo, hi)), d)| d * (hi - lo) * s * (1.0 - s))
        .collect()
}

/// Which closed-form rescaling the repair layer applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RepairBranch {
    /// `1ᵀǧ < 1ᵀd`: move toward the upper bounds.
    Deficit,
    /// Otherwise: move toward the lower bounds.
    Surplus,
    /// Deficit with `1ᵀǧ = 1ᵀgub`: output is `gub`.
    Saturated,
    /// Surplus with `1ᵀǧ = 1ᵀglb`: output is `ǧ`.
    Degenerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepairTape {
    pub branch: RepairBranch,
    pub zeta: f64,
    pub input: Vec<f64>,
}

/// Classify the branch the repair layer takes for `gcheck`.
pub fn repair_branch(gcheck: &[f64], d_total: f64, glb: &[f64], gub: &[f64]) -> RepairBranch {
    let s: f64 = gcheck.iter().sum();
    if s < d_total {
        if gub.iter().sum::<f64>() - s > 0.0 {
            RepairBranch::Deficit
        } else {
            RepairBranch::Saturated
        }
    } else if s - glb.iter().sum::<f64>() > 0.0 {
        RepairBranch::Surplus
    } else {
        RepairBranch::Degenerate
    }
}

/// Proportional rescaling that restores `1ᵀg̃ = 1ᵀd` inside the box.
pub fn repair_layer(gcheck: &[f64], d_total: f64, glb: &[f64], gub: &[f64]) -> (Vec<f64>, RepairTape) {
    let branch = repair_branch(gcheck, d_total, glb, gub);
    repair_with_branch(gcheck, d_total, glb, gub, branch)
}

/// Evaluate the repair formula of a given branch, whatever the input totals.
pub fn repair_with_branch(
    gcheck: &[f64],
    d_total: f64,
    glb: &[f64],
    gub: &[f64],
    branch: RepairBranch,
) -> (Vec<f64>, RepairTape) {
    let s: f64 = gcheck.iter().sum();
    let (zeta, target): (f64, &[f64]) = match branch {
        RepairBranch::Deficit => ((d_total - s) / (gub.iter().sum::<f64>() - s), gub),
        RepairBranch::Surplus => ((s - d_total) / (s - glb.iter().sum::<f64>()), glb),
        RepairBranch::Saturated => (1.0, gub),
        RepairBranch::Degenerate => (0.0, glb),
    };
    let out = gcheck
        .iter()
        .zip(target)
        .zip(glb.iter().zip(gub))
        .map(|((&g, &t), (&lo, &hi))| (g + zeta * (t - g)).clamp(lo, hi))
        .collect();
    (
        out,
        RepairTape {
            branch,
            zeta,
            input: gcheck.to_vec(),
        },
    )
}

/// Vector-Jacobian product of the repair layer along the recorded branch.
///
/// For the deficit branch `∂g̃_i/∂ǧ_j = (1-ζ)δ_ij + (gub_i - ǧ_i) ∂ζ/∂ǧ_j`
/// with `∂ζ/∂ǧ_j = (D - U)/(U - S)²`; the surplus branch is symmetric.
pub fn repair_backward(
    tape: &RepairTape,
    d_total: f64,
    glb: &[f64],
    gub: &[f64],
    dout: &[f64],
) -> Vec<f64> {
    let s: f64 = tape.input.iter().sum();
    let (dzeta, target): (f64, &[f64]) = match tape.branch {
        RepairBranch::Deficit => {
            let u: f64 = gub.iter().sum();
            ((d_total - u) / ((u - s) * (u - s)), gub)
        }
        RepairBranch::Surplus => {
            let lo: f64 = glb.iter().sum();
            ((d_total - lo) / ((s - lo) * (s - lo)), glb)
        }
        RepairBranch::Saturated => return vec![0.0; dout.len()],
        RepairBranch::Degenerate => return dout.to_vec(),
    };
    let coupled: f64 = dout
        .iter()
        .zip(target.iter().zip(&tape.input))
        .map(|(v, (t, g))| v * (t - g))
        .sum();
    dout.iter()
        .map(|v| (1.0 - tape.zeta) * v + dzeta * coupled)
        .collect()
}

/// Result of the binary search for one generator contingency.
#[derive(Debug, Clone, PartialEq)]
pub struct ContingencyResponse {
    /// Outaged generator.
    pub k: usize,
    pub gk: Vec<f64>,
    pub n: f64,
    pub rho: Vec<bool>,
    /// `1ᵀg_k - 1ᵀd` at the returned signal.
    pub residual: f64,
}

/// Bisect the global signal `n ∈ [0, 1]` so the APR re-dispatch of the
/// surviving units balances the demand.
///
/// Starts at `n = 0.5` with bracket `[0, 1]` and performs `iterations`
/// trials: a positive imbalance lowers the upper end, otherwise the lower
/// end rises, and `n` moves to the bracket midpoint. The returned dispatch
/// and cap flags are the APR response at the final `n`.
pub fn binary_search_layer(
    g: &[f64],
    d_total: f64,
    k: usize,
    droop: &[f64],
    gub: &[f64],
    iterations: usize,
) -> Result<ContingencyResponse> {
    if iterations < 1 {
        return Err(Error::Parameter(
            "binary search needs at least one iteration".into(),
        ));
    }
    let (mut lo, mut hi, mut n) = (0.0f64, 1.0f64, 0.5f64);
    for _ in 0..iterations {
        let total: f64 = (0..g.len())
            .filter(|&i| i != k)
            .map(|i| (g[i] + n * droop[i]).min(gub[i]))
            .sum();
        if total - d_total > 0.0 {
            hi = n;
        } else {
            lo = n;
        }
        n = 0.5 * (hi + lo);
    }
    let (gk, rho) = apr_response(g, n, k, droop, gub);
    let residual = gk.iter().sum::<f64>() - d_total;
    Ok(ContingencyResponse {
        k,
        gk,
        n,
        rho,
        residual,
    })
}

/// Accumulate `∂L/∂g̃` from `∂L/∂g_k` with `n` held fixed:
/// `∂g_{k,i}/∂g̃_j = δ_ij (1 - ρ_i)` for `i ≠ k`.
pub fn binary_search_backward(resp: &ContingencyResponse, dgk: &[f64], dg: &mut [f64]) {
    for (i, (d, acc)) in dgk.iter().zip(dg.iter_mut()).enumerate() {
        if i != resp.k && !resp.rho[i] {
            *acc += d;
        }
    }
}
