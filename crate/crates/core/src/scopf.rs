//! Evaluators for the extensive SCOPF model: automatic primary response,
//! DC flows, thermal slacks, the objective and the contingency balance
//! residuals.

use nalgebra::DMatrix;

use crate::grid::{GridCase, LinearFactors, Network};
use crate::layers;
use crate::par;
use crate::sampler::Instance;

/// Contingencies are evaluated in parallel only above this count.
const PAR_CONTINGENCY_MIN: usize = 32;

/// Dispatches, response variables and slacks for one instance.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalEstimate {
    /// Base-case dispatch.
    pub g: Vec<f64>,
    /// One row per generator contingency, in `ContingencySet` order.
    pub gk: Vec<Vec<f64>>,
    pub nk: Vec<f64>,
    pub rhok: Vec<Vec<bool>>,
    /// Base-case flows.
    pub flows: Vec<f64>,
    /// Flows under each generator contingency.
    pub flows_g: Vec<Vec<f64>>,
    pub eta0: Vec<f64>,
    pub eta_g: Vec<Vec<f64>>,
    pub eta_e: Vec<Vec<f64>>,
}

/// APR re-dispatch for outaged generator `k` at global signal `n`.
///
/// `droop[i] = γ_i ĝ_i`. Returns the contingency dispatch and the cap
/// indicators (strict `>`; ties are uncapped).
pub fn apr_response(
    g: &[f64],
    n: f64,
    k: usize,
    droop: &[f64],
    gub: &[f64],
) -> (Vec<f64>, Vec<bool>) {
    let mut gk = Vec::with_capacity(g.len());
    let mut rho = Vec::with_capacity(g.len());
    for i in 0..g.len() {
        if i == k {
            gk.push(0.0);
            rho.push(false);
            continue;
        }
        let target = g[i] + n * droop[i];
        gk.push(target.min(gub[i]));
        rho.push(target > gub[i]);
    }
    (gk, rho)
}

/// `f = Φ (d_bus - B g)`.
pub fn base_flows(g: &[f64], d_bus: &[f64], factors: &LinearFactors) -> Vec<f64> {
    let phi = &factors.ptdf;
    let mut w = d_bus.to_vec();
    for (i, gi) in g.iter().enumerate() {
        for (b, wb) in w.iter_mut().enumerate() {
            *wb -= factors.gen_incidence[(b, i)] * gi;
        }
    }
    (0..phi.nrows())
        .map(|l| (0..phi.ncols()).map(|b| phi[(l, b)] * w[b]).sum())
        .collect()
}

/// Flows using the instance's cached load contribution: `Φ d - (Φ B) g`.
pub fn instance_flows(gen_ptdf: &DMatrix<f64>, load_flow: &[f64], g: &[f64]) -> Vec<f64> {
    load_flow
        .iter()
        .enumerate()
        .map(|(l, lf)| lf - (0..g.len()).map(|i| gen_ptdf[(l, i)] * g[i]).sum::<f64>())
        .collect()
}

#[inline]
fn slack(f: f64, lo: f64, hi: f64) -> f64 {
    0.0f64.max(f - hi).max(lo - f)
}

/// Sign of `∂ slack / ∂ flow`.
#[inline]
fn slack_slope(f: f64, lo: f64, hi: f64) -> f64 {
    if f > hi {
        1.0
    } else if f < lo {
        -1.0
    } else {
        0.0
    }
}

/// `max{0, f - fub, flb - f}` per line.
pub fn slack_base(f: &[f64], case: &GridCase) -> Vec<f64> {
    f.iter()
        .zip(case.flb.iter().zip(&case.fub))
        .map(|(&f, (&lo, &hi))| slack(f, lo, hi))
        .collect()
}

/// Thermal slack of a generator-contingency dispatch.
pub fn slack_gen_contingency(gk: &[f64], inst: &Instance, net: &Network) -> Vec<f64> {
    slack_base(
        &instance_flows(&net.factors.gen_ptdf, &inst.load_flow, gk),
        &net.case,
    )
}

/// Post-outage flows `f + f_k LODF_k` for line outage `k` (entry k is 0).
pub fn line_outage_flows(f: &[f64], k: usize, factors: &LinearFactors) -> Vec<f64> {
    (0..f.len())
        .map(|l| {
            if l == k {
                0.0
            } else {
                f[l] + f[k] * factors.lodf[(l, k)]
            }
        })
        .collect()
}

/// Thermal slack after outage of line `k`; the outaged line carries no slack.
pub fn slack_line_contingency(
    f: &[f64],
    k: usize,
    case: &GridCase,
    factors: &LinearFactors,
) -> Vec<f64> {
    let mut eta = slack_base(&line_outage_flows(f, k, factors), case);
    eta[k] = 0.0;
    eta
}

/// `cᵀg + Π (Σ ‖η‖₁)` over base, generator and line contingencies.
pub fn scopf_objective(inst: &Instance, est: &PrimalEstimate, case: &GridCase) -> f64 {
    let cost: f64 = inst.c.iter().zip(&est.g).map(|(c, g)| c * g).sum();
    let l1 = |v: &[f64]| v.iter().map(|x| x.abs()).sum::<f64>();
    let slack_sum = l1(&est.eta0)
        + est.eta_g.iter().map(|r| l1(r)).sum::<f64>()
        + est.eta_e.iter().map(|r| l1(r)).sum::<f64>();
    cost + case.penalty * slack_sum
}

/// `h_k = 1ᵀ g_k - 1ᵀ d` for every generator contingency.
pub fn balance_residuals(est: &PrimalEstimate, inst: &Instance) -> Vec<f64> {
    est.gk
        .iter()
        .map(|row| row.iter().sum::<f64>() - inst.d_total)
        .collect()
}

/// Slack-penalty sensitivity of the line-contingency and base terms w.r.t. base flows.
fn base_flow_slack_gradient(net: &Network, flows: &[f64]) -> Vec<f64> {
    let case = &net.case;
    let mut df: Vec<f64> = flows
        .iter()
        .zip(case.flb.iter().zip(&case.fub))
        .map(|(&f, (&lo, &hi))| slack_slope(f, lo, hi))
        .collect();
    for &k in &net.contingencies.line_contingencies {
        for l in 0..flows.len() {
            if l == k {
                continue;
            }
            let lodf = net.factors.lodf[(l, k)];
            let s = slack_slope(flows[l] + flows[k] * lodf, case.flb[l], case.fub[l]);
            if s != 0.0 {
                df[l] += s;
                df[k] += s * lodf;
            }
        }
    }
    df
}

/// Apply `-(Φ B)ᵀ` to a flow-space vector.
fn flow_to_dispatch(gen_ptdf: &DMatrix<f64>, df: &[f64]) -> Vec<f64> {
    (0..gen_ptdf.ncols())
        .map(|i| -(0..df.len()).map(|l| gen_ptdf[(l, i)] * df[l]).sum::<f64>())
        .collect()
}

/// Gradient of [`scopf_objective`] w.r.t. the base dispatch and every
/// contingency dispatch, with slacks as functions of the flows (subgradient
/// zero at the kinks).
pub fn objective_gradient(
    net: &Network,
    inst: &Instance,
    est: &PrimalEstimate,
) -> (Vec<f64>, Vec<Vec<f64>>) {
    let case = &net.case;
    let pi = case.penalty;
    let df = base_flow_slack_gradient(net, &est.flows);
    let dg: Vec<f64> = flow_to_dispatch(&net.factors.gen_ptdf, &df)
        .iter()
        .zip(&inst.c)
        .map(|(s, c)| c + pi * s)
        .collect();
    let dgk = est
        .flows_g
        .iter()
        .map(|fk| {
            let dfk: Vec<f64> = fk
                .iter()
                .zip(case.flb.iter().zip(&case.fub))
                .map(|(&f, (&lo, &hi))| slack_slope(f, lo, hi))
                .collect();
            flow_to_dispatch(&net.factors.gen_ptdf, &dfk)
                .into_iter()
                .map(|s| pi * s)
                .collect()
        })
        .collect();
    (dg, dgk)
}

/// Complete the estimate from a base dispatch, resolving every generator
/// contingency with the binary-search layer using `iterations` bisections.
pub fn evaluate_dispatch(
    net: &Network,
    inst: &Instance,
    g: &[f64],
    iterations: usize,
) -> PrimalEstimate {
    let kg = &net.contingencies.gen_contingencies;
    let responses = par::map_range(kg.len(), PAR_CONTINGENCY_MIN, |j| {
        layers::binary_search_layer(g, inst.d_total, kg[j], &inst.droop, &inst.gub, iterations)
            .expect("iterations validated by caller")
    });
    estimate_from_responses(net, inst, g, responses)
}

/// Assemble a [`PrimalEstimate`] from already-computed contingency responses.
pub fn estimate_from_responses(
    net: &Network,
    inst: &Instance,
    g: &[f64],
    responses: Vec<layers::ContingencyResponse>,
) -> PrimalEstimate {
    let case = &net.case;
    let flows = instance_flows(&net.factors.gen_ptdf, &inst.load_flow, g);
    let eta0 = slack_base(&flows, case);
    let mut gk = Vec::with_capacity(responses.len());
    let mut nk = Vec::with_capacity(responses.len());
    let mut rhok = Vec::with_capacity(responses.len());
    let mut flows_g = Vec::with_capacity(responses.len());
    let mut eta_g = Vec::with_capacity(responses.len());
    for r in responses {
        let fk = instance_flows(&net.factors.gen_ptdf, &inst.load_flow, &r.gk);
        eta_g.push(slack_base(&fk, case));
        flows_g.push(fk);
        gk.push(r.gk);
        nk.push(r.n);
        rhok.push(r.rho);
    }
    let eta_e = net
        .contingencies
        .line_contingencies
        .iter()
        .map(|&k| slack_line_contingency(&flows, k, case, &net.factors))
        .collect();
    PrimalEstimate {
        g: g.to_vec(),
        gk,
        nk,
        rhok,
        flows,
        flows_g,
        eta0,
        eta_g,
        eta_e,
    }
}
