//! Brute-force reference solver for micro instances.
//!
//! With the base dispatch `g` fixed, every contingency dispatch is the APR
//! balance root, so the extensive model collapses to a function `F(g)` on
//! the slice `{1ᵀg = 1ᵀd, glb ≤ g ≤ gub}`. The solver enumerates a lattice
//! on that slice, then polishes the best point with pairwise transfers.
//!
//! Lattice points are visited in increasing order of `cᵀg`, and `F` is only
//! evaluated where a cheap lower bound (cost plus base and line-outage slack
//! penalties) beats the incumbent. Both bounds hold because slacks are
//! nonnegative, so the result equals a full enumeration.

use crate::dataset::{Dataset, Label};
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::par;
use crate::sampler::Instance;
use crate::scopf;

/// Bisection iterations used by the oracle.
pub const ORACLE_BS_ITERATIONS: usize = 40;
/// Largest contingency imbalance accepted as feasible.
pub const CONTINGENCY_TOL: f64 = 1e-6;
pub const MAX_GENERATORS: usize = 5;
/// Refuse lattices larger than this.
pub const MAX_LATTICE_POINTS: u64 = 50_000_000;
/// Smallest pairwise-transfer step of the polish.
pub const POLISH_MIN_STEP: f64 = 1e-7;

const BALANCE_TOL: f64 = 1e-8;
const BOX_TOL: f64 = 1e-12;
const SCAN_CHUNK: usize = 2048;
/// Axis stride of the incumbent pass.
const COARSE_STRIDE: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub g_star: Vec<f64>,
    pub obj_star: f64,
    /// Upper bound on `obj_star - F(g_opt)`.
    pub tol_certificate: f64,
    /// Objective evaluations (lattice and polish).
    pub evals: u64,
    /// Best lattice point before polishing.
    pub g_lattice: Vec<f64>,
    pub obj_lattice: f64,
    /// Fine-lattice points that survived the cost cap.
    pub lattice_points: u64,
}

impl OracleResult {
    pub fn label(&self) -> Label {
        Label::Solved {
            g_star: self.g_star.clone(),
            obj_star: self.obj_star,
            tol_certificate: self.tol_certificate,
            evals: self.evals,
        }
    }
}

/// `F(g)`: the SCOPF objective with every generator contingency resolved by
/// bisection, or `+∞` if some contingency cannot be balanced.
pub fn oracle_objective(g: &[f64], inst: &Instance, net: &Network) -> Result<f64> {
    let case = &net.case;
    crate::error::check_len("dispatch", case.n_gen(), g.len())?;
    let total: f64 = g.iter().sum();
    if (total - inst.d_total).abs() > BALANCE_TOL * inst.d_total.abs().max(1.0) {
        return Err(Error::Parameter(format!(
            "dispatch total {total} does not match demand {}",
            inst.d_total
        )));
    }
    let in_box = g
        .iter()
        .zip(case.glb.iter().zip(&inst.gub))
        .all(|(&v, (&lo, &hi))| v >= lo - BOX_TOL && v <= hi + BOX_TOL);
    if !in_box {
        return Err(Error::Parameter("dispatch outside its bounds".into()));
    }
    Ok(objective_unchecked(g, inst, net))
}

fn objective_unchecked(g: &[f64], inst: &Instance, net: &Network) -> f64 {
    let est = scopf::evaluate_dispatch(net, inst, g, ORACLE_BS_ITERATIONS);
    let infeasible = scopf::balance_residuals(&est, inst)
        .iter()
        .any(|h| h.abs() > CONTINGENCY_TOL);
    if infeasible {
        f64::INFINITY
    } else {
        scopf::scopf_objective(inst, &est, &net.case)
    }
}

/// Lipschitz constant of `F` w.r.t. `‖·‖₁` on the contingency-feasible slice.
///
/// With `C` the largest column 1-norm and `M` the largest entry of `ΦB`:
/// the base slack contributes `C`, each line outage `C + M‖LODF_k‖₁`, and
/// each generator outage `2C` because `‖Δg_k‖₁ ≤ 2‖Δg‖₁` for APR roots.
pub fn lipschitz_bound(inst: &Instance, net: &Network) -> f64 {
    let gp = &net.factors.gen_ptdf;
    let c_norm = (0..gp.ncols())
        .map(|i| (0..gp.nrows()).map(|l| gp[(l, i)].abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    let m = gp.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let lodf = &net.factors.lodf;
    let line_terms: f64 = net
        .contingencies
        .line_contingencies
        .iter()
        .map(|&k| c_norm + m * (0..lodf.nrows()).map(|l| lodf[(l, k)].abs()).sum::<f64>())
        .sum();
    let gen_terms = net.contingencies.gen_contingencies.len() as f64 * 2.0 * c_norm;
    let cmax = inst.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    cmax + net.case.penalty * (c_norm + line_terms + gen_terms)
}

/// `1ᵀd - Σ_{i≠k} min(g_i + droop_i, gub_i)`: the imbalance left when the
/// survivors of outage `k` reach full response.
pub fn apr_shortfall(g: &[f64], k: usize, inst: &Instance) -> f64 {
    let reach: f64 = (0..g.len())
        .filter(|&i| i != k)
        .map(|i| (g[i] + inst.droop[i]).min(inst.gub[i]))
        .sum();
    inst.d_total - reach
}

/// `F` without the generator-contingency slacks; needs no bisection.
fn lower_bound(g: &[f64], inst: &Instance, net: &Network) -> f64 {
    let case = &net.case;
    let flows = scopf::instance_flows(&net.factors.gen_ptdf, &inst.load_flow, g);
    let slack = |f: f64, l: usize| 0.0f64.max(f - case.fub[l]).max(case.flb[l] - f);
    let mut total: f64 = flows.iter().enumerate().map(|(l, &f)| slack(f, l)).sum();
    for &k in &net.contingencies.line_contingencies {
        for (l, &f) in flows.iter().enumerate() {
            if l != k {
                total += slack(f + flows[k] * net.factors.lodf[(l, k)], l);
            }
        }
    }
    inst.c.iter().zip(g).map(|(c, g)| c * g).sum::<f64>() + case.penalty * total
}

/// Grid along each of the first `G - 1` generators.
fn axes(glb: &[f64], gub: &[f64], resolution: f64) -> Vec<Vec<f64>> {
    glb.iter()
        .zip(gub)
        .map(|(&lo, &hi)| {
            let steps = ((hi - lo) / resolution).floor() as u64;
            let mut axis: Vec<f64> = (0..=steps).map(|j| lo + j as f64 * resolution).collect();
            if hi - axis.last().copied().unwrap_or(lo) > BOX_TOL {
                axis.push(hi);
            }
            axis
        })
        .collect()
}

/// Minimize `F` over the balance slice by lattice search at spacing
/// `resolution` followed by a pairwise-transfer polish.
///
/// `tol_certificate = Lip · 2(G-1) · resolution`: every slice point has a
/// lattice neighbour within that `‖·‖₁` distance. The bound assumes the
/// neighbour of the optimum is contingency-feasible.
pub fn oracle_solve(inst: &Instance, net: &Network, resolution: f64) -> Result<OracleResult> {
    let case = &net.case;
    let ng = case.n_gen();
    if ng > MAX_GENERATORS {
        return Err(Error::Parameter(format!(
            "the oracle enumerates at most {MAX_GENERATORS} generators, case has {ng}"
        )));
    }
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::Parameter("resolution must be positive".into()));
    }
    let glb = &case.glb;
    let gub = &inst.gub;
    if glb.iter().zip(gub).any(|(l, u)| l > u) || !inst.has_capacity_headroom(glb) {
        return Err(Error::Infeasible("empty dispatch slice".into()));
    }
    let free = ng - 1;
    let axes = axes(&glb[..free], &gub[..free], resolution);
    let total_points = axes
        .iter()
        .try_fold(1u64, |acc, a| acc.checked_mul(a.len() as u64))
        .filter(|&n| n <= MAX_LATTICE_POINTS)
        .ok_or_else(|| {
            Error::Parameter(format!(
                "lattice exceeds {MAX_LATTICE_POINTS} points; use a coarser resolution"
            ))
        })?;

    let lattice = Lattice {
        axes,
        glb,
        gub,
        d: inst.d_total,
        free,
        total: total_points,
    };
    // Points whose outage shortfall exceeds twice the tolerance evaluate to
    // +∞ anyway; dropping them up front leaves the result unchanged.
    let kg = &net.contingencies.gen_contingencies;
    let keep = |g: &[f64]| kg.iter().all(|&k| apr_shortfall(g, k, inst) <= 2.0 * CONTINGENCY_TOL);

    // A sub-lattice pass gives an incumbent; fine points costing more than
    // it are never evaluated.
    let coarse = lattice.candidates(COARSE_STRIDE, f64::INFINITY, &inst.c, &keep);
    let (incumbent, coarse_evals) = lattice.scan(&coarse, None, inst, net);
    let cap = incumbent.map_or(f64::INFINITY, |(f, _)| f);
    let fine = lattice.candidates(1, cap, &inst.c, &keep);
    let (best, fine_evals) = lattice.scan(&fine, incumbent, inst, net);

    let (obj_lattice, idx) = best
        .filter(|(f, _)| f.is_finite())
        .ok_or_else(|| Error::Infeasible("no lattice point balances every generator contingency".into()))?;
    let g_lattice = lattice.point(idx).expect("scanned")[..ng].to_vec();

    let (g_star, obj_star, polish_evals) = polish(&g_lattice, obj_lattice, inst, net, resolution);
    Ok(OracleResult {
        g_star,
        obj_star,
        tol_certificate: lipschitz_bound(inst, net) * 2.0 * free as f64 * resolution,
        evals: coarse_evals + fine_evals + polish_evals,
        g_lattice,
        obj_lattice,
        lattice_points: fine.len() as u64,
    })
}

/// Lattice on the first `G - 1` generators; the last one absorbs the balance.
struct Lattice<'a> {
    axes: Vec<Vec<f64>>,
    glb: &'a [f64],
    gub: &'a [f64],
    d: f64,
    free: usize,
    total: u64,
}

impl Lattice<'_> {
    /// Mixed-radix decoding, first axis least significant.
    fn point(&self, idx: u64) -> Option<[f64; MAX_GENERATORS]> {
        let mut g = [0.0; MAX_GENERATORS];
        let mut rem = idx;
        let mut sum = 0.0;
        for (gi, axis) in g.iter_mut().zip(&self.axes) {
            let n = axis.len() as u64;
            *gi = axis[(rem % n) as usize];
            sum += *gi;
            rem /= n;
        }
        let (lo, hi) = (self.glb[self.free], self.gub[self.free]);
        let last = self.d - sum;
        if last < lo - BOX_TOL || last > hi + BOX_TOL {
            return None;
        }
        g[self.free] = last.clamp(lo, hi);
        Some(g)
    }

    /// Slice points whose axis indices are multiples of `stride` (or the
    /// last index) with `cᵀg ≤ max_cost`, sorted by cost then index.
    fn candidates(
        &self,
        stride: usize,
        max_cost: f64,
        cost: &[f64],
        keep: &dyn Fn(&[f64]) -> bool,
    ) -> Vec<(f64, u64)> {
        let ng = self.free + 1;
        let on_grid = |j: usize, n: usize| j.is_multiple_of(stride) || j + 1 == n;
        let mut out = Vec::new();
        let mut push = |idx: u64| {
            if let Some(g) = self.point(idx) {
                let g = &g[..ng];
                let c: f64 = g.iter().zip(cost).map(|(g, c)| g * c).sum();
                if c <= max_cost && keep(g) {
                    out.push((c, idx));
                }
            }
        };
        if self.free == 0 {
            push(0);
        } else {
            // The last free axis only needs the range that keeps the
            // dependent generator inside its box.
            let inner = &self.axes[self.free - 1];
            let outer = self.total / inner.len() as u64;
            'outer: for o in 0..outer {
                let mut rem = o;
                let mut sum = 0.0;
                for axis in &self.axes[..self.free - 1] {
                    let n = axis.len() as u64;
                    let j = (rem % n) as usize;
                    if !on_grid(j, axis.len()) {
                        continue 'outer;
                    }
                    sum += axis[j];
                    rem /= n;
                }
                let lo = self.d - sum - self.gub[self.free] - BOX_TOL;
                let hi = self.d - sum - self.glb[self.free] + BOX_TOL;
                let start = inner.partition_point(|&v| v < lo);
                let end = inner.partition_point(|&v| v <= hi);
                for j in (start..end).filter(|&j| on_grid(j, inner.len())) {
                    push(o + j as u64 * outer);
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out
    }

    /// Evaluate `F` in cost order where the lower bound beats the incumbent.
    /// Returns the best `(F, index)` and the number of evaluations.
    fn scan(
        &self,
        sorted: &[(f64, u64)],
        mut best: Option<(f64, u64)>,
        inst: &Instance,
        net: &Network,
    ) -> (Option<(f64, u64)>, u64) {
        let ng = self.free + 1;
        let mut evals = 0u64;
        for chunk in sorted.chunks(SCAN_CHUNK) {
            let bound = best.map_or(f64::INFINITY, |(f, _)| f);
            if chunk[0].0 >= bound {
                break;
            }
            let values = par::map_slice(chunk, 64, |&(_, idx)| {
                let g = self.point(idx).expect("enumerated");
                let g = &g[..ng];
                (lower_bound(g, inst, net) < bound).then(|| objective_unchecked(g, inst, net))
            });
            for (&(_, idx), f) in chunk.iter().zip(values) {
                let Some(f) = f else { continue };
                evals += 1;
                if best.is_none_or(|(bf, _)| f < bf) {
                    best = Some((f, idx));
                }
            }
        }
        (best, evals)
    }
}

/// Move `step` from generator `j` to generator `i` while any such transfer
/// improves `F`, halving the step down to [`POLISH_MIN_STEP`].
fn polish(g0: &[f64], f0: f64, inst: &Instance, net: &Network, start: f64) -> (Vec<f64>, f64, u64) {
    let ng = g0.len();
    let glb = &net.case.glb;
    let gub = &inst.gub;
    let (mut g, mut f) = (g0.to_vec(), f0);
    let mut evals = 0u64;
    let mut step = start;
    while step >= POLISH_MIN_STEP {
        let mut improved = false;
        for i in 0..ng {
            for j in 0..ng {
                if i == j {
                    continue;
                }
                let delta = step.min(gub[i] - g[i]).min(g[j] - glb[j]);
                if delta <= 0.0 {
                    continue;
                }
                let mut trial = g.clone();
                trial[i] += delta;
                trial[j] -= delta;
                let ft = objective_unchecked(&trial, inst, net);
                evals += 1;
                if ft < f {
                    g = trial;
                    f = ft;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (g, f, evals)
}

/// Solve every record of `dataset`, replacing existing labels. Instances
/// without a feasible dispatch are labeled infeasible rather than failing.
pub fn label_dataset(dataset: &mut Dataset, net: &Network, resolution: f64) -> Result<LabelSummary> {
    if net.case.n_gen() > MAX_GENERATORS {
        return Err(Error::Parameter(format!(
            "the oracle enumerates at most {MAX_GENERATORS} generators, case has {}",
            net.case.n_gen()
        )));
    }
    dataset.check_network(net)?;
    let mut summary = LabelSummary::default();
    for rec in &mut dataset.records {
        let inst = rec.instance(net)?;
        rec.label = Some(match oracle_solve(&inst, net, resolution) {
            Ok(r) => {
                summary.solved += 1;
                summary.evals += r.evals;
                r.label()
            }
            Err(Error::Infeasible(reason)) => {
                summary.infeasible += 1;
                Label::Infeasible { reason }
            }
            Err(e) => return Err(e),
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LabelSummary {
    pub solved: usize,
    pub infeasible: usize,
    pub evals: u64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::tests_support::triangle;

    #[test]
    fn axes_include_upper_bound() {
        let a = axes(&[0.0], &[0.25], 0.1);
        assert_eq!(a[0].len(), 4);
        assert_eq!(*a[0].last().unwrap(), 0.25);
    }

    #[test]
    fn rejects_unbalanced_dispatch() {
        let net = Network::new(triangle()).unwrap();
        let inst = Instance::base(&net).unwrap();
        assert!(oracle_objective(&[0.1, 0.1], &inst, &net).is_err());
    }
}
