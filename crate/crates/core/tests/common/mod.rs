#![allow(dead_code)]

pub mod gradcheck;
pub mod reference;

use nalgebra::DMatrix;
use pdl_scopf::{GridCase, Instance, Network};
use proptest::prelude::*;

pub fn case_path(name: &str) -> String {
    format!("{}/cases/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn network(name: &str) -> Network {
    Network::from_file(case_path(name)).expect("bundled case")
}

pub fn bus5() -> Network {
    network("bus5.json")
}

/// A connected case: a random spanning tree plus extra lines.
pub fn arb_case(max_bus: usize) -> impl Strategy<Value = GridCase> {
    (2..=max_bus)
        .prop_flat_map(|n| {
            let parents: Vec<_> = (1..n).map(|i| 0..i).collect();
            let extra = prop::collection::vec((0..n, 0..n), 0..=n);
            let susc = prop::collection::vec(1.0f64..20.0, 2 * n);
            let slack = 0..n;
            (Just(n), parents, extra, susc, slack)
        })
        .prop_map(|(n, parents, extra, susc, slack)| {
            let mut from = Vec::new();
            let mut to = Vec::new();
            for (i, p) in parents.into_iter().enumerate() {
                from.push(p);
                to.push(i + 1);
            }
            for (a, b) in extra {
                if a != b {
                    from.push(a);
                    to.push(b);
                }
            }
            let m = from.len();
            let susceptance = (0..m).map(|l| susc[l % susc.len()]).collect();
            GridCase {
                base_mva: 100.0,
                n_bus: n,
                bus_names: vec![None; n],
                gen_bus: vec![0, n - 1],
                glb: vec![0.0; 2],
                gub0: vec![2.0; 2],
                c0: vec![1.0, 2.0],
                gamma: vec![1.0; 2],
                line_from: from,
                line_to: to,
                susceptance,
                flb: vec![-1.0; m],
                fub: vec![1.0; m],
                load_bus: vec![n / 2],
                d0: vec![1.0],
                slack_bus: slack,
                penalty: 1000.0,
            }
        })
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Inflow minus withdrawal at every non-slack bus.
pub fn kcl_residual(case: &GridCase, ptdf: &DMatrix<f64>, w: &[f64]) -> f64 {
    let flows: Vec<f64> = (0..case.n_line())
        .map(|l| (0..case.n_bus).map(|b| ptdf[(l, b)] * w[b]).sum())
        .collect();
    let mut inflow = vec![0.0; case.n_bus];
    for (l, f) in flows.iter().enumerate() {
        inflow[case.line_to[l]] += f;
        inflow[case.line_from[l]] -= f;
    }
    (0..case.n_bus)
        .filter(|&b| b != case.slack_bus)
        .map(|b| (inflow[b] - w[b]).abs())
        .fold(0.0, f64::max)
}

pub fn without_line(case: &GridCase, k: usize) -> GridCase {
    let mut c = case.clone();
    c.line_from.remove(k);
    c.line_to.remove(k);
    c.susceptance.remove(k);
    c.flb.remove(k);
    c.fub.remove(k);
    c
}

/// Exact root of `Σ_{i≠k} min(g_i + n δ_i, u_i) = d` on `[0, 1]`, if any.
pub fn exact_root(g: &[f64], d: f64, k: usize, droop: &[f64], gub: &[f64]) -> Option<f64> {
    let total = |n: f64| -> f64 {
        (0..g.len())
            .filter(|&i| i != k)
            .map(|i| (g[i] + n * droop[i]).min(gub[i]))
            .sum()
    };
    if total(0.0) > d || total(1.0) < d {
        return None;
    }
    let mut pts: Vec<f64> = (0..g.len())
        .filter(|&i| i != k && droop[i] > 0.0)
        .map(|i| (gub[i] - g[i]) / droop[i])
        .filter(|&n| n > 0.0 && n < 1.0)
        .collect();
    pts.push(0.0);
    pts.push(1.0);
    pts.sort_by(f64::total_cmp);
    for w in pts.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (ta, tb) = (total(a), total(b));
        if ta <= d && d <= tb {
            if tb == ta {
                return Some(a);
            }
            return Some(a + (d - ta) / (tb - ta) * (b - a));
        }
    }
    None
}

/// The lattice the oracle scans for a two-generator case.
pub fn axis(lo: f64, hi: f64, res: f64) -> Vec<f64> {
    let steps = ((hi - lo) / res).floor() as u64;
    let mut a: Vec<f64> = (0..=steps).map(|j| lo + j as f64 * res).collect();
    if hi - a[steps as usize] > 1e-12 {
        a.push(hi);
    }
    a
}

/// Exact feasible interval of `g0` for a two-generator case, or `None`.
pub fn feasible_interval(case: &GridCase, inst: &Instance) -> Option<(f64, f64)> {
    let d = inst.d_total;
    let droop: Vec<f64> = (0..2).map(|i| case.gamma[i] * (inst.gub[i] - case.glb[i])).collect();
    // the slice itself
    let mut lo = case.glb[0].max(d - inst.gub[1]);
    let mut hi = inst.gub[0].min(d - case.glb[1]);
    // outage of unit 1: unit 0 alone must reach d
    if inst.gub[0] < d {
        return None;
    }
    lo = lo.max(d - droop[0]);
    // outage of unit 0: g1 = d - g0 must reach d
    if inst.gub[1] < d {
        return None;
    }
    hi = hi.min(droop[1]);
    (lo <= hi).then_some((lo, hi))
}
