//! Objective evaluated from the raw case data: angles from a dense solve of
//! the reduced susceptance system, line outages by re-solving the network
//! without the line, and exact piecewise-linear response roots.

use pdl_scopf::GridCase;

fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[piv][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let m = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= m * a[col][c];
            }
            b[r] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// Line flows for bus injections `p`, with line `out` removed. `None`
/// if the removal splits the network.
pub fn flows(case: &GridCase, p: &[f64], out: Option<usize>) -> Option<Vec<f64>> {
    let n = case.n_bus;
    let idx: Vec<usize> = (0..n).filter(|&b| b != case.slack_bus).collect();
    let pos = |b: usize| idx.iter().position(|&x| x == b);
    let mut a = vec![vec![0.0; idx.len()]; idx.len()];
    for l in (0..case.n_line()).filter(|&l| Some(l) != out) {
        let (f, t, s) = (case.line_from[l], case.line_to[l], case.susceptance[l]);
        if let Some(i) = pos(f) {
            a[i][i] += s;
        }
        if let Some(j) = pos(t) {
            a[j][j] += s;
        }
        if let (Some(i), Some(j)) = (pos(f), pos(t)) {
            a[i][j] -= s;
            a[j][i] -= s;
        }
    }
    let rhs = idx.iter().map(|&b| p[b]).collect();
    let th = solve(a, rhs)?;
    let theta = |b: usize| pos(b).map_or(0.0, |i| th[i]);
    Some(
        (0..case.n_line())
            .map(|l| {
                if Some(l) == out {
                    0.0
                } else {
                    case.susceptance[l] * (theta(case.line_from[l]) - theta(case.line_to[l]))
                }
            })
            .collect(),
    )
}

fn injections(case: &GridCase, g: &[f64], d: &[f64]) -> Vec<f64> {
    let mut p = vec![0.0; case.n_bus];
    for (i, &b) in case.gen_bus.iter().enumerate() {
        p[b] += g[i];
    }
    for (j, &b) in case.load_bus.iter().enumerate() {
        p[b] -= d[j];
    }
    p
}

fn overload(case: &GridCase, f: &[f64], skip: Option<usize>) -> f64 {
    (0..f.len())
        .filter(|&l| Some(l) != skip)
        .map(|l| (f[l] - case.fub[l]).max(case.flb[l] - f[l]).max(0.0))
        .sum()
}

/// Smallest `n ∈ [0, 1]` where the survivors of outage `k` cover `total`.
fn response_root(g: &[f64], k: usize, droop: &[f64], gub: &[f64], total: f64) -> Option<f64> {
    let supply = |n: f64| -> f64 {
        (0..g.len())
            .filter(|&i| i != k)
            .map(|i| (g[i] + n * droop[i]).min(gub[i]))
            .sum()
    };
    if supply(1.0) < total {
        return None;
    }
    let mut knots: Vec<f64> = (0..g.len())
        .filter(|&i| i != k && droop[i] > 0.0)
        .map(|i| (gub[i] - g[i]) / droop[i])
        .filter(|&t| t > 0.0 && t < 1.0)
        .collect();
    knots.push(1.0);
    knots.sort_by(f64::total_cmp);
    let mut lo = 0.0;
    for hi in knots {
        let (s0, s1) = (supply(lo), supply(hi));
        if s1 >= total {
            return Some(if s1 == s0 { lo } else { lo + (total - s0) * (hi - lo) / (s1 - s0) });
        }
        lo = hi;
    }
    unreachable!()
}

pub fn objective(case: &GridCase, d: &[f64], c: &[f64], gub: &[f64], g: &[f64]) -> f64 {
    let total: f64 = d.iter().sum();
    let mut slack = 0.0;
    let p = injections(case, g, d);
    let base = flows(case, &p, None).expect("connected");
    slack += overload(case, &base, None);
    for l in 0..case.n_line() {
        if let Some(f) = flows(case, &p, Some(l)) {
            slack += overload(case, &f, Some(l));
        }
    }
    let droop: Vec<f64> = (0..g.len()).map(|i| case.gamma[i] * (gub[i] - case.glb[i])).collect();
    for k in 0..g.len() {
        if !(gub[k] - case.glb[k] > 0.0 && case.glb[k] >= 0.0) {
            continue;
        }
        let Some(n) = response_root(g, k, &droop, gub, total) else {
            return f64::INFINITY;
        };
        let gk: Vec<f64> = (0..g.len())
            .map(|i| if i == k { 0.0 } else { (g[i] + n * droop[i]).min(gub[i]) })
            .collect();
        let f = flows(case, &injections(case, &gk, d), None).expect("connected");
        slack += overload(case, &f, None);
    }
    c.iter().zip(g).map(|(c, g)| c * g).sum::<f64>() + case.penalty * slack
}

/// Worst survivor shortfall over the generator outages, at full response.
pub fn worst_shortfall(case: &GridCase, d: &[f64], gub: &[f64], g: &[f64]) -> f64 {
    let total: f64 = d.iter().sum();
    (0..g.len())
        .filter(|&k| gub[k] - case.glb[k] > 0.0 && case.glb[k] >= 0.0)
        .map(|k| {
            let reach: f64 = (0..g.len())
                .filter(|&i| i != k)
                .map(|i| (g[i] + case.gamma[i] * (gub[i] - case.glb[i])).min(gub[i]))
                .sum();
            total - reach
        })
        .fold(f64::NEG_INFINITY, f64::max)
}
