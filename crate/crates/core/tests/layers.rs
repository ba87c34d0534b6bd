mod common;

use common::exact_root;
use pdl_scopf::layers::{
    binary_search_layer, bound_map, repair_backward, repair_branch, repair_layer, repair_with_branch, RepairBranch,
};
use proptest::prelude::*;

/// Box, a point inside it and a feasible total demand.
fn arb_box(max_gen: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, f64)> {
    (2..=max_gen).prop_flat_map(|n| {
        (
            prop::collection::vec((0.0f64..1.0, 0.01f64..3.0), n),
            prop::collection::vec(0.0f64..=1.0, n),
            0.0f64..=1.0,
        )
            .prop_map(|(bounds, pos, share)| {
                let glb: Vec<f64> = bounds.iter().map(|b| b.0).collect();
                let gub: Vec<f64> = bounds.iter().map(|b| b.0 + b.1).collect();
                let gcheck = (0..glb.len()).map(|i| glb[i] + pos[i] * (gub[i] - glb[i])).collect();
                let (lo, hi): (f64, f64) = (glb.iter().sum(), gub.iter().sum());
                (glb, gub, gcheck, lo + share * (hi - lo))
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn bound_map_stays_in_box(z in prop::collection::vec(-60.0f64..60.0, 4), lo in 0.0f64..1.0, w in 0.0f64..2.0) {
        let glb = vec![lo; 4];
        let gub = vec![lo + w; 4];
        let (g, _) = bound_map(&z, &glb, &gub);
        prop_assert!(g.iter().all(|&v| lo <= v && v <= lo + w));
    }

    #[test]
    fn repair_balances_within_box((glb, gub, gcheck, d) in arb_box(6)) {
        let (g, _) = repair_layer(&gcheck, d, &glb, &gub);
        let total: f64 = g.iter().sum();
        prop_assert!((total - d).abs() <= 1e-9, "total {total} vs {d}");
        for i in 0..g.len() {
            prop_assert!(glb[i] <= g[i] && g[i] <= gub[i]);
        }
    }

    #[test]
    fn repair_backward_matches_differences((glb, gub, gcheck, d) in arb_box(5), dout in prop::collection::vec(-1.0f64..1.0, 5)) {
        let branch = repair_branch(&gcheck, d, &glb, &gub);
        prop_assume!(matches!(branch, RepairBranch::Deficit | RepairBranch::Surplus));
        let n = glb.len();
        let dout = &dout[..n];
        let (_, tape) = repair_with_branch(&gcheck, d, &glb, &gub, branch);
        let analytic = repair_backward(&tape, d, &glb, &gub, dout);
        let loss = |x: &[f64]| -> f64 {
            let (g, _) = repair_with_branch(x, d, &glb, &gub, branch);
            g.iter().zip(dout).map(|(a, b)| a * b).sum()
        };
        let s: f64 = gcheck.iter().sum();
        let gap = (s - d).abs().min((gub.iter().sum::<f64>() - s).abs()).min((s - glb.iter().sum::<f64>()).abs());
        prop_assume!(gap > 1e-3);
        for j in 0..n {
            let h = 1e-6;
            let mut a = gcheck.clone();
            let mut b = gcheck.clone();
            a[j] += h;
            b[j] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            // clamping is inactive for in-box inputs, so the map is smooth here
            prop_assert!((fd - analytic[j]).abs() <= 1e-6 * (1.0 + fd.abs()), "{j}: {fd} vs {}", analytic[j]);
        }
    }

    #[test]
    fn bisection_brackets_exact_root(
        (glb, gub, g, d) in arb_box(5),
        gamma in 0.05f64..1.0,
        k_pick in 0usize..5,
        t in prop::sample::select(vec![10usize, 25]),
    ) {
        let n_gen = g.len();
        let k = k_pick % n_gen;
        let droop: Vec<f64> = glb.iter().zip(&gub).map(|(l, u)| gamma * (u - l)).collect();
        let resp = binary_search_layer(&g, d, k, &droop, &gub, t).unwrap();
        let scale = 2f64.powi(-(t as i32));
        let sum_droop: f64 = (0..n_gen).filter(|&i| i != k).map(|i| droop[i]).sum();
        prop_assert_eq!(resp.gk[k], 0.0);
        match exact_root(&g, d, k, &droop, &gub) {
            Some(root) => {
                // the final midpoint lies in a bracket of width 2^-t containing a root
                let total = |n: f64| -> f64 {
                    (0..n_gen).filter(|&i| i != k).map(|i| (g[i] + n * droop[i]).min(gub[i])).sum()
                };
                let near = (resp.n - root).abs() <= scale
                    || (total(resp.n - scale) - d) * (total(resp.n + scale) - d) <= 0.0;
                prop_assert!(near, "n {} root {root}", resp.n);
                prop_assert!(resp.residual.abs() <= scale * sum_droop + 1e-12, "residual {}", resp.residual);
            }
            None => {
                let short: f64 = (0..n_gen).filter(|&i| i != k).map(|i| (g[i] + droop[i]).min(gub[i])).sum::<f64>() - d;
                if short < 0.0 {
                    prop_assert!(resp.n >= 1.0 - scale);
                    prop_assert!(resp.residual < 0.0);
                } else {
                    prop_assert!(resp.n <= scale);
                    prop_assert!(resp.residual > 0.0);
                }
            }
        }
    }
}

#[test]
fn symmetric_survivors_share_the_shortfall() {
    // three identical units at 1.0, unit 0 trips, 1.0 must be made up by two units with droop 2
    let g = [1.0, 1.0, 1.0];
    let droop = [2.0; 3];
    let gub = [3.0; 3];
    for t in [10, 25] {
        let r = binary_search_layer(&g, 3.0, 0, &droop, &gub, t).unwrap();
        let exact = 0.25;
        assert!((r.n - exact).abs() <= 2f64.powi(-(t as i32)));
        assert!(r.residual.abs() <= 2f64.powi(-(t as i32)) * 4.0);
        assert!((r.gk[1] - r.gk[2]).abs() < 1e-15);
    }
}

#[test]
fn capped_survivor_reports_negative_residual() {
    let r = binary_search_layer(&[1.0, 1.0], 2.0, 1, &[2.0, 2.0], &[1.5, 2.0], 25).unwrap();
    assert_eq!(r.gk, vec![1.5, 0.0]);
    assert!(r.n > 1.0 - 2f64.powi(-25));
    assert!((r.residual + 0.5).abs() < 1e-12);
    assert_eq!(r.rho, vec![true, false]);
}

#[test]
fn oversupplied_contingency_drives_signal_to_zero() {
    // survivors already exceed the demand at n = 0
    let r = binary_search_layer(&[2.0, 1.0, 0.5], 2.0, 2, &[1.0; 3], &[3.0; 3], 10).unwrap();
    assert!(r.n <= 2f64.powi(-10));
    assert!(r.residual > 0.0);
}
