//! Instance generation: truncated correlated load perturbation and
//! multiplicative cost / upper-bound factors.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::grid::Network;
use crate::par;

/// Redraws of a load vector before falling back to clamping.
pub const MAX_LOAD_REJECTIONS: usize = 100;
/// Redraws of a whole instance that fails the total-capacity or recovery check.
pub const MAX_INSTANCE_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerturbationConfig {
    /// Relative load spread; loads stay within `(1 ± mu) d0`.
    pub mu: f64,
    /// Off-diagonal correlation between load units.
    pub load_corr: f64,
    /// Off-diagonal correlation of the cost and upper-bound factors.
    pub factor_corr: f64,
    pub seed: u64,
    /// Z-score placing the truncation bound at the 95th percentile.
    pub z95: f64,
    /// Redraw instances where some generator outage cannot be rebalanced
    /// by the droop response for any base dispatch.
    pub recovery_screen: bool,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            mu: 0.5,
            load_corr: 0.5,
            factor_corr: 0.8,
            seed: 0,
            z95: 1.645,
            recovery_screen: true,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.mu) {
            return Err(Error::Parameter(format!("mu must lie in [0, 1), got {}", self.mu)));
        }
        for (name, v) in [("load_corr", self.load_corr), ("factor_corr", self.factor_corr)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Parameter(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.z95 > 0.0) {
            return Err(Error::Parameter("z95 must be positive".into()));
        }
        Ok(())
    }

    /// Relative standard deviation `mu / z95`.
    pub fn sigma(&self) -> f64 {
        self.mu / self.z95
    }
}

/// One sampled problem with the per-instance quantities the evaluators reuse.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    /// Per load unit demand.
    pub d: Vec<f64>,
    /// Per generator linear cost.
    pub c: Vec<f64>,
    /// Per generator upper bound.
    pub gub: Vec<f64>,
    /// Normalized network input `[d / d0, c / c0, gub / gub0]`.
    pub x: Vec<f64>,
    /// Bus-wise demand.
    pub d_bus: Vec<f64>,
    pub d_total: f64,
    /// Instance capacities `gub - glb`.
    pub capacity: Vec<f64>,
    /// Droop response per unit signal, `gamma * capacity`.
    pub droop: Vec<f64>,
    /// `Φ d_bus`, the flow contribution of the loads.
    pub load_flow: Vec<f64>,
}

impl Instance {
    pub fn new(net: &Network, d: Vec<f64>, c: Vec<f64>, gub: Vec<f64>) -> Result<Self> {
        let case = &net.case;
        check_len("load vector", case.n_load(), d.len())?;
        check_len("cost vector", case.n_gen(), c.len())?;
        check_len("upper-bound vector", case.n_gen(), gub.len())?;
        let guard = |v: f64| if v == 0.0 { 1.0 } else { v };
        let x = d
            .iter()
            .zip(&case.d0)
            .map(|(v, b)| v / guard(*b))
            .chain(c.iter().zip(&case.c0).map(|(v, b)| v / guard(*b)))
            .chain(gub.iter().zip(&case.gub0).map(|(v, b)| v / guard(*b)))
            .collect();
        let d_bus = case.bus_demand(&d);
        let d_total = d.iter().sum();
        let capacity: Vec<f64> = gub.iter().zip(&case.glb).map(|(u, l)| u - l).collect();
        let droop = capacity.iter().zip(&case.gamma).map(|(h, g)| h * g).collect();
        let phi = &net.factors.ptdf;
        let load_flow = (0..case.n_line())
            .map(|l| (0..case.n_bus).map(|b| phi[(l, b)] * d_bus[b]).sum())
            .collect();
        Ok(Self {
            d,
            c,
            gub,
            x,
            d_bus,
            d_total,
            capacity,
            droop,
            load_flow,
        })
    }

    /// The unperturbed instance.
    pub fn base(net: &Network) -> Result<Self> {
        let c = &net.case;
        Self::new(net, c.d0.clone(), c.c0.clone(), c.gub0.clone())
    }

    /// `1ᵀglb ≤ 1ᵀd ≤ 1ᵀgub`.
    pub fn has_capacity_headroom(&self, glb: &[f64]) -> bool {
        let lo: f64 = glb.iter().sum();
        let hi: f64 = self.gub.iter().sum();
        lo <= self.d_total && self.d_total <= hi
    }
}

/// The RNG stream used for instance `index` under `seed`.
pub fn instance_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Draw an equicorrelated standard normal vector with off-diagonal correlation `corr`.
fn equicorrelated_normals<R: Rng + ?Sized>(n: usize, corr: f64, rng: &mut R) -> Vec<f64> {
    let common: f64 = rng.sample(StandardNormal);
    let (a, b) = (corr.sqrt(), (1.0 - corr).sqrt());
    (0..n)
        .map(|_| {
            let own: f64 = rng.sample(StandardNormal);
            a * common + b * own
        })
        .collect()
}

/// Sample per-unit load demands from the truncated correlated Gaussian.
///
/// Units with zero base demand pass through unchanged. After
/// [`MAX_LOAD_REJECTIONS`] out-of-box draws the last draw is clamped.
pub fn sample_loads<R: Rng + ?Sized>(
    d0: &[f64],
    config: &PerturbationConfig,
    rng: &mut R,
) -> Vec<f64> {
    let sigma = config.sigma();
    let lo: Vec<f64> = d0.iter().map(|d| ((1.0 - config.mu) * d).min((1.0 + config.mu) * d)).collect();
    let hi: Vec<f64> = d0.iter().map(|d| ((1.0 - config.mu) * d).max((1.0 + config.mu) * d)).collect();
    let mut draw = Vec::new();
    for _ in 0..=MAX_LOAD_REJECTIONS {
        let z = equicorrelated_normals(d0.len(), config.load_corr, rng);
        draw = d0
            .iter()
            .zip(&z)
            .map(|(d, z)| d + sigma * d.abs() * z)
            .collect();
        if draw.iter().zip(lo.iter().zip(&hi)).all(|(v, (l, h))| l <= v && v <= h) {
            return draw;
        }
    }
    draw.iter()
        .zip(lo.iter().zip(&hi))
        .map(|(v, (l, h))| v.clamp(*l, *h))
        .collect()
}

/// One draw of `n` multiplicative factors from `N(1, Σ)` with
/// `Σ_ij = sigma² (corr + (1 - corr) [i = j])`.
pub fn sample_factors<R: Rng + ?Sized>(n: usize, corr: f64, sigma: f64, rng: &mut R) -> Vec<f64> {
    equicorrelated_normals(n, corr, rng)
        .into_iter()
        .map(|z| 1.0 + sigma * z)
        .collect()
}

/// Slack allowed by the recovery screen.
pub const RECOVERY_TOL: f64 = 1e-9;

/// Largest `s` such that some balanced base dispatch within bounds lets
/// every screened generator outage be covered with `s` to spare:
///
/// `max s  s.t.  1ᵀg = 1ᵀd,  glb ≤ g ≤ gub,
///  Σ_{i≠k} min(g_i + γ_i ĝ_i, gub_i) ≥ 1ᵀd + s  for all k`.
///
/// Negative values mean no dispatch survives every outage. Returns
/// `+∞` when there are no generator contingencies.
pub fn recovery_margin(net: &Network, inst: &Instance) -> Result<f64> {
    use microlp::{ComparisonOp, OptimizationDirection, Problem};
    let ks = &net.contingencies.gen_contingencies;
    if ks.is_empty() {
        return Ok(f64::INFINITY);
    }
    let glb = &net.case.glb;
    let n = glb.len();
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let s = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
    let g: Vec<_> = (0..n).map(|i| lp.add_var(0.0, (glb[i], inst.gub[i]))).collect();
    let all: Vec<_> = g.iter().map(|&v| (v, 1.0)).collect();
    lp.add_constraint(all.as_slice(), ComparisonOp::Eq, inst.d_total);
    for &k in ks {
        let mut row = vec![(s, -1.0)];
        for i in (0..n).filter(|&i| i != k) {
            // t ≤ min(g_i + droop_i, gub_i)
            let t = lp.add_var(0.0, (f64::NEG_INFINITY, inst.gub[i]));
            lp.add_constraint([(t, 1.0), (g[i], -1.0)].as_slice(), ComparisonOp::Le, inst.droop[i]);
            row.push((t, 1.0));
        }
        lp.add_constraint(row.as_slice(), ComparisonOp::Ge, inst.d_total);
    }
    match lp.solve() {
        Ok(out) => out
            .into_solution()
            .map(|sol| sol.objective())
            .map_err(|_| Error::Infeasible("recovery screen did not finish".into())),
        Err(microlp::Error::Infeasible) => Ok(f64::NEG_INFINITY),
        Err(e) => Err(Error::Infeasible(format!("recovery screen failed: {e}"))),
    }
}

/// Sample one instance; returns it with the number of resamples.
pub fn make_instance<R: Rng + ?Sized>(
    net: &Network,
    config: &PerturbationConfig,
    rng: &mut R,
) -> Result<(Instance, usize)> {
    let case = &net.case;
    let sigma = config.sigma();
    let cap0 = case.base_capacity();
    for attempt in 0..MAX_INSTANCE_RESAMPLES {
        let d = sample_loads(&case.d0, config, rng);
        let fc = sample_factors(case.n_gen(), config.factor_corr, sigma, rng);
        let fg = sample_factors(case.n_gen(), config.factor_corr, sigma, rng);
        let c = fc.iter().zip(&case.c0).map(|(f, c)| (f * c).max(0.0)).collect();
        let gub = (0..case.n_gen())
            .map(|i| (fg[i] * case.gub0[i]).max(case.glb[i] + 0.01 * cap0[i]))
            .collect();
        let inst = Instance::new(net, d, c, gub)?;
        if inst.has_capacity_headroom(&case.glb)
            && (!config.recovery_screen || recovery_margin(net, &inst)? >= -RECOVERY_TOL)
        {
            return Ok((inst, attempt));
        }
    }
    Err(Error::Infeasible(format!(
        "no instance with 1ᵀglb ≤ 1ᵀd ≤ 1ᵀgub after {MAX_INSTANCE_RESAMPLES} draws"
    )))
}

/// Sampled instances plus bookkeeping.
#[derive(Debug, Clone)]
pub struct Sampled {
    pub instances: Vec<Instance>,
    /// Total capacity-headroom resamples across all instances.
    pub resamples: usize,
}

/// Sample `n` instances. Instance `i` uses stream `i` of `config.seed`, so
/// the output is identical with or without the `parallel` feature.
pub fn generate(net: &Network, config: &PerturbationConfig, n: usize) -> Result<Sampled> {
    config.validate()?;
    let draws = par::map_range(n, 16, |i| {
        let mut rng = instance_rng(config.seed, i as u64);
        make_instance(net, config, &mut rng)
    });
    let mut instances = Vec::with_capacity(n);
    let mut resamples = 0;
    for d in draws {
        let (inst, r) = d?;
        instances.push(inst);
        resamples += r;
    }
    Ok(Sampled {
        instances,
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_spread_returns_base_loads() {
        let cfg = PerturbationConfig {
            mu: 0.0,
            ..Default::default()
        };
        let mut rng = instance_rng(1, 0);
        let d0 = [0.3, 1.2, 0.0];
        assert_eq!(sample_loads(&d0, &cfg, &mut rng), d0.to_vec());
    }

    #[test]
    fn perfectly_correlated_identical_units_move_together() {
        let cfg = PerturbationConfig {
            load_corr: 1.0,
            ..Default::default()
        };
        let mut rng = instance_rng(7, 3);
        for _ in 0..100 {
            let d = sample_loads(&[0.8, 0.8], &cfg, &mut rng);
            assert!((d[0] - d[1]).abs() <= 1e-12);
        }
    }

    #[test]
    fn factors_fully_correlated_are_equal() {
        let mut rng = instance_rng(2, 0);
        let f = sample_factors(2, 1.0, 0.3, &mut rng);
        assert_eq!(f[0], f[1]);
        assert_eq!(sample_factors(1, 0.8, 0.3, &mut rng).len(), 1);
    }

    #[test]
    fn factor_mean_is_one() {
        let mut rng = instance_rng(11, 0);
        let sigma = PerturbationConfig::default().sigma();
        let n = 10_000;
        let mut sums = [0.0; 3];
        for _ in 0..n {
            for (s, f) in sums.iter_mut().zip(sample_factors(3, 0.8, sigma, &mut rng)) {
                *s += f;
            }
        }
        for s in sums {
            assert!((s / n as f64 - 1.0).abs() <= 0.02, "{}", s / n as f64);
        }
    }

    #[test]
    fn loads_respect_truncation_box() {
        let cfg = PerturbationConfig::default();
        let d0 = [0.5, 1.0, 2.0, 0.1];
        let mut rng = instance_rng(5, 0);
        for _ in 0..2000 {
            let d = sample_loads(&d0, &cfg, &mut rng);
            for (v, b) in d.iter().zip(&d0) {
                assert!(*v >= 0.5 * b && *v <= 1.5 * b);
            }
        }
    }
}
