//! Evaluation reports for a trained primal network.

use std::fmt::Write as _;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::nn::Mlp;
use crate::pipeline;
use crate::sampler::Instance;
use crate::scopf::{self, PrimalEstimate};

/// Metrics of one instance. Power quantities are in p.u.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceReport {
    pub index: usize,
    pub objective: f64,
    pub obj_star: Option<f64>,
    /// `100 (obj - obj*) / obj*`.
    pub gap_pct: Option<f64>,
    /// `‖h‖_∞` over generator contingencies.
    pub max_h: f64,
    pub max_eta_base: f64,
    pub max_eta_gen: f64,
    pub max_eta_line: f64,
    pub infer_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<InstanceReport>,
    pub base_mva: f64,
}

/// Aggregates over the instances of a report.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSummary {
    pub count: usize,
    pub labeled: usize,
    pub mean_objective: f64,
    pub mean_gap_pct: Option<f64>,
    pub max_gap_pct: Option<f64>,
    pub max_h: f64,
    pub mean_h: f64,
    pub max_eta_base: f64,
    pub max_eta_gen: f64,
    pub max_eta_line: f64,
    pub mean_infer_us: f64,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn max_rows(rows: &[Vec<f64>]) -> f64 {
    rows.iter().map(|r| max_abs(r)).fold(0.0, f64::max)
}

pub fn gap_pct(objective: f64, obj_star: f64) -> Option<f64> {
    (obj_star != 0.0).then(|| 100.0 * (objective - obj_star) / obj_star)
}

fn instance_report(
    index: usize,
    inst: &Instance,
    est: &PrimalEstimate,
    net: &Network,
    obj_star: Option<f64>,
    infer_us: f64,
) -> InstanceReport {
    let objective = scopf::scopf_objective(inst, est, &net.case);
    InstanceReport {
        index,
        objective,
        obj_star,
        gap_pct: obj_star.and_then(|s| gap_pct(objective, s)),
        max_h: max_abs(&scopf::balance_residuals(est, inst)),
        max_eta_base: max_abs(&est.eta0),
        max_eta_gen: max_rows(&est.eta_g),
        max_eta_line: max_rows(&est.eta_e),
        infer_us,
    }
}

/// Run the primal pipeline on every instance, timing each forward pass.
///
/// `obj_star[i]` is the reference objective of instance `i`, if known.
pub fn evaluate(
    net: &Network,
    model: &Mlp,
    instances: &[Instance],
    obj_star: &[Option<f64>],
    iterations: usize,
) -> Result<EvalReport> {
    if model.input_dim() != net.input_dim() {
        return Err(Error::Dimension {
            what: "network input dimension",
            expected: net.input_dim(),
            actual: model.input_dim(),
        });
    }
    crate::error::check_len("reference objectives", instances.len(), obj_star.len())?;
    let mut rows = Vec::with_capacity(instances.len());
    for (i, inst) in instances.iter().enumerate() {
        let t0 = Instant::now();
        let (est, _) = pipeline::primal_forward(net, model, inst, iterations)?;
        let us = t0.elapsed().as_secs_f64() * 1e6;
        rows.push(instance_report(i, inst, &est, net, obj_star[i], us));
    }
    Ok(EvalReport {
        rows,
        base_mva: net.case.base_mva,
    })
}

/// Report for fixed dispatches instead of a network (e.g. oracle solutions).
pub fn evaluate_dispatches(
    net: &Network,
    instances: &[Instance],
    dispatches: &[Vec<f64>],
    obj_star: &[Option<f64>],
    iterations: usize,
) -> Result<EvalReport> {
    crate::error::check_len("dispatches", instances.len(), dispatches.len())?;
    crate::error::check_len("reference objectives", instances.len(), obj_star.len())?;
    let rows = instances
        .iter()
        .zip(dispatches)
        .enumerate()
        .map(|(i, (inst, g))| {
            let est = scopf::evaluate_dispatch(net, inst, g, iterations);
            instance_report(i, inst, &est, net, obj_star[i], 0.0)
        })
        .collect();
    Ok(EvalReport {
        rows,
        base_mva: net.case.base_mva,
    })
}

impl EvalReport {
    pub fn summary(&self) -> EvalSummary {
        let n = self.rows.len().max(1) as f64;
        let gaps: Vec<f64> = self.rows.iter().filter_map(|r| r.gap_pct).collect();
        let fold_max = |f: fn(&InstanceReport) -> f64| self.rows.iter().map(f).fold(0.0, f64::max);
        EvalSummary {
            count: self.rows.len(),
            labeled: gaps.len(),
            mean_objective: self.rows.iter().map(|r| r.objective).sum::<f64>() / n,
            mean_gap_pct: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
            max_gap_pct: gaps.iter().copied().reduce(f64::max),
            max_h: fold_max(|r| r.max_h),
            mean_h: self.rows.iter().map(|r| r.max_h).sum::<f64>() / n,
            max_eta_base: fold_max(|r| r.max_eta_base),
            max_eta_gen: fold_max(|r| r.max_eta_gen),
            max_eta_line: fold_max(|r| r.max_eta_line),
            mean_infer_us: self.rows.iter().map(|r| r.infer_us).sum::<f64>() / n,
        }
    }

    /// CSV with one row per instance. Power columns are scaled by `base_mva`
    /// when `mva` is set.
    pub fn to_csv(&self, mva: bool) -> String {
        let s = if mva { self.base_mva } else { 1.0 };
        let unit = if mva { "mw" } else { "pu" };
        let mut out = format!(
            "index,objective,obj_star,gap_pct,max_h_{unit},max_eta_base_{unit},max_eta_gen_{unit},max_eta_line_{unit},infer_us\n"
        );
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{:.3}",
                r.index,
                r.objective,
                opt(r.obj_star),
                opt(r.gap_pct),
                r.max_h * s,
                r.max_eta_base * s,
                r.max_eta_gen * s,
                r.max_eta_line * s,
                r.infer_us
            );
        }
        out
    }

    /// Human-readable summary.
    pub fn render_summary(&self, mva: bool) -> String {
        let sm = self.summary();
        let (s, unit) = if mva { (self.base_mva, "MW") } else { (1.0, "p.u.") };
        let mut out = String::new();
        let _ = writeln!(out, "instances        {}", sm.count);
        let _ = writeln!(out, "mean objective   {:.6}", sm.mean_objective);
        match (sm.mean_gap_pct, sm.max_gap_pct) {
            (Some(m), Some(x)) => {
                let _ = writeln!(out, "mean gap         {m:.3}% over {} labeled", sm.labeled);
                let _ = writeln!(out, "max gap          {x:.3}%");
            }
            _ => {
                let _ = writeln!(out, "mean gap         n/a (no labels)");
            }
        }
        let _ = writeln!(out, "max |h|          {:.3e} {unit}", sm.max_h * s);
        let _ = writeln!(out, "max base slack   {:.3e} {unit}", sm.max_eta_base * s);
        let _ = writeln!(out, "max gen-ctg slack {:.3e} {unit}", sm.max_eta_gen * s);
        let _ = writeln!(out, "max line-ctg slack {:.3e} {unit}", sm.max_eta_line * s);
        let _ = writeln!(out, "mean inference   {:.1} us", sm.mean_infer_us);
        out
    }
}
