//! Primal-dual learning and the baseline trainers.
//!
//! Every method runs `K` outer iterations of `2L` optimizer steps, one
//! minibatch per step:
//!
//! - `pdl`: `L` primal steps on the augmented Lagrangian loss with the dual
//!   network fixed, then the maximum violation `v_k`, a frozen copy of the
//!   dual network, `L` dual steps toward `λ_k + ρ_d h`, and the penalty update.
//! - `penalty`: `2L` steps on `f/s + ρ 1ᵀh²`, same penalty schedule.
//! - `naive`: `2L` steps on `‖g̃ - g*‖₂`.
//! - `ld`: `2L` steps on `‖g̃ - g*‖₂ + ρ_ld 1ᵀh²` with fixed `ρ_ld`.

pub mod checkpoint;
pub mod losses;

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;
use crate::nn::{lr_schedule, Adam, Mlp};
use crate::par;
use crate::pipeline;
use crate::sampler::Instance;
use crate::scopf;

pub use losses::{dual_loss, naive_loss, penalty_loss, primal_loss, LossGrad};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Pdl,
    Penalty,
    Naive,
    Ld,
}

impl Method {
    pub fn needs_labels(self) -> bool {
        matches!(self, Method::Naive | Method::Ld)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Pdl => "pdl",
            Method::Penalty => "penalty",
            Method::Naive => "naive",
            Method::Ld => "ld",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pdl" => Ok(Method::Pdl),
            "penalty" => Ok(Method::Penalty),
            "naive" => Ok(Method::Naive),
            "ld" => Ok(Method::Ld),
            other => Err(Error::Parameter(format!(
                "unknown method {other:?} (expected pdl, penalty, naive or ld)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    /// Outer iterations `K`.
    pub outer_iters: usize,
    /// Inner iterations `L` per phase.
    pub inner_iters: usize,
    pub batch: usize,
    pub rho0: f64,
    pub rho_max: f64,
    pub tau: f64,
    pub alpha: f64,
    /// Penalty used inside the dual target, independent of `ρ`.
    pub dual_loss_rho: f64,
    pub obj_scale: f64,
    pub lr: f64,
    /// Fixed penalty of the LD baseline.
    pub ld_rho: f64,
    pub bs_iterations: usize,
    pub layer_norm: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            outer_iters: 20,
            inner_iters: 2000,
            batch: 8,
            rho0: 0.1,
            rho_max: 1e8,
            tau: 0.9,
            alpha: 2.0,
            dual_loss_rho: 0.1,
            obj_scale: 1e5,
            lr: 1e-4,
            ld_rho: 1e3,
            bs_iterations: crate::layers::DEFAULT_BS_ITERATIONS,
            layer_norm: true,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Parameter(m.into()));
        if self.outer_iters == 0 || self.inner_iters == 0 || self.batch == 0 {
            return bad("outer_iters, inner_iters and batch must be positive");
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad("tau must lie in (0, 1)");
        }
        if !(self.alpha > 1.0) {
            return bad("alpha must exceed 1");
        }
        for v in [
            self.rho0,
            self.rho_max,
            self.dual_loss_rho,
            self.obj_scale,
            self.lr,
            self.ld_rho,
        ] {
            if !(v > 0.0) {
                return bad("penalties, scales and learning rate must be positive");
            }
        }
        if self.rho0 > self.rho_max {
            return bad("rho0 exceeds rho_max");
        }
        if self.bs_iterations < 1 {
            return bad("bs_iterations must be at least 1");
        }
        Ok(())
    }

    /// Optimizer steps over the whole run, `2KL`.
    pub fn total_steps(&self) -> u64 {
        2 * self.outer_iters as u64 * self.inner_iters as u64
    }
}

/// `ρ' = min(αρ, ρ_max)` if `v > τ v_prev`, else `ρ`.
pub fn update_penalty(rho: f64, v: f64, v_prev: f64, config: &TrainerConfig) -> f64 {
    if v > config.tau * v_prev {
        (config.alpha * rho).min(config.rho_max)
    } else {
        rho
    }
}

/// Dataset-level statistics of a primal network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SetStats {
    /// `max_x ‖h_x‖_∞`.
    pub max_violation: f64,
    pub mean_objective: f64,
}

/// Maximum contingency balance violation and mean objective over `instances`.
pub fn evaluate_set(net: &Network, model: &Mlp, instances: &[Instance], iterations: usize) -> Result<SetStats> {
    let per = par::map_slice(instances, 8, |inst| {
        let (est, _) = pipeline::primal_forward(net, model, inst, iterations)?;
        let h = scopf::balance_residuals(&est, inst);
        let v = h.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        Ok::<_, Error>((v, scopf::scopf_objective(inst, &est, &net.case)))
    });
    let mut max_violation = 0.0f64;
    let mut total = 0.0;
    for r in per {
        let (v, f): (f64, f64) = r?;
        max_violation = max_violation.max(v);
        total += f;
    }
    Ok(SetStats {
        max_violation,
        mean_objective: total / instances.len().max(1) as f64,
    })
}

/// `max_x ‖h_x‖_∞` over `instances`.
pub fn max_violation(net: &Network, model: &Mlp, instances: &[Instance], iterations: usize) -> Result<f64> {
    evaluate_set(net, model, instances, iterations).map(|s| s.max_violation)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub rho: f64,
    /// Maximum violation of the previous outer iteration (`+∞` before the first).
    #[serde(with = "infinite_f64")]
    pub v_prev: f64,
    pub outer: usize,
    /// Global optimizer step, shared by primal and dual updates.
    pub step: u64,
    pub frozen_dual: Option<Mlp>,
}

mod infinite_f64 {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub outer_k: usize,
    /// `1..=L` for primal steps, `L+1..=2L` for the dual phase of PDL and
    /// the second half of the baselines.
    pub inner_l: usize,
    pub loss: f64,
    pub rho: f64,
    /// Most recent maximum violation, if one has been computed.
    pub v_k: Option<f64>,
    pub lr: f64,
    pub wall_ms: u128,
}

pub const LOG_HEADER: &str = "outer_k,inner_l,loss,rho,v_k,lr,wall_ms";

impl LogRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.outer_k,
            self.inner_l,
            self.loss,
            self.rho,
            self.v_k.map(|v| v.to_string()).unwrap_or_default(),
            self.lr,
            self.wall_ms
        )
    }
}

pub fn write_log<W: Write>(mut w: W, rows: &[LogRow]) -> std::io::Result<()> {
    writeln!(w, "{LOG_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", r.csv())?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterRecord {
    pub k: usize,
    pub rho: f64,
    pub v_k: f64,
    pub mean_objective: f64,
}

/// Stateful trainer; call [`Trainer::outer_iteration`] `K` times or [`Trainer::run`].
pub struct Trainer<'a> {
    net: &'a Network,
    instances: &'a [Instance],
    labels: Option<&'a [Vec<f64>]>,
    pub method: Method,
    pub config: TrainerConfig,
    pub primal: Mlp,
    pub dual: Option<Mlp>,
    pub primal_opt: Adam,
    pub dual_opt: Option<Adam>,
    pub state: TrainerState,
    pub log: Vec<LogRow>,
    pub history: Vec<OuterRecord>,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    started: Instant,
}

/// Trained networks and run history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub method: Method,
    pub primal: Mlp,
    pub dual: Option<Mlp>,
    pub state: TrainerState,
    pub history: Vec<OuterRecord>,
    pub log: Vec<LogRow>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        net: &'a Network,
        instances: &'a [Instance],
        labels: Option<&'a [Vec<f64>]>,
        method: Method,
        config: TrainerConfig,
    ) -> Result<Self> {
        config.validate()?;
        if instances.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        if method.needs_labels() {
            let labels = labels.ok_or_else(|| {
                Error::Data(format!(
                    "method {method} needs oracle labels; run the `oracle` command on the dataset first"
                ))
            })?;
            if labels.len() != instances.len() {
                return Err(Error::Dimension {
                    what: "label count",
                    expected: instances.len(),
                    actual: labels.len(),
                });
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let dim = net.input_dim();
        let primal = Mlp::standard(dim, net.case.n_gen(), config.layer_norm, &mut rng);
        let dual = (method == Method::Pdl).then(|| {
            let mut d = Mlp::standard(dim, net.n_gen_contingencies().max(1), false, &mut rng);
            d.zero_output();
            d
        });
        let primal_opt = Adam::new(&primal);
        let dual_opt = dual.as_ref().map(Adam::new);
        let rho = match method {
            Method::Ld => config.ld_rho,
            _ => config.rho0,
        };
        let order = (0..instances.len()).collect();
        Ok(Self {
            net,
            instances,
            labels,
            method,
            state: TrainerState {
                rho,
                v_prev: f64::INFINITY,
                outer: 0,
                step: 0,
                frozen_dual: None,
            },
            config,
            primal,
            dual,
            primal_opt,
            dual_opt,
            log: Vec::new(),
            history: Vec::new(),
            rng,
            order,
            cursor: usize::MAX,
            started: Instant::now(),
        })
    }

    fn next_batch(&mut self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.config.batch);
        while out.len() < self.config.batch {
            if self.cursor >= self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }

    fn current_lr(&self) -> f64 {
        lr_schedule(self.config.lr, self.state.step, self.config.total_steps())
    }

    fn last_v(&self) -> Option<f64> {
        self.history.last().map(|h| h.v_k)
    }

    fn push_log(&mut self, inner_l: usize, loss: f64, lr: f64) {
        self.log.push(LogRow {
            outer_k: self.state.outer + 1,
            inner_l,
            loss,
            rho: self.state.rho,
            v_k: self.last_v(),
            lr,
            wall_ms: self.started.elapsed().as_millis(),
        });
    }

    /// One Adam step on the primal network. Returns the batch-mean loss.
    pub fn primal_step(&mut self, inner_l: usize) -> Result<f64> {
        let batch = self.next_batch();
        let (net, method, rho) = (self.net, self.method, self.state.rho);
        let cfg = &self.config;
        let primal = &self.primal;
        let dual = self.dual.as_ref();
        let instances = self.instances;
        let labels = self.labels;
        let per = par::map_slice(&batch, 1, |&i| -> Result<(f64, Mlp)> {
            let inst = &instances[i];
            let (est, tape) = pipeline::primal_forward(net, primal, inst, cfg.bs_iterations)?;
            let lg = match method {
                Method::Pdl => {
                    let lambda = dual.expect("pdl has a dual network").predict(&inst.x)?;
                    primal_loss(net, inst, &est, &lambda, rho, cfg.obj_scale)
                }
                Method::Penalty => penalty_loss(net, inst, &est, rho, cfg.obj_scale),
                Method::Naive => naive_loss(&est, &labels.expect("checked")[i]),
                Method::Ld => losses::ld_loss(&est, inst, &labels.expect("checked")[i], rho),
            };
            let grads = pipeline::primal_backward(net, primal, inst, &tape, &lg.dg, &lg.dgk);
            Ok((lg.value, grads))
        });
        let scale = 1.0 / batch.len() as f64;
        let mut total = self.primal.zeros_like();
        let mut loss = 0.0;
        for r in per {
            let (v, g) = r?;
            loss += v * scale;
            total.add_scaled(&g, scale);
        }
        if !loss.is_finite() || total.tensors().iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence(format!(
                "non-finite primal loss at step {}",
                self.state.step
            )));
        }
        let lr = self.current_lr();
        self.primal_opt.step(&mut self.primal, &total, lr);
        self.state.step += 1;
        self.push_log(inner_l, loss, lr);
        Ok(loss)
    }

    /// One Adam step of the dual network toward precomputed per-instance targets.
    fn dual_step(&mut self, inner_l: usize, targets: &[Vec<f64>]) -> Result<f64> {
        let batch = self.next_batch();
        let dual = self.dual.as_ref().expect("pdl has a dual network");
        let instances = self.instances;
        let per = par::map_slice(&batch, 1, |&i| -> Result<(f64, Mlp)> {
            let (lambda, tape) = dual.forward(&instances[i].x)?;
            let (v, d) = losses::dual_squared_error(&lambda, &targets[i]);
            Ok((v, dual.backward(&tape, &d).0))
        });
        let m = dual.output_dim().max(1) as f64;
        let scale = 1.0 / (batch.len() as f64 * m);
        let mut total = dual.zeros_like();
        let mut loss = 0.0;
        for r in per {
            let (v, g) = r?;
            loss += v * scale;
            total.add_scaled(&g, scale);
        }
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite dual loss at step {}",
                self.state.step
            )));
        }
        let lr = self.current_lr();
        let dual = self.dual.as_mut().expect("checked");
        self.dual_opt.as_mut().expect("checked").step(dual, &total, lr);
        self.state.step += 1;
        self.push_log(inner_l, loss, lr);
        Ok(loss)
    }

    /// Dual targets `λ_k(x) + ρ_d h(x)` for every training instance.
    fn dual_targets(&self, frozen: &Mlp) -> Result<Vec<Vec<f64>>> {
        let (net, primal, cfg) = (self.net, &self.primal, &self.config);
        par::map_slice(self.instances, 8, |inst| {
            let (est, _) = pipeline::primal_forward(net, primal, inst, cfg.bs_iterations)?;
            let h = scopf::balance_residuals(&est, inst);
            let lambda_k = frozen.predict(&inst.x)?;
            Ok(losses::dual_targets(&lambda_k, &h, cfg.dual_loss_rho))
        })
        .into_iter()
        .collect()
    }

    /// Run one outer iteration of the configured method.
    pub fn outer_iteration(&mut self) -> Result<OuterRecord> {
        let l = self.config.inner_iters;
        match self.method {
            Method::Pdl => {
                for i in 1..=l {
                    self.primal_step(i)?;
                }
                let stats = evaluate_set(self.net, &self.primal, self.instances, self.config.bs_iterations)?;
                let frozen = self.dual.clone().expect("pdl has a dual network");
                let targets = self.dual_targets(&frozen)?;
                self.state.frozen_dual = Some(frozen);
                self.record(stats);
                for i in 1..=l {
                    self.dual_step(l + i, &targets)?;
                }
                self.finish_outer(stats, true)
            }
            Method::Penalty | Method::Naive | Method::Ld => {
                for i in 1..=2 * l {
                    self.primal_step(i)?;
                }
                let stats = evaluate_set(self.net, &self.primal, self.instances, self.config.bs_iterations)?;
                self.record(stats);
                self.finish_outer(stats, self.method == Method::Penalty)
            }
        }
    }

    fn record(&mut self, stats: SetStats) {
        self.history.push(OuterRecord {
            k: self.state.outer + 1,
            rho: self.state.rho,
            v_k: stats.max_violation,
            mean_objective: stats.mean_objective,
        });
    }

    fn finish_outer(&mut self, stats: SetStats, adapt_rho: bool) -> Result<OuterRecord> {
        if !stats.max_violation.is_finite() || !stats.mean_objective.is_finite() {
            return Err(Error::Divergence("non-finite training-set statistics".into()));
        }
        if adapt_rho {
            self.state.rho = update_penalty(self.state.rho, stats.max_violation, self.state.v_prev, &self.config);
        }
        self.state.v_prev = stats.max_violation;
        self.state.outer += 1;
        let rec = self.history.last_mut().expect("recorded");
        Ok(*rec)
    }

    pub fn is_done(&self) -> bool {
        self.state.outer >= self.config.outer_iters
    }

    /// Run the remaining outer iterations.
    pub fn run(mut self) -> Result<TrainOutcome> {
        while !self.is_done() {
            self.outer_iteration()?;
        }
        Ok(self.into_outcome())
    }

    pub fn into_outcome(self) -> TrainOutcome {
        TrainOutcome {
            method: self.method,
            primal: self.primal,
            dual: self.dual,
            state: self.state,
            history: self.history,
            log: self.log,
        }
    }
}

pub fn train_pdl(net: &Network, instances: &[Instance], config: TrainerConfig) -> Result<TrainOutcome> {
    Trainer::new(net, instances, None, Method::Pdl, config)?.run()
}

pub fn train_penalty(net: &Network, instances: &[Instance], config: TrainerConfig) -> Result<TrainOutcome> {
    Trainer::new(net, instances, None, Method::Penalty, config)?.run()
}

pub fn train_naive(
    net: &Network,
    instances: &[Instance],
    labels: &[Vec<f64>],
    config: TrainerConfig,
) -> Result<TrainOutcome> {
    Trainer::new(net, instances, Some(labels), Method::Naive, config)?.run()
}

pub fn train_ld(
    net: &Network,
    instances: &[Instance],
    labels: &[Vec<f64>],
    config: TrainerConfig,
) -> Result<TrainOutcome> {
    Trainer::new(net, instances, Some(labels), Method::Ld, config)?.run()
}
