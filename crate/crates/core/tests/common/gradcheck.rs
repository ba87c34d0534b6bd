//! Central-difference checks shared by the gradient tests and the acceptance run.

use pdl_scopf::nn::Mlp;
use pdl_scopf::pipeline::{self, PrimalTape};
use pdl_scopf::sampler::{self, Instance, PerturbationConfig};
use pdl_scopf::train::primal_loss;
use pdl_scopf::{Network, PrimalEstimate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-6;

/// `‖a - b‖ / max(‖b‖, 1e-3)`; below the floor central differences are
/// dominated by round-off.
pub fn rel_vec_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-3);
    diff / norm
}

/// Every parameter of `model`, flattened.
pub fn flat(model: &Mlp) -> Vec<f64> {
    model.tensors().into_iter().flatten().copied().collect()
}

pub fn with_param(model: &Mlp, idx: usize, delta: f64) -> Mlp {
    let mut m = model.clone();
    let mut seen = 0;
    for t in m.tensors_mut() {
        if idx < seen + t.len() {
            t[idx - seen] += delta;
            break;
        }
        seen += t.len();
    }
    m
}

pub fn min_abs_pre(model: &Mlp, x: &[f64]) -> f64 {
    let (_, tape) = model.forward(x).unwrap();
    tape.pre_activations()
        .take(model.layers.len() - 1)
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(f64::INFINITY, f64::min)
}

fn central<F: Fn(&[f64]) -> f64>(f: F, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|j| {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += STEP;
            b[j] -= STEP;
            (f(&a) - f(&b)) / (2.0 * STEP)
        })
        .collect()
}

/// Parameter and input gradient errors of a random small network, or
/// `None` when some ReLU sits too close to its kink.
pub fn mlp_errors(rng: &mut ChaCha8Rng, layer_norm: bool) -> Option<(f64, f64)> {
    let mut model = Mlp::new(&[5, 8, 8, 3], layer_norm, rng);
    // move the output layer away from its tiny init so every path matters
    for v in model.layers.last_mut().unwrap().weight.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
    let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    if min_abs_pre(&model, &x) < 1e-3 {
        return None;
    }
    let loss = |m: &Mlp, x: &[f64]| -> f64 { m.predict(x).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum() };
    let (_, tape) = model.forward(&x).unwrap();
    let (grads, dx) = model.backward(&tape, &w);
    let analytic = flat(&grads);
    let numeric: Vec<f64> = (0..analytic.len())
        .map(|i| (loss(&with_param(&model, i, STEP), &x) - loss(&with_param(&model, i, -STEP), &x)) / (2.0 * STEP))
        .collect();
    let numeric_x = central(|x| loss(&model, x), &x);
    Some((rel_vec_err(&analytic, &numeric), rel_vec_err(&dx, &numeric_x)))
}

/// Which side of every kink the estimate sits on.
pub fn signature(est: &PrimalEstimate) -> Vec<u8> {
    let mut s: Vec<u8> = est.rhok.iter().flatten().map(|&b| b as u8).collect();
    let pos = |v: &f64| (*v > 0.0) as u8;
    s.extend(est.eta0.iter().map(pos));
    s.extend(est.eta_g.iter().flatten().map(pos));
    s.extend(est.eta_e.iter().flatten().map(pos));
    s
}

pub struct Point {
    pub inst: Instance,
    pub model: Mlp,
    pub lambda: Vec<f64>,
    pub rho: f64,
    pub tape: PrimalTape,
}

pub fn loss_at(net: &Network, p: &Point, z: &[f64]) -> (f64, Vec<u8>) {
    let est = pipeline::forward_frozen(net, &p.inst, z, &p.tape);
    let l = primal_loss(net, &p.inst, &est, &p.lambda, p.rho, 1e3);
    (l.value, signature(&est))
}

/// Draw a point where no kink lies within `10 STEP` of the raw output.
pub fn draw_point(net: &Network, rng: &mut ChaCha8Rng) -> Option<Point> {
    let cfg = PerturbationConfig::default();
    let (inst, _) = sampler::make_instance(net, &cfg, rng).ok()?;
    let mut model = Mlp::standard(net.input_dim(), net.case.n_gen(), true, rng);
    for v in model.layers.last_mut().unwrap().weight.iter_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    let m = net.contingencies.gen_contingencies.len();
    let lambda = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
    let (est, tape) = pipeline::primal_forward(net, &model, &inst, 25).ok()?;
    let p = Point {
        inst,
        model,
        lambda,
        rho: rng.random_range(0.1..10.0),
        tape,
    };
    let sig = signature(&est);
    let z = p.tape.raw.clone();
    for j in 0..z.len() {
        for h in [10.0 * STEP, -10.0 * STEP] {
            let mut zz = z.clone();
            zz[j] += h;
            if loss_at(net, &p, &zz).1 != sig {
                return None;
            }
        }
    }
    Some(p)
}

/// Raw-output gradient error through the downstream layers and, when a
/// sample of 12 parameters moves the loss, their end-to-end error.
pub fn pipeline_errors(net: &Network, p: &Point, rng: &mut ChaCha8Rng) -> (f64, Option<f64>) {
    let (est, _) = pipeline::primal_forward(net, &p.model, &p.inst, 25).unwrap();
    let lg = primal_loss(net, &p.inst, &est, &p.lambda, p.rho, 1e3);
    let dz = pipeline::backward_to_raw(net, &p.inst, &p.tape, &lg.dg, &lg.dgk);
    let numeric = central(|z| loss_at(net, p, z).0, &p.tape.raw);
    let raw_err = rel_vec_err(&dz, &numeric);

    let grads = pipeline::primal_backward(net, &p.model, &p.inst, &p.tape, &lg.dg, &lg.dgk);
    let analytic = flat(&grads);
    let through = |m: &Mlp| -> Option<f64> {
        if min_abs_pre(m, &p.inst.x) < 1e-4 {
            return None;
        }
        let z = m.predict(&p.inst.x).unwrap();
        Some(loss_at(net, p, &z).0)
    };
    let mut a_sel = Vec::new();
    let mut n_sel = Vec::new();
    for _ in 0..12 {
        let i = rng.random_range(0..analytic.len());
        if let (Some(up), Some(dn)) = (through(&with_param(&p.model, i, STEP)), through(&with_param(&p.model, i, -STEP))) {
            a_sel.push(analytic[i]);
            n_sel.push((up - dn) / (2.0 * STEP));
        }
    }
    let param_err = n_sel.iter().any(|v| *v != 0.0).then(|| rel_vec_err(&a_sel, &n_sel));
    (raw_err, param_err)
}
