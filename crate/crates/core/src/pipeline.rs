//! The primal network composed end-to-end:
//! MLP → bound map → repair → binary search → slacks.

use crate::error::Result;
use crate::grid::Network;
use crate::layers::{self, BoundMapTape, ContingencyResponse, RepairTape};
use crate::nn::{Mlp, MlpTape};
use crate::par;
use crate::sampler::Instance;
use crate::scopf::{self, PrimalEstimate};

const PAR_CONTINGENCY_MIN: usize = 32;

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct PrimalTape {
    pub mlp: Option<MlpTape>,
    pub raw: Vec<f64>,
    pub bound: BoundMapTape,
    pub repair: RepairTape,
    pub responses: Vec<ContingencyResponse>,
}

/// Run the layers downstream of the network on raw output `z`.
pub fn forward_from_raw(
    net: &Network,
    inst: &Instance,
    z: &[f64],
    iterations: usize,
) -> (PrimalEstimate, PrimalTape) {
    let glb = &net.case.glb;
    let (gcheck, bound) = layers::bound_map(z, glb, &inst.gub);
    let (g, repair) = layers::repair_layer(&gcheck, inst.d_total, glb, &inst.gub);
    let kg = &net.contingencies.gen_contingencies;
    let responses = par::map_range(kg.len(), PAR_CONTINGENCY_MIN, |j| {
        layers::binary_search_layer(&g, inst.d_total, kg[j], &inst.droop, &inst.gub, iterations)
            .expect("iterations checked")
    });
    let est = scopf::estimate_from_responses(net, inst, &g, responses.clone());
    (
        est,
        PrimalTape {
            mlp: None,
            raw: z.to_vec(),
            bound,
            repair,
            responses,
        },
    )
}

/// Full primal forward pass for one instance.
pub fn primal_forward(
    net: &Network,
    model: &Mlp,
    inst: &Instance,
    iterations: usize,
) -> Result<(PrimalEstimate, PrimalTape)> {
    if iterations < 1 {
        return Err(crate::Error::Parameter(
            "binary search needs at least one iteration".into(),
        ));
    }
    let (z, mlp_tape) = model.forward(&inst.x)?;
    let (est, mut tape) = forward_from_raw(net, inst, &z, iterations);
    tape.mlp = Some(mlp_tape);
    Ok((est, tape))
}

/// Base dispatch only (bound map and repair), for inference paths that
/// do not need contingency quantities.
pub fn base_dispatch(net: &Network, model: &Mlp, inst: &Instance) -> Result<Vec<f64>> {
    let z = model.predict(&inst.x)?;
    let glb = &net.case.glb;
    let (gcheck, _) = layers::bound_map(&z, glb, &inst.gub);
    Ok(layers::repair_layer(&gcheck, inst.d_total, glb, &inst.gub).0)
}

/// Re-evaluate the downstream layers at `z` with the repair branch and
/// every contingency signal frozen to the values recorded in `tape`.
///
/// This is the function whose exact derivative [`backward_to_raw`] computes.
pub fn forward_frozen(net: &Network, inst: &Instance, z: &[f64], tape: &PrimalTape) -> PrimalEstimate {
    let glb = &net.case.glb;
    let (gcheck, _) = layers::bound_map(z, glb, &inst.gub);
    let (g, _) = layers::repair_with_branch(&gcheck, inst.d_total, glb, &inst.gub, tape.repair.branch);
    let responses = tape
        .responses
        .iter()
        .map(|r| {
            let (gk, rho) = scopf::apr_response(&g, r.n, r.k, &inst.droop, &inst.gub);
            let residual = gk.iter().sum::<f64>() - inst.d_total;
            ContingencyResponse {
                k: r.k,
                gk,
                n: r.n,
                rho,
                residual,
            }
        })
        .collect();
    scopf::estimate_from_responses(net, inst, &g, responses)
}

/// Pull `∂L/∂g̃` and `∂L/∂g_k` back to the raw network output.
pub fn backward_to_raw(
    net: &Network,
    inst: &Instance,
    tape: &PrimalTape,
    dg: &[f64],
    dgk: &[Vec<f64>],
) -> Vec<f64> {
    let glb = &net.case.glb;
    let mut total = dg.to_vec();
    for (resp, d) in tape.responses.iter().zip(dgk) {
        layers::binary_search_backward(resp, d, &mut total);
    }
    let dcheck = layers::repair_backward(&tape.repair, inst.d_total, glb, &inst.gub, &total);
    layers::bound_map_backward(&tape.bound, glb, &inst.gub, &dcheck)
}

/// Parameter gradients of the primal network.
pub fn primal_backward(
    net: &Network,
    model: &Mlp,
    inst: &Instance,
    tape: &PrimalTape,
    dg: &[f64],
    dgk: &[Vec<f64>],
) -> Mlp {
    let dz = backward_to_raw(net, inst, tape, dg, dgk);
    let mlp_tape = tape.mlp.as_ref().expect("tape from primal_forward");
    model.backward(mlp_tape, &dz).0
}
