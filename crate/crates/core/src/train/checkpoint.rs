//! Checkpoint files.
//!
//! A checkpoint is one JSON document:
//!
//! ```text
//! {
//!   "magic": "pdl-scopf/checkpoint",
//!   "version": 1,
//!   "case_hash": "<sha256 of the case>",
//!   "method": "pdl" | "penalty" | "naive" | "ld",
//!   "config": { TrainerConfig },
//!   "primal": Mlp, "primal_opt": Adam,
//!   "dual": Mlp | null, "dual_opt": Adam | null,
//!   "state": { "rho", "v_prev" (null = +inf), "outer", "step", "frozen_dual" },
//!   "history": [ { "k", "rho", "v_k", "mean_objective" } ]
//! }
//! ```
//!
//! An `Mlp` is `{ "layers": [ { "inputs", "outputs", "weight", "bias",
//! "norm": { "gain", "offset" } | null } ] }` with `weight` row-major
//! (`outputs` rows of `inputs`). An `Adam` holds `beta1`, `beta2`, `eps`,
//! `step` and the moment estimates `m`, `v` in the same layout as the
//! parameters.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Method, OuterRecord, Trainer, TrainerConfig, TrainerState};
use crate::error::{Error, Result};
use crate::grid::Network;
use crate::nn::{Adam, Mlp};

pub const MAGIC: &str = "pdl-scopf/checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub magic: String,
    pub version: u32,
    pub case_hash: String,
    pub method: Method,
    pub config: TrainerConfig,
    pub primal: Mlp,
    pub primal_opt: Adam,
    pub dual: Option<Mlp>,
    pub dual_opt: Option<Adam>,
    pub state: TrainerState,
    pub history: Vec<OuterRecord>,
}

impl Checkpoint {
    pub fn from_trainer(trainer: &Trainer<'_>, net: &Network) -> Self {
        Self {
            magic: MAGIC.into(),
            version: VERSION,
            case_hash: net.case.content_hash(),
            method: trainer.method,
            config: trainer.config.clone(),
            primal: trainer.primal.clone(),
            primal_opt: trainer.primal_opt.clone(),
            dual: trainer.dual.clone(),
            dual_opt: trainer.dual_opt.clone(),
            state: trainer.state.clone(),
            history: trainer.history.clone(),
        }
    }

    /// Check the primal network fits `net`.
    pub fn check_network(&self, net: &Network) -> Result<()> {
        let dim = net.input_dim();
        if self.primal.input_dim() != dim {
            return Err(Error::Dimension {
                what: "checkpoint input dimension",
                expected: dim,
                actual: self.primal.input_dim(),
            });
        }
        if self.primal.output_dim() != net.case.n_gen() {
            return Err(Error::Dimension {
                what: "checkpoint output dimension",
                expected: net.case.n_gen(),
                actual: self.primal.output_dim(),
            });
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        if ck.magic != MAGIC {
            return Err(Error::Data(format!("not a checkpoint file (magic {:?})", ck.magic)));
        }
        if ck.version != VERSION {
            return Err(Error::Data(format!("unsupported checkpoint version {}", ck.version)));
        }
        if !ck.primal_opt.matches(&ck.primal) {
            return Err(Error::Data("primal optimizer state does not match the network".into()));
        }
        if let (Some(d), Some(o)) = (&ck.dual, &ck.dual_opt) {
            if !o.matches(d) {
                return Err(Error::Data("dual optimizer state does not match the network".into()));
            }
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }
}
