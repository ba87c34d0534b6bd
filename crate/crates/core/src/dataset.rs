//! Dataset files.
//!
//! A dataset is a single JSON document:
//!
//! ```text
//! {
//!   "magic": "pdl-scopf/dataset",
//!   "version": 1,
//!   "manifest": { "case_hash", "config", "config_hash", "count", "resamples" },
//!   "records": [
//!     { "index", "seed", "d": [..], "c": [..], "gub": [..],
//!       "label": null
//!              | { "status": "solved", "g_star", "obj_star", "tol_certificate", "evals" }
//!              | { "status": "infeasible", "reason" } }
//!   ]
//! }
//! ```
//!
//! Floats are written in shortest round-trip form, so a dataset regenerated
//! from the same case, config and seed is byte-identical.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{hex_digest, Network};
use crate::sampler::{self, Instance, PerturbationConfig};

pub const MAGIC: &str = "pdl-scopf/dataset";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub case_hash: String,
    pub config: PerturbationConfig,
    pub config_hash: String,
    pub count: usize,
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Label {
    Solved {
        g_star: Vec<f64>,
        obj_star: f64,
        tol_certificate: f64,
        evals: u64,
    },
    Infeasible {
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub index: u64,
    /// Base seed; the record was drawn from stream `index` of it.
    pub seed: u64,
    pub d: Vec<f64>,
    pub c: Vec<f64>,
    pub gub: Vec<f64>,
    #[serde(default)]
    pub label: Option<Label>,
}

impl Record {
    pub fn from_instance(index: u64, seed: u64, inst: &Instance) -> Self {
        Self {
            index,
            seed,
            d: inst.d.clone(),
            c: inst.c.clone(),
            gub: inst.gub.clone(),
            label: None,
        }
    }

    pub fn instance(&self, net: &Network) -> Result<Instance> {
        Instance::new(net, self.d.clone(), self.c.clone(), self.gub.clone())
    }

    /// The oracle dispatch and objective, if solved.
    pub fn solution(&self) -> Option<(&[f64], f64)> {
        match &self.label {
            Some(Label::Solved {
                g_star, obj_star, ..
            }) => Some((g_star.as_slice(), *obj_star)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub magic: String,
    pub version: u32,
    pub manifest: Manifest,
    pub records: Vec<Record>,
}

impl Dataset {
    /// Sample `n` instances for `net`.
    pub fn generate(net: &Network, config: &PerturbationConfig, n: usize) -> Result<Self> {
        let sampled = sampler::generate(net, config, n)?;
        let records = sampled
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| Record::from_instance(i as u64, config.seed, inst))
            .collect();
        let config_json = serde_json::to_vec(config)?;
        Ok(Self {
            magic: MAGIC.into(),
            version: VERSION,
            manifest: Manifest {
                case_hash: net.case.content_hash(),
                config: *config,
                config_hash: hex_digest(&config_json),
                count: n,
                resamples: sampled.resamples,
            },
            records,
        })
    }

    pub fn instances(&self, net: &Network) -> Result<Vec<Instance>> {
        self.records.iter().map(|r| r.instance(net)).collect()
    }

    pub fn is_labeled(&self) -> bool {
        !self.records.is_empty() && self.records.iter().all(|r| r.label.is_some())
    }

    /// Check the dataset was generated for `net`.
    pub fn check_network(&self, net: &Network) -> Result<()> {
        let (ng, nl) = (net.case.n_gen(), net.case.n_load());
        for r in &self.records {
            if r.c.len() != ng || r.gub.len() != ng {
                return Err(Error::Dimension {
                    what: "dataset generator fields",
                    expected: ng,
                    actual: r.c.len(),
                });
            }
            if r.d.len() != nl {
                return Err(Error::Dimension {
                    what: "dataset load field",
                    expected: nl,
                    actual: r.d.len(),
                });
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut bytes = serde_json::to_vec(self)?;
        bytes.push(b'\n');
        Ok(bytes)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let ds: Dataset = serde_json::from_slice(bytes)?;
        if ds.magic != MAGIC {
            return Err(Error::Data(format!("not a dataset file (magic {:?})", ds.magic)));
        }
        if ds.version != VERSION {
            return Err(Error::Data(format!("unsupported dataset version {}", ds.version)));
        }
        Ok(ds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read(path)?)
    }
}
