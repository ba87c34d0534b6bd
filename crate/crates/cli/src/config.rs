//! Run configuration: a TOML file whose keys any command-line flag overrides.
//!
//! ```toml
//! case = "crates/core/cases/bus5.json"
//! method = "pdl"
//! out_dir = "runs/pdl"
//! seed = 0
//! train_size = 500
//! test_size = 100
//!
//! [trainer]
//! outer_iters = 10
//! inner_iters = 200
//!
//! [perturbation]
//! mu = 0.5
//! ```

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use pdl_scopf::train::TrainerConfig;
use pdl_scopf::PerturbationConfig;

use crate::TrainArgs;

/// Invalid configuration (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub case: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    pub method: String,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub train_size: usize,
    pub test_size: usize,
    pub trainer: TrainerConfig,
    pub perturbation: PerturbationConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            case: None,
            dataset: None,
            method: "pdl".into(),
            out_dir: PathBuf::from("run"),
            seed: 0,
            train_size: 500,
            test_size: 0,
            trainer: TrainerConfig::default(),
            perturbation: PerturbationConfig::default(),
        }
    }
}

macro_rules! override_keys {
    ($args:expr, $target:expr, $($key:ident),+) => {
        $(if let Some(v) = $args.$key.clone() {
            $target.$key = v;
        })+
    };
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError(format!("invalid run configuration: {e}")))
    }

    pub fn to_toml(&self) -> Result<String, ConfigError> {
        toml::to_string(self).map_err(|e| ConfigError(format!("cannot serialize configuration: {e}")))
    }

    /// Config file (if any) with every given flag applied on top.
    pub fn resolve(args: &TrainArgs) -> Result<Self, ConfigError> {
        let mut run = match &args.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| ConfigError(format!("cannot read {}: {e}", p.display())))?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        if let Some(v) = &args.case {
            run.case = Some(v.clone());
        }
        if let Some(v) = &args.dataset {
            run.dataset = Some(v.clone());
        }
        override_keys!(args, run, method, out_dir, seed, train_size, test_size);
        override_keys!(
            args,
            run.trainer,
            outer_iters,
            inner_iters,
            batch,
            lr,
            rho0,
            rho_max,
            tau,
            alpha,
            dual_loss_rho,
            obj_scale,
            ld_rho,
            bs_iterations
        );
        run.validate()?;
        Ok(run)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: pdl_scopf::Error| ConfigError(e.to_string());
        self.method
            .parse::<pdl_scopf::train::Method>()
            .map_err(invalid)?;
        self.trainer.validate().map_err(invalid)?;
        self.perturbation.validate().map_err(invalid)?;
        if self.dataset.is_none() && self.train_size == 0 {
            return Err(ConfigError("train_size must be at least 1".into()));
        }
        Ok(())
    }
}
