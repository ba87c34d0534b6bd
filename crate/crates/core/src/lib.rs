//! Learned solvers for preventive DC security-constrained optimal power flow.
//!
//! The crate is organized bottom-up:
//!
//! - [`grid`]: network description, PTDF/LODF sensitivity factors and
//!   contingency screening.
//! - [`sampler`] and [`dataset`]: instance generation and on-disk datasets.
//! - [`scopf`]: evaluators for the objective, automatic primary response,
//!   thermal slacks and the contingency power-balance residuals.
//! - [`layers`]: the differentiable stages of the primal network (bound
//!   map, balance repair, binary-search response).
//! - [`nn`]: a small dense network kernel with reverse-mode gradients and Adam.
//! - [`pipeline`]: the primal network composed end-to-end, with backward pass.
//! - [`train`]: primal-dual learning and the penalty / supervised baselines.
//! - [`oracle`]: an exhaustive reference solver for micro cases.
//! - [`eval`]: evaluation reports.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod grid;
pub mod layers;
pub mod nn;
pub mod oracle;
pub mod par;
pub mod pipeline;
pub mod sampler;
pub mod scopf;
pub mod train;

pub use error::{Error, Result};
pub use grid::{ContingencySet, GridCase, LinearFactors, Network};
pub use sampler::{Instance, PerturbationConfig};
pub use scopf::PrimalEstimate;
