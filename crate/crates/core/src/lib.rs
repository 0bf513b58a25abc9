//! Dyadic generative agent-based modeling: factorial vignette experiments
//! run against LLM agents, with surface-level and process-level validation
//! against a human reference group.

// Guards like `!(x > 0.0)` are written to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod dataset;
pub mod design;
pub mod error;
pub mod gateway;
pub mod money;
pub mod paths;
pub mod pipeline;
pub mod stats;
pub mod validation;
pub mod vignette;

pub use error::{Error, Result};
pub use money::Cents;
