//! Input reprogramming of a frozen multi-task gait model: a foundation TCN
//! trained on able-bodied data, correction templates searched in its
//! input-output space, and a refurbish module that maps amputee inputs onto
//! them.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod foundation;
pub mod nn;
pub mod persist;
pub mod pipeline;
pub mod refurbish;
pub mod template;

pub use error::{Error, Result};
