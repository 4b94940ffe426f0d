//! Configuration, orchestration and report emission for the `parasys` binary.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod emit;
pub mod pipeline;

pub use config::RunConfig;
pub use emit::emit;
pub use pipeline::{run, RunOutput, RunReport};
