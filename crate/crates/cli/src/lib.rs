//! Library surface of the `fishy` CLI: pipeline configuration, the
//! command implementations, and the artifact formats they exchange.
//! `main.rs` is a thin argument-parsing wrapper over these functions, so
//! integration tests drive the same code paths the binary does.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;

pub use commands::{
    cmd_embed, cmd_evaluate, cmd_fit_combiner, cmd_generate, cmd_report, cmd_score,
    cmd_train_encoder, cmd_train_flow, Method,
};
pub use config::PipelineConfig;
pub use error::{CliError, CliResult};
