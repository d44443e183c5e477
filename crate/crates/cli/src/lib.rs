//! Command-line front end: experiment configuration, training pipeline, run
//! manifests, and the subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;
