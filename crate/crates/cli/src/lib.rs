//! Library side of the `narrate` command: config loading, inputs and commands.

pub mod commands;
pub mod config;
pub mod inputs;

pub use commands::{cmd_annotate, cmd_report, cmd_run, cmd_simgen, cmd_synth, Overrides, Report, RunArgs, RunSummary, SynthArgs};
pub use config::HarnessConfig;
