//! Experiment runner around the core library.
//!
//! Three subcommands: `ingest` parses a dataset source and caches it with
//! printed statistics, `train` runs a hyperparameter grid across seeds and
//! training regimes with resumable, deterministic trial logs, and `report`
//! recomputes summary tables and analysis artifacts from those logs.

pub mod config;
pub mod report;
pub mod runner;

/// Exit codes: 0 success, 1 internal error, 2 usage/config error.
pub fn exit_code_for(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<gnnlab_core::Error>() {
        Some(gnnlab_core::Error::Config(_)) => 2,
        Some(gnnlab_core::Error::Io { .. }) => 2,
        _ => 1,
    }
}
