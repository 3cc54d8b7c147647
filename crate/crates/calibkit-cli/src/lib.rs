//! File I/O, configuration, and command implementations behind the
//! `calibkit` binary. Exposed as a library so integration tests can drive
//! the commands in-process.

pub mod commands;
pub mod config;
pub mod ply;
pub mod report;
pub mod scenario;

pub use commands::{cmd_calibrate_pair, cmd_run_session, cmd_simulate, Outcome};
