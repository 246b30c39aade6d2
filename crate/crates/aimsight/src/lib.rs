//! Std companion of `aimsight-core`: file formats, parallel experiment
//! runs, live websocket sessions and the `aimsight` command line.

pub mod config;
pub mod observations;
pub mod protocol;
pub mod realtime;
pub mod runner;
pub mod server;
pub mod trial_log;

pub use aimsight_core as core;
