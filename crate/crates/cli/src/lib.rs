//! Library face of the CLI: config schema and the experiment runner the
//! binary and the integration tests share.

pub mod config;
pub mod runner;
