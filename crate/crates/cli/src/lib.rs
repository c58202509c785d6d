//! Experiment runner for the bemps engine: config files, run orchestration,
//! comparison reports and the built-in verification suites.

pub mod compare;
pub mod config;
pub mod gen_family;
pub mod manifest;
pub mod run;
pub mod verify;
