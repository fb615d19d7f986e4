//! Batch study runner and plotter for P-Q flexibility areas.
//!
//! The binary front-end lives in `main.rs`; the modules here are exposed so
//! that integration tests can drive runs and renders in-process.

pub mod config;
pub mod plot;
pub mod run;
