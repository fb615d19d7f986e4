//! Aggregated P-Q flexibility areas of three-phase unbalanced LV distribution
//! networks.
//!
//! The crate is organised around a pipeline:
//!
//! * [`netmodel`] — case files, per-unit conversion, structural validation;
//! * [`powerflow`] — bus-injection power-flow equations, a Newton solver,
//!   symmetrical components and voltage unbalance factors;
//! * [`opf`] — the nonlinear flexibility-estimation program and its
//!   interior-point solver;
//! * [`flexmap`] — ε-constraint boundary tracing, polygon areas, the
//!   Minkowski upper bound;
//! * [`oracle`] — brute-force Monte Carlo validation of traced boundaries.

pub mod error;

pub mod netmodel;


pub mod powerflow;

pub mod opf;

pub mod flexmap;

pub mod oracle;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
