//! Crate error types.

use crate::netmodel::Violation;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("validation error: {0}")]
    Validation(Violation),

    #[error("non-positive base: base_mva = {base_mva}, base_kv = {base_kv}")]
    NonPositiveBase { base_mva: f64, base_kv: f64 },

    #[error("power flow did not converge after {iterations} iterations (residual {residual:.3e})")]
    PowerFlowDiverged { iterations: usize, residual: f64 },

    #[error("singular Jacobian at power flow iteration {iteration}")]
    SingularJacobian { iteration: usize },

    #[error("positive-sequence voltage magnitude {v1:.3e} below guard; VUF undefined")]
    UndefinedVuf { v1: f64 },

    #[error("reference phase {phase} not present at reference bus {bus}")]
    RefPhaseAbsent { bus: String, phase: char },

    #[error("VUF limit set but the case monitors no buses")]
    NoMonitoredBuses,

    #[error("degenerate boundary: only {} feasible points", points.len())]
    DegenerateBoundary {
        /// The feasible (P, Q) points found, in kW / kVAr.
        points: Vec<(f64, f64)>,
    },

    #[error("polygon has fewer than 3 points")]
    PolygonTooSmall,

    #[error("self-intersecting polygon ordering")]
    SelfIntersecting,

    #[error("non-positive base area {0}")]
    NonPositiveBaseArea(f64),

    #[error("invalid request: {0}")]
    InvalidRequest(String),
}
