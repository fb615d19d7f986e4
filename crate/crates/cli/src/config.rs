//! Study configuration: a single JSON document describing the experiment
//! grid, plus command-line overrides.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use lvflex::netmodel::Phase;
use lvflex::opf::{Coordination, CoordinationMode};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub case_path: PathBuf,
    pub output_dir: PathBuf,
    pub studies: Vec<Study>,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Study {
    pub name: String,
    pub ref_bus: String,
    /// One or more of `a` / `b` / `c`.
    pub ref_phases: Vec<String>,
    pub k: usize,
    /// VUF limits in percent; omitted or empty means unconstrained only.
    #[serde(default)]
    pub vuf_limits: Option<Vec<f64>>,
    /// `full` or `phase_restricted`.
    pub coordination: String,
    /// `per_unit_zero` (default) or `aggregate_zero`.
    #[serde(default)]
    pub coordination_mode: Option<String>,
    /// Name of the study whose cells serve as the 100% reference.
    #[serde(default)]
    pub compare_to: Option<String>,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    pub n: usize,
    pub seed: u64,
}

pub fn parse_phase(s: &str) -> Result<Phase, String> {
    match s.to_ascii_lowercase().as_str() {
        "a" => Ok(Phase::A),
        "b" => Ok(Phase::B),
        "c" => Ok(Phase::C),
        other => Err(format!("unknown phase {other:?} (expected a, b or c)")),
    }
}

pub fn parse_coordination(s: &str) -> Result<Coordination, String> {
    match s {
        "full" => Ok(Coordination::Full),
        "phase_restricted" => Ok(Coordination::PhaseRestricted),
        other => Err(format!(
            "unknown coordination {other:?} (expected full or phase_restricted)"
        )),
    }
}

pub fn parse_coordination_mode(s: &str) -> Result<CoordinationMode, String> {
    match s {
        "per_unit_zero" => Ok(CoordinationMode::PerUnitZero),
        "aggregate_zero" => Ok(CoordinationMode::AggregateZero),
        other => Err(format!(
            "unknown coordination_mode {other:?} (expected per_unit_zero or aggregate_zero)"
        )),
    }
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<StudyConfig, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let config: StudyConfig =
            serde_json::from_str(&text).map_err(|e| format!("config parse error: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.studies.is_empty() {
            return Err("no studies defined".into());
        }
        let mut names = HashSet::new();
        for study in &self.studies {
            if !names.insert(study.name.as_str()) {
                return Err(format!("duplicate study name {:?}", study.name));
            }
            if study.k < 2 {
                return Err(format!("study {:?}: k must be at least 2", study.name));
            }
            if study.ref_phases.is_empty() {
                return Err(format!("study {:?}: no reference phases", study.name));
            }
            for phase in &study.ref_phases {
                parse_phase(phase).map_err(|e| format!("study {:?}: {e}", study.name))?;
            }
            parse_coordination(&study.coordination)
                .map_err(|e| format!("study {:?}: {e}", study.name))?;
            if let Some(mode) = &study.coordination_mode {
                parse_coordination_mode(mode).map_err(|e| format!("study {:?}: {e}", study.name))?;
            }
            if let Some(limits) = &study.vuf_limits {
                if limits.iter().any(|&l| !(l > 0.0)) {
                    return Err(format!("study {:?}: VUF limits must be positive", study.name));
                }
            }
        }
        for study in &self.studies {
            if let Some(other) = &study.compare_to {
                if !self.studies.iter().any(|s| &s.name == other) {
                    return Err(format!(
                        "study {:?}: compare_to {:?} does not exist",
                        study.name, other
                    ));
                }
            }
        }
        if let Some(oracle) = &self.oracle {
            if oracle.n == 0 {
                return Err("oracle.n must be positive".into());
            }
        }
        Ok(())
    }
}
