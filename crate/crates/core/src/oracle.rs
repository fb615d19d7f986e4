//! Brute-force validation of traced flexibility boundaries.
//!
//! Flexible setpoints are sampled inside their capability boxes, pushed
//! through the independent Newton power flow, and checked against the
//! operational limits using only `powerflow` routines — no code is shared
//! with the NLP constraint evaluation beyond the type layer. Every feasible
//! sample maps to a reference-bus (P, Q) point that must fall inside the
//! traced polygon up to a small tolerance.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use crate::flexmap::{signed_distance, FlexBoundary};
use crate::netmodel::{FlexUnit, NetworkCase, NetworkIndex, Phase};
use crate::opf::{build::participates, Coordination, CoordinationMode, ScenarioConfig};
use crate::powerflow::{solve_newton, NewtonOptions, Setpoints};
use crate::{Error, Result};

/// Outcome of a sampling run and (optionally) a boundary verification.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub samples_total: usize,
    pub samples_feasible: usize,
    /// Reference-bus (P, Q) of every feasible sample, kW / kVAr.
    pub points: Vec<(f64, f64)>,
    /// Reference-bus (P, Q) of converged but constraint-violating samples.
    pub rejected_points: Vec<(f64, f64)>,
    /// Largest distance (kVA) of a feasible sample outside the verified
    /// polygon; zero until [`verify_boundary`] runs.
    pub max_outside_distance: f64,
    /// Violation counts by constraint family (each sample counted at most
    /// once per family); non-converged power flows appear as "divergence".
    pub violated_constraint_histogram: BTreeMap<String, usize>,
}

impl OracleReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&json!({
            "samples_total": self.samples_total,
            "samples_feasible": self.samples_feasible,
            "max_outside_distance_kva": self.max_outside_distance,
            "violated_constraint_histogram": self.violated_constraint_histogram,
            "points": self.points,
        }))
        .unwrap()
    }

    /// `P_kW,Q_kVAr,feasible` rows over the recorded sample cloud.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("P_kW,Q_kVAr,feasible\n");
        for &(p, q) in &self.points {
            out.push_str(&format!("{p:.6},{q:.6},true\n"));
        }
        for &(p, q) in &self.rejected_points {
            out.push_str(&format!("{p:.6},{q:.6},false\n"));
        }
        out
    }
}

/// One sampled setpoint per flexible unit and phase, per-unit.
type Sample = Vec<[(f64, f64); 3]>;

struct Sampler<'a> {
    case: &'a NetworkCase,
    ref_phase: Phase,
    scenario: &'a ScenarioConfig,
}

impl Sampler<'_> {
    fn unit_moves(&self, unit: &FlexUnit) -> bool {
        participates(unit, self.ref_phase, self.scenario)
    }

    fn aggregate_zero(&self) -> bool {
        self.scenario.coordination == Coordination::PhaseRestricted
            && self.scenario.coordination_mode == CoordinationMode::AggregateZero
    }

    /// Uniform draw inside the boxes; `corner` snaps every coordinate to a
    /// random box vertex instead, generating boundary-adjacent evidence.
    fn draw(&self, rng: &mut ChaCha8Rng, corner: bool) -> Sample {
        let mut sample: Sample = self
            .case
            .flex_units
            .iter()
            .map(|_| [(0.0, 0.0); 3])
            .collect();
        for (u, unit) in self.case.flex_units.iter().enumerate() {
            if !self.unit_moves(unit) {
                continue;
            }
            let mut pick = |lo: f64, hi: f64| -> f64 {
                if corner {
                    if rng.gen::<bool>() {
                        hi
                    } else {
                        lo
                    }
                } else if hi > lo {
                    rng.gen_range(lo..=hi)
                } else {
                    lo
                }
            };
            if unit.balanced {
                let phase = unit.phases.iter().next().expect("unit has phases");
                let p = pick(
                    unit.p_min.get(phase).unwrap_or(0.0),
                    unit.p_max.get(phase).unwrap_or(0.0),
                );
                let q = pick(
                    unit.q_min.get(phase).unwrap_or(0.0),
                    unit.q_max.get(phase).unwrap_or(0.0),
                );
                for phase in unit.phases.iter() {
                    sample[u][phase.index()] = (p, q);
                }
            } else {
                for phase in unit.phases.iter() {
                    let p = pick(
                        unit.p_min.get(phase).unwrap_or(0.0),
                        unit.p_max.get(phase).unwrap_or(0.0),
                    );
                    let q = pick(
                        unit.q_min.get(phase).unwrap_or(0.0),
                        unit.q_max.get(phase).unwrap_or(0.0),
                    );
                    sample[u][phase.index()] = (p, q);
                }
            }
        }
        if self.aggregate_zero() {
            self.project_zero_sum(&mut sample);
        }
        sample
    }

    /// Shifts each non-reference phase of the fleet so its total P and Q
    /// vanish, honouring the aggregate zero-sum coordination rows. Samples
    /// whose shift leaves a box are clamped; the caller re-checks the sums.
    fn project_zero_sum(&self, sample: &mut Sample) {
        for phase in Phase::ALL {
            if phase == self.ref_phase {
                continue;
            }
            let movers: Vec<usize> = self
                .case
                .flex_units
                .iter()
                .enumerate()
                .filter(|(_, u)| self.unit_moves(u) && u.phases.contains(phase) && !u.balanced)
                .map(|(u, _)| u)
                .collect();
            if movers.is_empty() {
                continue;
            }
            let n = movers.len() as f64;
            let (mut sp, mut sq) = (0.0, 0.0);
            for &u in &movers {
                sp += sample[u][phase.index()].0;
                sq += sample[u][phase.index()].1;
            }
            for &u in &movers {
                let unit = &self.case.flex_units[u];
                let (p, q) = sample[u][phase.index()];
                let p = (p - sp / n).clamp(
                    unit.p_min.get(phase).unwrap_or(0.0),
                    unit.p_max.get(phase).unwrap_or(0.0),
                );
                let q = (q - sq / n).clamp(
                    unit.q_min.get(phase).unwrap_or(0.0),
                    unit.q_max.get(phase).unwrap_or(0.0),
                );
                sample[u][phase.index()] = (p, q);
            }
        }
    }

    /// True when the aggregate zero-sum rows hold (trivially true otherwise).
    fn zero_sum_holds(&self, sample: &Sample) -> bool {
        if !self.aggregate_zero() {
            return true;
        }
        for phase in Phase::ALL {
            if phase == self.ref_phase {
                continue;
            }
            let (mut sp, mut sq) = (0.0, 0.0);
            for (u, unit) in self.case.flex_units.iter().enumerate() {
                if unit.phases.contains(phase) && !unit.balanced {
                    sp += sample[u][phase.index()].0;
                    sq += sample[u][phase.index()].1;
                }
            }
            if sp.abs() > 1e-9 || sq.abs() > 1e-9 {
                return false;
            }
        }
        true
    }
}

/// Samples `n` uniform setpoint vectors (plus a corner-enriched batch of the
/// same seed-determined size) and records the reference-bus (P, Q) of every
/// sample that converges and satisfies all operational limits.
pub fn sample_feasible(
    case: &NetworkCase,
    ref_phase: Phase,
    scenario: &ScenarioConfig,
    n: usize,
    seed: u64,
) -> Result<OracleReport> {
    if n == 0 {
        return Err(Error::InvalidRequest("sample count must be positive".into()));
    }
    let index = NetworkIndex::new(case);
    let ref_bus = index.ref_bus();
    if !case.buses[ref_bus].phases.contains(ref_phase) {
        return Err(Error::RefPhaseAbsent {
            bus: case.buses[ref_bus].id.clone(),
            phase: ref_phase.letter(),
        });
    }
    let sampler = Sampler {
        case,
        ref_phase,
        scenario,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Corner enrichment: extreme points generate boundary-adjacent evidence.
    let n_corner = (n / 4).min(256);
    let base = 1e3 * case.base_mva;
    let newton = NewtonOptions::default();
    let mut report = OracleReport {
        samples_total: 0,
        samples_feasible: 0,
        points: Vec::new(),
        rejected_points: Vec::new(),
        max_outside_distance: 0.0,
        violated_constraint_histogram: BTreeMap::new(),
    };
    for i in 0..n + n_corner {
        let sample = sampler.draw(&mut rng, i < n_corner);
        report.samples_total += 1;
        let mut violated: Vec<&'static str> = Vec::new();
        if !sampler.zero_sum_holds(&sample) {
            violated.push("coordination");
        }
        let mut sp = Setpoints::from_loads(case, &index);
        for (u, unit) in case.flex_units.iter().enumerate() {
            let bus = index.bus_index(&unit.bus).expect("validated case");
            for phase in unit.phases.iter() {
                let node = index.node(bus, phase).expect("validated case");
                let (p, q) = sample[u][phase.index()];
                sp.add(node, p, q);
            }
        }
        let state = match solve_newton(case, &index, &sp, &newton) {
            Ok(state) => state,
            Err(_) => {
                *report
                    .violated_constraint_histogram
                    .entry("divergence".into())
                    .or_insert(0) += 1;
                continue;
            }
        };
        // Voltage magnitude limits.
        let (mut lower, mut upper) = (false, false);
        for (bi, bus) in case.buses.iter().enumerate() {
            if bi == ref_bus {
                continue;
            }
            for phase in bus.phases.iter() {
                let vm = state.voltage(&index, bi, phase).unwrap().norm();
                lower |= vm < bus.v_min - 1e-9;
                upper |= vm > bus.v_max + 1e-9;
            }
        }
        if lower {
            violated.push("voltage_lower");
        }
        if upper {
            violated.push("voltage_upper");
        }
        // Thermal line ratings, both ends.
        let mut thermal = false;
        for rl in index.resolved_lines() {
            if let Some(s_max) = &case.lines[rl.line].s_max {
                for side in 0..2 {
                    for phase in Phase::ALL {
                        let s = state.s_branch[rl.line][side][phase.index()].norm();
                        thermal |= s > s_max[phase.index()] + 1e-9;
                    }
                }
            }
        }
        if thermal {
            violated.push("thermal");
        }
        // Voltage unbalance at the monitored buses.
        if let Some(limit) = scenario.vuf_limit {
            let mut unbalanced = false;
            for &bus in index.monitored() {
                match state.vuf_at(&index, bus) {
                    Ok(vuf) => unbalanced |= vuf > limit + 1e-9,
                    Err(_) => unbalanced = true,
                }
            }
            if unbalanced {
                violated.push("vuf");
            }
        }
        let s = state.injection(&index, ref_bus, ref_phase).unwrap();
        let point = (s.re * base, s.im * base);
        if violated.is_empty() {
            report.samples_feasible += 1;
            report.points.push(point);
        } else {
            report.rejected_points.push(point);
            for family in violated {
                *report
                    .violated_constraint_histogram
                    .entry(family.into())
                    .or_insert(0) += 1;
            }
        }
    }
    Ok(report)
}

/// Fills `max_outside_distance`: the largest positive signed distance of a
/// feasible sample to the boundary polygon, in kVA.
pub fn verify_boundary(boundary: &FlexBoundary, mut report: OracleReport) -> Result<OracleReport> {
    let polygon = boundary.polygon();
    if polygon.len() < 3 {
        return Err(Error::PolygonTooSmall);
    }
    report.max_outside_distance = report
        .points
        .iter()
        .map(|&p| signed_distance(&polygon, p).max(0.0))
        .fold(0.0, f64::max);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flexmap::{self, FlexAreaRequest};
    use crate::netmodel;
    use crate::opf::Axis;

    fn fixture(name: &str) -> NetworkCase {
        netmodel::load_case(format!("{}/../../cases/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
    }

    #[test]
    fn no_flex_units_always_reproduce_the_base_point() {
        let mut case = fixture("case5_bal_balflex.json");
        case.flex_units.clear();
        let report =
            sample_feasible(&case, Phase::A, &ScenarioConfig::default(), 100, 7).unwrap();
        assert_eq!(report.samples_feasible, report.samples_total);
        let base = flexmap::compute_base_point(&case, "1", Phase::A).unwrap();
        for &(p, q) in &report.points {
            assert!((p - base.0).abs() < 1e-9 && (q - base.1).abs() < 1e-9);
        }
    }

    #[test]
    fn identical_seeds_reproduce_identical_reports() {
        let case = fixture("case5_unbal_3x1ph.json");
        let a = sample_feasible(&case, Phase::A, &ScenarioConfig::default(), 200, 42).unwrap();
        let b = sample_feasible(&case, Phase::A, &ScenarioConfig::default(), 200, 42).unwrap();
        assert_eq!(a.samples_feasible, b.samples_feasible);
        assert_eq!(a.points, b.points);
        assert_eq!(
            a.violated_constraint_histogram,
            b.violated_constraint_histogram
        );
    }

    #[test]
    fn tighter_vuf_limits_admit_fewer_samples() {
        let case = fixture("case5_unbal_3x1ph.json");
        let loose = ScenarioConfig {
            vuf_limit: Some(1.0),
            ..Default::default()
        };
        let tight = ScenarioConfig {
            vuf_limit: Some(0.05),
            ..Default::default()
        };
        let a = sample_feasible(&case, Phase::A, &loose, 400, 3).unwrap();
        let b = sample_feasible(&case, Phase::A, &tight, 400, 3).unwrap();
        assert!(b.samples_feasible <= a.samples_feasible);
        assert!(b.violated_constraint_histogram.contains_key("vuf"));
    }

    #[test]
    fn synthetic_outside_point_measures_its_distance() {
        use crate::flexmap::{BoundaryPoint, Side};
        use crate::opf::SolveStatus;
        let square = FlexBoundary {
            points: [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)]
                .iter()
                .enumerate()
                .map(|(i, &(p, q))| BoundaryPoint {
                    interval: i,
                    side: Side::Max,
                    p_kw: p,
                    q_kvar: q,
                    status: SolveStatus::Optimal,
                })
                .collect(),
            base_point: (5.0, 5.0),
            area: 100.0,
            infeasible_intervals: Vec::new(),
        };
        let mut report = OracleReport {
            samples_total: 2,
            samples_feasible: 2,
            points: vec![(5.0, 5.0), (11.0, 5.0)],
            rejected_points: Vec::new(),
            max_outside_distance: 0.0,
            violated_constraint_histogram: BTreeMap::new(),
        };
        report = verify_boundary(&square, report).unwrap();
        assert!((report.max_outside_distance - 1.0).abs() < 1e-12);
        report.points = vec![(5.0, 5.0), (1.0, 9.0)];
        let inside = verify_boundary(&square, report).unwrap();
        assert_eq!(inside.max_outside_distance, 0.0);
    }

    #[test]
    fn traced_boundary_contains_the_sample_cloud() {
        let case = fixture("case5_unbal_3x1ph.json");
        let scenario = ScenarioConfig::default();
        let boundary = flexmap::trace_boundary(
            &case,
            &FlexAreaRequest {
                ref_bus: "1".into(),
                ref_phase: Phase::A,
                k: 40,
                epsilon: None,
                scenario: scenario.clone(),
                sweep_axis: Axis::P,
            },
        )
        .unwrap();
        let report = sample_feasible(&case, Phase::A, &scenario, 500, 11).unwrap();
        assert!(report.samples_feasible > 0);
        let report = verify_boundary(&boundary, report).unwrap();
        let polygon = boundary.polygon();
        let (mut lo, mut hi) = ((f64::MAX, f64::MAX), (f64::MIN, f64::MIN));
        for &(p, q) in &polygon {
            lo = (lo.0.min(p), lo.1.min(q));
            hi = (hi.0.max(p), hi.1.max(q));
        }
        let diagonal = ((hi.0 - lo.0).powi(2) + (hi.1 - lo.1).powi(2)).sqrt();
        assert!(
            report.max_outside_distance < 0.01 * diagonal,
            "outside {} diagonal {}",
            report.max_outside_distance,
            diagonal
        );
    }

    #[test]
    fn aggregate_zero_sampling_respects_the_coordination_rows() {
        let case = fixture("case5_unbal_3x1ph.json");
        let scenario = ScenarioConfig {
            coordination: Coordination::PhaseRestricted,
            coordination_mode: CoordinationMode::AggregateZero,
            ..Default::default()
        };
        let report = sample_feasible(&case, Phase::A, &scenario, 300, 5).unwrap();
        // Single units per phase: the projection pins non-reference phases to
        // zero, so every converged sample honours the zero-sum rows.
        assert!(!report
            .violated_constraint_histogram
            .contains_key("coordination"));
        assert!(report.samples_feasible > 0);
    }

    #[test]
    fn exports_reflect_the_counts() {
        let case = fixture("case5_unbal_balflex.json");
        let report = sample_feasible(&case, Phase::A, &ScenarioConfig::default(), 50, 1).unwrap();
        let csv = report.to_csv();
        assert_eq!(
            csv.lines().count(),
            1 + report.points.len() + report.rejected_points.len()
        );
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(
            json["samples_total"].as_u64().unwrap() as usize,
            report.samples_total
        );
    }

    #[test]
    fn zero_samples_are_rejected() {
        let case = fixture("case5_bal_balflex.json");
        assert!(matches!(
            sample_feasible(&case, Phase::A, &ScenarioConfig::default(), 0, 1),
            Err(Error::InvalidRequest(_))
        ));
    }
}
