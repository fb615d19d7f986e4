//! ε-constraint boundary tracing of the aggregated P-Q flexibility area at
//! the reference bus/phase, polygon areas, reduction metrics, and the
//! Minkowski upper bound.
//!
//! The sweep fixes one component of the reference-bus injection inside a
//! narrow ε-box at `k` targets across its reachable range and optimises the
//! other component in both directions, yielding up to `2k` boundary operating
//! points. Half the targets are uniform; the rest bisect the longest chords,
//! which keeps sharp corners of the area resolved. Points are ordered by
//! traversing the max side with ascending interval and the min side in
//! reverse, which keeps nonconvex boundaries from self-intersecting the way
//! an angular sort around the centroid can.

use serde_json::json;

use crate::netmodel::{NetworkCase, NetworkIndex, Phase};
use crate::opf::{
    self, Axis, Coordination, CoordinationMode, EpsilonBox, ObjectiveSpec, ScenarioConfig,
    SolveStatus,
};
use crate::powerflow::{solve_newton, NewtonOptions, Setpoints};
use crate::{Error, Result};

/// A boundary-tracing request.
#[derive(Debug, Clone)]
pub struct FlexAreaRequest {
    pub ref_bus: String,
    pub ref_phase: Phase,
    /// Number of sweep intervals; the boundary holds up to `2k` points.
    pub k: usize,
    /// ε-box half-width in per-unit; `None` selects `sweep range / (1000·k)`.
    pub epsilon: Option<f64>,
    pub scenario: ScenarioConfig,
    /// Which injection component the sweep fixes.
    pub sweep_axis: Axis,
}

/// Which side of the free component an operating point optimised.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Max,
    Min,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Max => "max",
            Side::Min => "min",
        }
    }
}

/// One traced operating point in physical units.
#[derive(Debug, Clone)]
pub struct BoundaryPoint {
    pub interval: usize,
    pub side: Side,
    pub p_kw: f64,
    pub q_kvar: f64,
    pub status: SolveStatus,
}

/// A traced (or analytically constructed) flexibility boundary.
#[derive(Debug, Clone)]
pub struct FlexBoundary {
    /// Feasible operating points in traversal order (closed implicitly).
    pub points: Vec<BoundaryPoint>,
    /// Reference-bus injection with no flexibility provision, kW / kVAr.
    pub base_point: (f64, f64),
    /// Absolute polygon area, kVAr².
    pub area: f64,
    /// Sweep intervals where at least one side failed to solve.
    pub infeasible_intervals: Vec<usize>,
}

impl FlexBoundary {
    /// `interval,side,P_kW,Q_kVAr,status` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("interval,side,P_kW,Q_kVAr,status\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{:.6},{:.6},{:?}\n",
                p.interval,
                p.side.label(),
                p.p_kw,
                p.q_kvar,
                p.status
            ));
        }
        out
    }

    /// Full metadata export.
    pub fn to_json(&self) -> String {
        let points: Vec<_> = self
            .points
            .iter()
            .map(|p| {
                json!({
                    "interval": p.interval,
                    "side": p.side.label(),
                    "p_kw": p.p_kw,
                    "q_kvar": p.q_kvar,
                    "status": format!("{:?}", p.status),
                })
            })
            .collect();
        serde_json::to_string_pretty(&json!({
            "base_point_kw_kvar": [self.base_point.0, self.base_point.1],
            "area_kvar2": self.area,
            "infeasible_intervals": self.infeasible_intervals,
            "points": points,
        }))
        .unwrap()
    }

    /// The polygon vertices in kW / kVAr.
    pub fn polygon(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.p_kw, p.q_kvar)).collect()
    }
}

/// kW per unit of per-unit power.
fn kw_base(case: &NetworkCase) -> f64 {
    1e3 * case.base_mva
}

fn check_reference(case: &NetworkCase, index: &NetworkIndex, ref_bus: &str, ref_phase: Phase) -> Result<()> {
    let bus = index
        .bus_index(ref_bus)
        .ok_or_else(|| Error::InvalidRequest(format!("unknown bus {ref_bus}")))?;
    if bus != index.ref_bus() {
        return Err(Error::InvalidRequest(format!(
            "bus {ref_bus} is not the network reference bus"
        )));
    }
    if !case.buses[bus].phases.contains(ref_phase) {
        return Err(Error::RefPhaseAbsent {
            bus: ref_bus.to_string(),
            phase: ref_phase.letter(),
        });
    }
    Ok(())
}

/// Reference-bus injection on `ref_phase` with every flexible unit held at
/// zero, in kW / kVAr (positive for net network consumption).
pub fn compute_base_point(case: &NetworkCase, ref_bus: &str, ref_phase: Phase) -> Result<(f64, f64)> {
    let index = NetworkIndex::new(case);
    check_reference(case, &index, ref_bus, ref_phase)?;
    let sp = Setpoints::from_loads(case, &index);
    let state = solve_newton(case, &index, &sp, &NewtonOptions::default())?;
    let s = state
        .injection(&index, index.ref_bus(), ref_phase)
        .expect("reference phase checked above");
    let base = kw_base(case);
    Ok((s.re * base, s.im * base))
}

/// Traces the aggregated P-Q flexibility boundary per the ε-constraint sweep.
pub fn trace_boundary(case: &NetworkCase, request: &FlexAreaRequest) -> Result<FlexBoundary> {
    if request.k < 2 {
        return Err(Error::InvalidRequest(format!(
            "interval count k = {} below minimum 2",
            request.k
        )));
    }
    if let Some(eps) = request.epsilon {
        if !(eps > 0.0) {
            return Err(Error::InvalidRequest(format!("epsilon {eps} must be positive")));
        }
    }
    let index = NetworkIndex::new(case);
    check_reference(case, &index, &request.ref_bus, request.ref_phase)?;
    let base_point = compute_base_point(case, &request.ref_bus, request.ref_phase)?;

    let participating = case
        .flex_units
        .iter()
        .any(|u| opf::build::participates(u, request.ref_phase, &request.scenario));
    if !participating {
        // Nothing can move: the area degenerates to the base operating point.
        return Ok(FlexBoundary {
            points: Vec::new(),
            base_point,
            area: 0.0,
            infeasible_intervals: Vec::new(),
        });
    }

    let base = kw_base(case);
    let spec = |alpha_p: f64, alpha_q: f64| ObjectiveSpec {
        alpha_p,
        alpha_q,
        ref_bus: request.ref_bus.clone(),
        ref_phase: request.ref_phase,
    };
    let solve_dir = |alpha: (f64, f64), scenario: &ScenarioConfig, warm: Option<&nalgebra::DVector<f64>>| {
        let problem = opf::build_problem(case, &index, &spec(alpha.0, alpha.1), scenario)?;
        let sol = opf::solve(&problem, warm);
        if sol.status != SolveStatus::Optimal && scenario.vuf_limit.is_some() {
            // The VUF rows of adjacent buses are nearly dependent quadratics
            // that can trap a cold start in a limit cycle. The relaxed
            // optimum is an excellent warm start: the limit typically binds
            // only weakly, so the constrained solution is one step away.
            let relaxed = ScenarioConfig {
                vuf_limit: None,
                ..scenario.clone()
            };
            if let Ok(rp) = opf::build_problem(case, &index, &spec(alpha.0, alpha.1), &relaxed) {
                let rs = opf::solve(&rp, warm);
                if rs.status == SolveStatus::Optimal {
                    let retry = opf::solve(&problem, Some(&rs.x));
                    if retry.status == SolveStatus::Optimal {
                        return Ok::<_, Error>(retry);
                    }
                }
            }
        }
        Ok::<_, Error>(sol)
    };

    // Range of the swept component from the two unconstrained-axis solves.
    let (axis_dir, free_dir) = match request.sweep_axis {
        Axis::P => ((1.0, 0.0), (0.0, 1.0)),
        Axis::Q => ((0.0, 1.0), (1.0, 0.0)),
    };
    let pick = |inj: (f64, f64)| match request.sweep_axis {
        Axis::P => inj.0,
        Axis::Q => inj.1,
    };
    let hi = solve_dir(axis_dir, &request.scenario, None)?;
    let lo = solve_dir((-axis_dir.0, -axis_dir.1), &request.scenario, None)?;
    if hi.status != SolveStatus::Optimal || lo.status != SolveStatus::Optimal {
        return Err(Error::DegenerateBoundary { points: Vec::new() });
    }
    let sweep_min = pick(lo.ref_injection);
    let sweep_max = pick(hi.ref_injection);
    let range = sweep_max - sweep_min;
    if !(range > 0.0) {
        return Err(Error::DegenerateBoundary {
            points: vec![(
                hi.ref_injection.0 * base,
                hi.ref_injection.1 * base,
            )],
        });
    }
    let epsilon = request.epsilon.unwrap_or(range / (1000.0 * request.k as f64));

    // A target holds the ε-box location and, per side, the optimal injection
    // (per-unit) and the solution vector kept for warm-starting neighbours.
    struct Target {
        value: f64,
        max: Option<(f64, f64)>,
        min: Option<(f64, f64)>,
        max_x: Option<nalgebra::DVector<f64>>,
        min_x: Option<nalgebra::DVector<f64>>,
    }
    let solve_side = |dir: (f64, f64),
                      value: f64,
                      warm: Option<&nalgebra::DVector<f64>>|
     -> Result<Option<((f64, f64), nalgebra::DVector<f64>)>> {
        let scenario = ScenarioConfig {
            epsilon_box: Some(EpsilonBox {
                target: request.sweep_axis,
                value,
                epsilon,
            }),
            ..request.scenario.clone()
        };
        let sol = solve_dir(dir, &scenario, warm)?;
        Ok((sol.status == SolveStatus::Optimal).then(|| (sol.ref_injection, sol.x)))
    };
    let min_dir = (-free_dir.0, -free_dir.1);

    // Coarse pass: half the targets spread uniformly across the range,
    // endpoints included. Warm-start chains for both sides begin at the
    // sweep-min range solve, which interval 0 pins right next to; the
    // opposite range solve sits a whole sweep away and makes a poor first
    // warm start.
    let k = request.k;
    let k0 = ((k + 1) / 2).max(2);
    let step = range / (k0 - 1) as f64;
    let mut targets: Vec<Target> = Vec::with_capacity(k);
    let mut warm_max = lo.x.clone();
    let mut warm_min = lo.x.clone();
    for i in 0..k0 {
        let value = sweep_min + i as f64 * step;
        let max = solve_side(free_dir, value, Some(&warm_max))?;
        if let Some((_, x)) = &max {
            warm_max = x.clone();
        }
        let min = solve_side(min_dir, value, Some(&warm_min))?;
        if let Some((_, x)) = &min {
            warm_min = x.clone();
        }
        targets.push(Target {
            value,
            max: max.as_ref().map(|s| s.0),
            max_x: max.map(|s| s.1),
            min: min.as_ref().map(|s| s.0),
            min_x: min.map(|s| s.1),
        });
    }

    // Refinement pass: spend the remaining targets where the piecewise-linear
    // approximation is worst. Each adjacent pair carries an estimated chord
    // error — seeded with the deviation of its endpoints from the chords of
    // their neighbours, replaced by the measured sagitta once the pair is
    // bisected — so flat stretches never attract the budget while sharp
    // corners keep it until they are resolved.
    let deviation = |side: fn(&Target) -> Option<(f64, f64)>, j: usize| {
        if j == 0 || j + 1 >= targets.len() {
            return 0.0;
        }
        match (
            side(&targets[j - 1]),
            side(&targets[j]),
            side(&targets[j + 1]),
        ) {
            (Some(a), Some(m), Some(b)) => point_segment_distance(m, a, b),
            _ => 0.0,
        }
    };
    let mut est: Vec<f64> = (0..targets.len() - 1)
        .map(|i| {
            let dev = |j: usize| deviation(|t| t.max, j).max(deviation(|t| t.min, j));
            // Pairs with missing sides fall back to their swept width so
            // infeasible gaps still get probed, at low priority.
            dev(i)
                .max(dev(i + 1))
                .max((targets[i + 1].value - targets[i].value) * 1e-3)
        })
        .collect();
    while targets.len() < k {
        let (mut pick, mut pick_err) = (0, f64::NEG_INFINITY);
        for (i, &e) in est.iter().enumerate() {
            if e > pick_err {
                (pick, pick_err) = (i, e);
            }
        }
        let value = 0.5 * (targets[pick].value + targets[pick + 1].value);
        let warm_for = |left: &Option<nalgebra::DVector<f64>>,
                        right: &Option<nalgebra::DVector<f64>>| {
            left.as_ref().or(right.as_ref()).unwrap_or(&lo.x).clone()
        };
        let warm = warm_for(&targets[pick].max_x, &targets[pick + 1].max_x);
        let max = solve_side(free_dir, value, Some(&warm))?;
        let warm = warm_for(&targets[pick].min_x, &targets[pick + 1].min_x);
        let min = solve_side(min_dir, value, Some(&warm))?;
        let sag = |side: fn(&Target) -> Option<(f64, f64)>, mid: Option<(f64, f64)>| match (
            side(&targets[pick]),
            mid,
            side(&targets[pick + 1]),
        ) {
            (Some(a), Some(m), Some(b)) => point_segment_distance(m, a, b),
            _ => pick_err * 0.5,
        };
        let measured = sag(|t| t.max, max.as_ref().map(|s| s.0))
            .max(sag(|t| t.min, min.as_ref().map(|s| s.0)));
        targets.insert(
            pick + 1,
            Target {
                value,
                max: max.as_ref().map(|s| s.0),
                max_x: max.map(|s| s.1),
                min: min.as_ref().map(|s| s.0),
                min_x: min.map(|s| s.1),
            },
        );
        est[pick] = measured;
        est.insert(pick + 1, measured);
    }

    let infeasible: Vec<usize> = targets
        .iter()
        .enumerate()
        .filter(|(_, t)| t.max.is_none() || t.min.is_none())
        .map(|(i, _)| i)
        .collect();
    let point = |i: usize, side: Side, inj: (f64, f64)| BoundaryPoint {
        interval: i,
        side,
        p_kw: inj.0 * base,
        q_kvar: inj.1 * base,
        status: SolveStatus::Optimal,
    };
    let mut points: Vec<BoundaryPoint> = targets
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.max.map(|inj| point(i, Side::Max, inj)))
        .collect();
    points.extend(
        targets
            .iter()
            .enumerate()
            .rev()
            .filter_map(|(i, t)| t.min.map(|inj| point(i, Side::Min, inj))),
    );
    if points.len() < 3 {
        return Err(Error::DegenerateBoundary {
            points: points.iter().map(|p| (p.p_kw, p.q_kvar)).collect(),
        });
    }
    let area = polygon_area(&points.iter().map(|p| (p.p_kw, p.q_kvar)).collect::<Vec<_>>())?;
    Ok(FlexBoundary {
        points,
        base_point,
        area,
        infeasible_intervals: infeasible,
    })
}

/// Absolute shoelace area of a simple polygon given in order.
pub fn polygon_area(points: &[(f64, f64)]) -> Result<f64> {
    // Zero-length edges from duplicate adjacent vertices carry no area and
    // would confuse the intersection test; drop them first.
    let mut verts: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for &p in points {
        if verts.last().map_or(true, |&q| !close(p, q)) {
            verts.push(p);
        }
    }
    if verts.len() > 1 && close(verts[0], *verts.last().unwrap()) {
        verts.pop();
    }
    if verts.len() < 3 {
        return Err(Error::PolygonTooSmall);
    }
    if self_intersects(&verts) {
        return Err(Error::SelfIntersecting);
    }
    let mut twice = 0.0;
    for i in 0..verts.len() {
        let (x1, y1) = verts[i];
        let (x2, y2) = verts[(i + 1) % verts.len()];
        twice += x1 * y2 - x2 * y1;
    }
    Ok(twice.abs() / 2.0)
}

fn close(a: (f64, f64), b: (f64, f64)) -> bool {
    let scale = a.0.abs().max(a.1.abs()).max(b.0.abs()).max(b.1.abs()).max(1.0);
    (a.0 - b.0).abs() <= 1e-12 * scale && (a.1 - b.1).abs() <= 1e-12 * scale
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// True when two closed segments properly cross (shared endpoints between
/// adjacent edges are fine and excluded by the caller).
fn segments_cross(a: (f64, f64), b: (f64, f64), c: (f64, f64), d: (f64, f64)) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    (d1 > 0.0) != (d2 > 0.0) && (d3 > 0.0) != (d4 > 0.0)
}

fn self_intersects(verts: &[(f64, f64)]) -> bool {
    let n = verts.len();
    for i in 0..n {
        for j in (i + 1)..n {
            // Adjacent edges share an endpoint by construction.
            if j == i || (j + 1) % n == i || (i + 1) % n == j {
                continue;
            }
            if segments_cross(verts[i], verts[(i + 1) % n], verts[j], verts[(j + 1) % n]) {
                return true;
            }
        }
    }
    false
}

/// Percent reduction of `constrained_area` relative to `base_area`.
pub fn area_reduction(base_area: f64, constrained_area: f64) -> Result<f64> {
    if !(base_area > 0.0) {
        return Err(Error::NonPositiveBaseArea(base_area));
    }
    Ok(100.0 * (1.0 - constrained_area / base_area))
}

/// Network-unconstrained upper bound: the base point translated by the
/// Minkowski sum of the participating units' P-Q capability boxes.
///
/// Per-unit-zero coordination drops units without the reference phase
/// entirely; aggregate-zero forces the non-reference phases of the fleet to
/// net to zero, so only reference-phase components count towards the bound.
pub fn minkowski_upper_bound(
    case: &NetworkCase,
    ref_phase: Phase,
    scenario: &ScenarioConfig,
) -> Result<FlexBoundary> {
    let index = NetworkIndex::new(case);
    let ref_bus = case.buses[index.ref_bus()].id.clone();
    let base_point = compute_base_point(case, &ref_bus, ref_phase)?;
    let aggregate_zero = scenario.coordination == Coordination::PhaseRestricted
        && scenario.coordination_mode == CoordinationMode::AggregateZero;
    let base = kw_base(case);
    let (mut p_lo, mut p_hi, mut q_lo, mut q_hi) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for unit in &case.flex_units {
        if !opf::build::participates(unit, ref_phase, scenario) {
            continue;
        }
        for phase in unit.phases.iter() {
            if aggregate_zero && phase != ref_phase {
                continue;
            }
            p_lo += unit.p_min.get(phase).unwrap_or(0.0);
            p_hi += unit.p_max.get(phase).unwrap_or(0.0);
            q_lo += unit.q_min.get(phase).unwrap_or(0.0);
            q_hi += unit.q_max.get(phase).unwrap_or(0.0);
        }
    }
    let corners = [
        (p_lo, q_lo),
        (p_hi, q_lo),
        (p_hi, q_hi),
        (p_lo, q_hi),
    ];
    let points: Vec<BoundaryPoint> = corners
        .iter()
        .enumerate()
        .map(|(i, &(p, q))| BoundaryPoint {
            interval: i,
            side: Side::Max,
            p_kw: base_point.0 + p * base,
            q_kvar: base_point.1 + q * base,
            status: SolveStatus::Optimal,
        })
        .collect();
    let area = (p_hi - p_lo) * (q_hi - q_lo) * base * base;
    Ok(FlexBoundary {
        points,
        base_point,
        area,
        infeasible_intervals: Vec::new(),
    })
}

/// Signed distance of a point to a polygon boundary: negative inside,
/// positive outside, zero on the boundary.
pub fn signed_distance(polygon: &[(f64, f64)], point: (f64, f64)) -> f64 {
    let n = polygon.len();
    let mut dist = f64::INFINITY;
    let mut inside = false;
    for i in 0..n {
        let a = polygon[i];
        let b = polygon[(i + 1) % n];
        dist = dist.min(point_segment_distance(point, a, b));
        // Even-odd ray cast along +x.
        if (a.1 > point.1) != (b.1 > point.1) {
            let t = (point.1 - a.1) / (b.1 - a.1);
            if a.0 + t * (b.0 - a.0) > point.0 {
                inside = !inside;
            }
        }
    }
    if inside {
        -dist
    } else {
        dist
    }
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len_sq = dx * dx + dy * dy;
    let t = if len_sq == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len_sq).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * dx, a.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{self, PerPhase, PhaseSet};
    use approx::assert_relative_eq;

    fn fixture(name: &str) -> NetworkCase {
        netmodel::load_case(format!("{}/../../cases/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
    }

    fn request(k: usize, scenario: ScenarioConfig) -> FlexAreaRequest {
        FlexAreaRequest {
            ref_bus: "1".into(),
            ref_phase: Phase::A,
            k,
            epsilon: None,
            scenario,
            sweep_axis: Axis::P,
        }
    }

    #[test]
    fn triangle_area_is_half() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
        assert_eq!(polygon_area(&pts).unwrap(), 0.5);
    }

    #[test]
    fn rectangle_area_is_exact() {
        let pts = [(-8.0, -8.0), (8.0, -8.0), (8.0, 8.0), (-8.0, 8.0)];
        assert_eq!(polygon_area(&pts).unwrap(), 256.0);
    }

    #[test]
    fn bowtie_ordering_is_rejected() {
        let pts = [(0.0, 0.0), (1.0, 1.0), (1.0, 0.0), (0.0, 1.0)];
        assert!(matches!(polygon_area(&pts), Err(Error::SelfIntersecting)));
    }

    #[test]
    fn tiny_polygons_are_rejected() {
        let pts = [(0.0, 0.0), (1.0, 0.0), (1.0, 1e-9)];
        assert!(matches!(polygon_area(&[]), Err(Error::PolygonTooSmall)));
        assert!(polygon_area(&pts).is_ok());
        let dup = [(0.0, 0.0), (0.0, 0.0), (1.0, 0.0)];
        assert!(matches!(polygon_area(&dup), Err(Error::PolygonTooSmall)));
    }

    #[test]
    fn reduction_percentages_match_reference_rows() {
        assert_relative_eq!(
            area_reduction(267.96, 177.03).unwrap(),
            33.93,
            epsilon = 0.01
        );
        assert_eq!(area_reduction(10.0, 10.0).unwrap(), 0.0);
        assert_relative_eq!(
            area_reduction(1721.7, 1211.6).unwrap(),
            29.6,
            epsilon = 0.05
        );
        assert!(matches!(
            area_reduction(0.0, 1.0),
            Err(Error::NonPositiveBaseArea(_))
        ));
    }

    #[test]
    fn signed_distance_orientation_and_magnitude() {
        let square = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
        assert!(signed_distance(&square, (0.5, 0.5)) < 0.0);
        assert_relative_eq!(signed_distance(&square, (2.0, 0.5)), 1.0, epsilon = 1e-12);
        assert_relative_eq!(signed_distance(&square, (0.5, 0.0)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn balanced_case_has_identical_base_points_per_phase() {
        let case = fixture("case5_bal_balflex.json");
        let a = compute_base_point(&case, "1", Phase::A).unwrap();
        let b = compute_base_point(&case, "1", Phase::B).unwrap();
        let c = compute_base_point(&case, "1", Phase::C).unwrap();
        assert_relative_eq!(a.0, b.0, epsilon = 1e-9);
        assert_relative_eq!(a.0, c.0, epsilon = 1e-9);
        assert_relative_eq!(a.1, b.1, epsilon = 1e-9);
        assert_relative_eq!(a.1, c.1, epsilon = 1e-9);
    }

    #[test]
    fn no_flex_units_degenerates_to_the_base_point() {
        let mut case = fixture("case5_bal_balflex.json");
        case.flex_units.clear();
        let boundary = trace_boundary(&case, &request(4, ScenarioConfig::default())).unwrap();
        assert!(boundary.points.is_empty());
        assert_eq!(boundary.area, 0.0);
        let base = compute_base_point(&case, "1", Phase::A).unwrap();
        assert_eq!(boundary.base_point, base);
    }

    #[test]
    fn same_phase_unit_boxes_sum_to_a_rectangle() {
        let mut case = fixture("case5_bal_balflex.json");
        let template = case.flex_units[0].clone();
        case.flex_units = (0..3)
            .map(|i| {
                let mut u = template.clone();
                u.id = format!("U{i}");
                u.balanced = false;
                u.phases = PhaseSet::single(Phase::A);
                let hi = PerPhase::uniform(&u.phases, 0.005);
                u.p_max = hi.clone();
                u.q_max = hi;
                let lo = PerPhase::uniform(&u.phases, -0.005);
                u.p_min = lo.clone();
                u.q_min = lo;
                u
            })
            .collect();
        let bound =
            minkowski_upper_bound(&case, Phase::A, &ScenarioConfig::default()).unwrap();
        assert_relative_eq!(bound.area, 900.0, epsilon = 1e-9);
        assert_eq!(bound.points.len(), 4);
    }

    #[test]
    fn single_unit_bound_is_its_own_translated_box() {
        let case = fixture("case5_unbal_3x1ph.json");
        let mut only_first = case.clone();
        only_first.flex_units.truncate(1);
        let bound =
            minkowski_upper_bound(&only_first, Phase::A, &ScenarioConfig::default()).unwrap();
        // A single ±8 kW / ±8 kVAr unit.
        assert_relative_eq!(bound.area, 256.0, epsilon = 1e-9);
        let base = bound.base_point;
        assert!(bound
            .points
            .iter()
            .any(|p| (p.p_kw - (base.0 - 8.0)).abs() < 1e-9
                && (p.q_kvar - (base.1 - 8.0)).abs() < 1e-9));
    }

    #[test]
    fn traced_boundary_is_contained_and_holds_the_base_point() {
        let case = fixture("case5_unbal_3x1ph.json");
        let boundary = trace_boundary(&case, &request(6, ScenarioConfig::default())).unwrap();
        assert!(boundary.points.len() >= 3);
        assert!(boundary.area > 0.0);
        assert!(boundary.infeasible_intervals.is_empty());
        let polygon = boundary.polygon();
        assert!(signed_distance(&polygon, boundary.base_point) <= 1e-6);
        let bound =
            minkowski_upper_bound(&case, Phase::A, &ScenarioConfig::default()).unwrap();
        let rect = bound.polygon();
        // Containment within the network-unconstrained rectangle, 1e-6 p.u.
        // = 1e-3 kW at this base.
        for p in &polygon {
            assert!(
                signed_distance(&rect, *p) <= 1e-3,
                "{p:?} outside Minkowski bound"
            );
        }
        assert!(boundary.area <= bound.area);
    }

    #[test]
    fn identical_requests_reproduce_identical_point_lists() {
        let case = fixture("case5_unbal_balflex.json");
        let a = trace_boundary(&case, &request(4, ScenarioConfig::default())).unwrap();
        let b = trace_boundary(&case, &request(4, ScenarioConfig::default())).unwrap();
        assert_eq!(a.points.len(), b.points.len());
        for (x, y) in a.points.iter().zip(&b.points) {
            assert_eq!((x.p_kw, x.q_kvar), (y.p_kw, y.q_kvar));
        }
        assert_eq!(a.area, b.area);
    }

    #[test]
    fn vuf_limit_and_phase_restriction_shrink_the_area() {
        let case = fixture("case5_unbal_3x1ph.json");
        let full = trace_boundary(&case, &request(5, ScenarioConfig::default())).unwrap();
        let restricted = trace_boundary(
            &case,
            &request(
                5,
                ScenarioConfig {
                    coordination: Coordination::PhaseRestricted,
                    ..Default::default()
                },
            ),
        )
        .unwrap();
        let tight = trace_boundary(
            &case,
            &request(
                5,
                ScenarioConfig {
                    vuf_limit: Some(0.1),
                    ..Default::default()
                },
            ),
        )
        .unwrap();
        assert!(restricted.area < full.area);
        assert!(tight.area < full.area);
        // Pointwise nesting: every restricted/tight vertex sits inside the
        // full-coordination polygon (up to the ε band).
        let hull = full.polygon();
        let tol = 1e-2 * full.area.sqrt();
        for p in restricted.polygon().iter().chain(tight.polygon().iter()) {
            assert!(signed_distance(&hull, *p) <= tol, "{p:?} outside full");
        }
    }

    #[test]
    fn doubling_k_is_a_refinement() {
        let case = fixture("case5_unbal_balflex.json");
        let coarse = trace_boundary(&case, &request(4, ScenarioConfig::default())).unwrap();
        let fine = trace_boundary(&case, &request(8, ScenarioConfig::default())).unwrap();
        // Band area bound: sweep-range/k times the free-axis extent.
        let ps: Vec<f64> = fine.points.iter().map(|p| p.p_kw).collect();
        let qs: Vec<f64> = fine.points.iter().map(|p| p.q_kvar).collect();
        let p_range = ps.iter().cloned().fold(f64::MIN, f64::max)
            - ps.iter().cloned().fold(f64::MAX, f64::min);
        let q_range = qs.iter().cloned().fold(f64::MIN, f64::max)
            - qs.iter().cloned().fold(f64::MAX, f64::min);
        let band = p_range / 4.0 * q_range;
        assert!(
            (fine.area - coarse.area).abs() < band,
            "coarse {} fine {} band {}",
            coarse.area,
            fine.area,
            band
        );
    }

    #[test]
    fn exports_carry_the_points() {
        let case = fixture("case5_unbal_balflex.json");
        let boundary = trace_boundary(&case, &request(3, ScenarioConfig::default())).unwrap();
        let csv = boundary.to_csv();
        assert!(csv.starts_with("interval,side,P_kW,Q_kVAr,status\n"));
        assert_eq!(csv.lines().count(), 1 + boundary.points.len());
        let json: serde_json::Value = serde_json::from_str(&boundary.to_json()).unwrap();
        assert_eq!(
            json["points"].as_array().unwrap().len(),
            boundary.points.len()
        );
        assert!(json["area_kvar2"].as_f64().unwrap() > 0.0);
    }

    #[test]
    fn invalid_requests_are_rejected() {
        let case = fixture("case5_bal_balflex.json");
        let mut r = request(1, ScenarioConfig::default());
        assert!(matches!(
            trace_boundary(&case, &r),
            Err(Error::InvalidRequest(_))
        ));
        r.k = 4;
        r.epsilon = Some(0.0);
        assert!(matches!(
            trace_boundary(&case, &r),
            Err(Error::InvalidRequest(_))
        ));
        r.epsilon = None;
        r.ref_bus = "3".into();
        assert!(matches!(
            trace_boundary(&case, &r),
            Err(Error::InvalidRequest(_))
        ));
    }
}
