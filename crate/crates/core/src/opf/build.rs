//! Assembles the flexibility-estimation program over rectangular voltage
//! coordinates. Balance rows are quadratic, voltage and unbalance limits are
//! quadratic, thermal limits are squared magnitudes of quadratics, and all
//! equipment boxes are linear, so every derivative downstream is exact.

use num_complex::Complex64;

use crate::netmodel::{FlexUnit, NetworkCase, NetworkIndex, Phase, UnitSystem};
use crate::powerflow::{self, rotation_operator};
use crate::{Error, Result};

use super::quad::{CLin, CQuad, LinForm, QuadForm};
use super::{
    Axis, Constraint, Coordination, CoordinationMode, Expr, Family, ObjectiveSpec, Problem,
    ProblemLayout, ScenarioConfig, VoltagePair,
};

/// Whether a unit may move under the scenario's coordination rules.
pub(crate) fn participates(unit: &FlexUnit, ref_phase: Phase, scenario: &ScenarioConfig) -> bool {
    match (scenario.coordination, scenario.coordination_mode) {
        (Coordination::Full, _) => true,
        (Coordination::PhaseRestricted, CoordinationMode::PerUnitZero) => {
            unit.phases.contains(ref_phase)
        }
        // Under the aggregate formulation every unit keeps its variables and
        // the zero-sum rows do the restricting.
        (Coordination::PhaseRestricted, CoordinationMode::AggregateZero) => true,
    }
}

fn layout(
    case: &NetworkCase,
    index: &NetworkIndex,
    ref_phase: Phase,
    scenario: &ScenarioConfig,
) -> ProblemLayout {
    let mut n = 0;
    let mut voltage = Vec::with_capacity(index.n_nodes());
    for node in index.nodes() {
        if node.bus == index.ref_bus() {
            voltage.push(None);
        } else {
            voltage.push(Some(VoltagePair { re: n, im: n + 1 }));
            n += 2;
        }
    }
    let mut flex_p = vec![[None; 3]; case.flex_units.len()];
    let mut flex_q = vec![[None; 3]; case.flex_units.len()];
    for (ui, unit) in case.flex_units.iter().enumerate() {
        if !participates(unit, ref_phase, scenario) {
            continue;
        }
        if unit.balanced {
            let (p_var, q_var) = (n, n + 1);
            n += 2;
            for p in unit.phases.iter() {
                flex_p[ui][p.index()] = Some(p_var);
                flex_q[ui][p.index()] = Some(q_var);
            }
        } else {
            for p in unit.phases.iter() {
                flex_p[ui][p.index()] = Some(n);
                flex_q[ui][p.index()] = Some(n + 1);
                n += 2;
            }
        }
    }
    let mut gen_p = vec![[None; 3]; case.generators.len()];
    let mut gen_q = vec![[None; 3]; case.generators.len()];
    for (gi, g) in case.generators.iter().enumerate() {
        for p in g.p_min.phases().iter() {
            gen_p[gi][p.index()] = Some(n);
            gen_q[gi][p.index()] = Some(n + 1);
            n += 2;
        }
    }
    ProblemLayout {
        n_vars: n,
        voltage,
        flex_p,
        flex_q,
        gen_p,
        gen_q,
    }
}

/// Complex voltage of each node as a linear expression (constant slack
/// phasors at the reference bus).
fn voltage_forms(index: &NetworkIndex, layout: &ProblemLayout) -> Vec<CLin> {
    index
        .nodes()
        .iter()
        .enumerate()
        .map(|(ni, node)| match layout.voltage[ni] {
            Some(pair) => CLin::var(pair.re, pair.im),
            None => CLin::constant(powerflow::slack_voltage(node.phase)),
        })
        .collect()
}

/// Complex flow leaving `near` on one line and phase, as a quadratic form:
/// `V_near,φ · conj(Σ_ψ y_φψ (V_near,ψ − V_far,ψ))`. Absent phases enter as
/// zero voltage, matching the power-flow equations.
fn phase_flow_form(
    case: &NetworkCase,
    index: &NetworkIndex,
    vnode: &[CLin],
    line: usize,
    near: usize,
    far: usize,
    phase: Phase,
) -> Option<CQuad> {
    let near_node = index.node(near, phase)?;
    let y = &case.lines[line].y_series;
    let mut i_conj = CLin::default();
    for psi in Phase::ALL {
        let yc = y.get(phase, psi);
        if yc.norm() == 0.0 {
            continue;
        }
        if let Some(k) = index.node(near, psi) {
            i_conj.add_scaled(&vnode[k].conj(), yc.conj());
        }
        if let Some(k) = index.node(far, psi) {
            i_conj.add_scaled(&vnode[k].conj(), -yc.conj());
        }
    }
    let mut s = vnode[near_node].mul(&i_conj);
    s.compress();
    Some(s)
}

/// Net complex injection at a (bus, phase): sum of flows leaving the bus.
fn injection_form(
    case: &NetworkCase,
    index: &NetworkIndex,
    vnode: &[CLin],
    bus: usize,
    phase: Phase,
) -> CQuad {
    let mut total = CQuad::default();
    for &(li, from_side) in index.incident(bus) {
        let rl = index.resolved_lines()[li];
        let (near, far) = if from_side {
            (rl.from, rl.to)
        } else {
            (rl.to, rl.from)
        };
        if let Some(s) = phase_flow_form(case, index, vnode, rl.line, near, far, phase) {
            total.add(&s);
        }
    }
    total.compress();
    total
}

/// Builds the nonlinear program for one scenario and objective direction.
pub fn build_problem<'a>(
    case: &'a NetworkCase,
    index: &'a NetworkIndex,
    objective: &ObjectiveSpec,
    scenario: &ScenarioConfig,
) -> Result<Problem<'a>> {
    assert_eq!(
        case.unit_system,
        UnitSystem::PerUnit,
        "problems are built over per-unit cases"
    );
    let norm = objective.alpha_p.hypot(objective.alpha_q);
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidRequest(
            "objective direction (alpha_p, alpha_q) must be nonzero and finite".to_string(),
        ));
    }
    let spec = ObjectiveSpec {
        alpha_p: objective.alpha_p / norm,
        alpha_q: objective.alpha_q / norm,
        ref_bus: objective.ref_bus.clone(),
        ref_phase: objective.ref_phase,
    };
    let ref_bus = index.bus_index(&spec.ref_bus).ok_or_else(|| {
        Error::InvalidRequest(format!("unknown reference bus \"{}\"", spec.ref_bus))
    })?;
    if ref_bus != index.ref_bus() {
        return Err(Error::InvalidRequest(format!(
            "flexibility must be measured at the network reference bus, not \"{}\"",
            spec.ref_bus
        )));
    }
    if index.node(ref_bus, spec.ref_phase).is_none() {
        return Err(Error::RefPhaseAbsent {
            bus: spec.ref_bus.clone(),
            phase: spec.ref_phase.letter(),
        });
    }
    if scenario.vuf_limit.is_some() && index.monitored().is_empty() {
        return Err(Error::NoMonitoredBuses);
    }

    let layout = layout(case, index, spec.ref_phase, scenario);
    let vnode = voltage_forms(index, &layout);

    // Objective: maximise the projection of the reference injection onto the
    // direction, i.e. minimise its negation.
    let ref_injection = injection_form(case, index, &vnode, ref_bus, spec.ref_phase);
    let mut obj = QuadForm::default();
    obj.add_scaled(&ref_injection.re, -spec.alpha_p);
    obj.add_scaled(&ref_injection.im, -spec.alpha_q);
    obj.compress();

    let mut equalities = Vec::new();
    let mut inequalities = Vec::new();

    // Nodal balance at every non-reference node:
    //   injection(V) + load − generation − flexibility = 0.
    for (ni, node) in index.nodes().iter().enumerate() {
        if node.bus == index.ref_bus() {
            continue;
        }
        let inj = injection_form(case, index, &vnode, node.bus, node.phase);
        let mut p_row = inj.re;
        let mut q_row = inj.im;
        for load in &case.loads {
            if index.bus_index(&load.bus) == Some(node.bus) {
                p_row.constant += load.p.get(node.phase).unwrap_or(0.0);
                q_row.constant += load.q.get(node.phase).unwrap_or(0.0);
            }
        }
        for (ui, unit) in case.flex_units.iter().enumerate() {
            if index.bus_index(&unit.bus) == Some(node.bus) {
                if let Some(var) = layout.flex_p[ui][node.phase.index()] {
                    p_row.add_linear(var, -1.0);
                }
                if let Some(var) = layout.flex_q[ui][node.phase.index()] {
                    q_row.add_linear(var, -1.0);
                }
            }
        }
        for (gi, g) in case.generators.iter().enumerate() {
            if index.bus_index(&g.bus) == Some(node.bus) {
                if let Some(var) = layout.gen_p[gi][node.phase.index()] {
                    p_row.add_linear(var, -1.0);
                }
                if let Some(var) = layout.gen_q[gi][node.phase.index()] {
                    q_row.add_linear(var, -1.0);
                }
            }
        }
        p_row.compress();
        q_row.compress();
        equalities.push(Constraint {
            family: Family::Balance,
            expr: Expr::Quad(p_row),
        });
        equalities.push(Constraint {
            family: Family::Balance,
            expr: Expr::Quad(q_row),
        });
        let _ = ni;
    }

    // Voltage magnitude bounds at non-reference nodes.
    for (ni, node) in index.nodes().iter().enumerate() {
        if layout.voltage[ni].is_none() {
            continue;
        }
        let bus = &case.buses[node.bus];
        let mag_sq = vnode[ni].norm_sq();
        let mut upper = mag_sq.clone();
        upper.constant -= bus.v_max * bus.v_max;
        let mut lower = QuadForm::constant(bus.v_min * bus.v_min);
        lower.add_scaled(&mag_sq, -1.0);
        inequalities.push(Constraint {
            family: Family::VoltageUpper,
            expr: Expr::Quad(upper),
        });
        inequalities.push(Constraint {
            family: Family::VoltageLower,
            expr: Expr::Quad(lower),
        });
    }

    // Thermal limits: per line, phase and direction, |s|² ≤ s_max².
    for rl in index.resolved_lines() {
        let Some(s_max) = &case.lines[rl.line].s_max else {
            continue;
        };
        for (near, far) in [(rl.from, rl.to), (rl.to, rl.from)] {
            for phase in Phase::ALL {
                let limit = s_max[phase.index()];
                if !limit.is_finite() {
                    continue;
                }
                let Some(flow) = phase_flow_form(case, index, &vnode, rl.line, near, far, phase)
                else {
                    continue;
                };
                let constant_only = |qf: &QuadForm| qf.is_linear() && qf.linear.is_empty();
                if constant_only(&flow.re) && constant_only(&flow.im) {
                    continue; // phase not carried by this line
                }
                inequalities.push(Constraint {
                    family: Family::Thermal,
                    expr: Expr::SqMag {
                        re: flow.re,
                        im: flow.im,
                        limit_sq: limit * limit,
                    },
                });
            }
        }
    }

    // Voltage unbalance: |v2|² − t²|v1|² ≤ 0 at monitored buses, the smooth
    // squared form of VUF ≤ t·100%.
    if let Some(limit) = scenario.vuf_limit {
        let t = limit / 100.0;
        let a = rotation_operator();
        let a2 = a * a;
        let third = Complex64::new(1.0 / 3.0, 0.0);
        for &bus in index.monitored() {
            if bus == index.ref_bus() {
                continue; // fixed slack phasors, identically balanced
            }
            let va = &vnode[index.node(bus, Phase::A).expect("validated monitored bus")];
            let vb = &vnode[index.node(bus, Phase::B).expect("validated monitored bus")];
            let vc = &vnode[index.node(bus, Phase::C).expect("validated monitored bus")];
            let mut v1 = CLin::default();
            v1.add_scaled(va, third);
            v1.add_scaled(vb, a * third);
            v1.add_scaled(vc, a2 * third);
            let mut v2 = CLin::default();
            v2.add_scaled(va, third);
            v2.add_scaled(vb, a2 * third);
            v2.add_scaled(vc, a * third);
            let mut row = v2.norm_sq();
            row.add_scaled(&v1.norm_sq(), -t * t);
            row.compress();
            inequalities.push(Constraint {
                family: Family::Vuf,
                expr: Expr::Quad(row),
            });
        }
    }

    // Equipment boxes. Balanced units have one collapsed variable pair and,
    // by validation, identical bounds on every connected phase.
    for (ui, unit) in case.flex_units.iter().enumerate() {
        let mut seen = [false; 2];
        for p in unit.phases.iter() {
            for (axis, var) in [
                (0, layout.flex_p[ui][p.index()]),
                (1, layout.flex_q[ui][p.index()]),
            ] {
                let Some(var) = var else { continue };
                if unit.balanced && seen[axis] {
                    continue;
                }
                seen[axis] = true;
                let (lo, hi) = if axis == 0 {
                    (unit.p_min.get(p).unwrap_or(0.0), unit.p_max.get(p).unwrap_or(0.0))
                } else {
                    (unit.q_min.get(p).unwrap_or(0.0), unit.q_max.get(p).unwrap_or(0.0))
                };
                push_box(&mut inequalities, Family::FlexBox, var, lo, hi);
            }
        }
    }
    for (gi, g) in case.generators.iter().enumerate() {
        for p in g.p_min.phases().iter() {
            if let Some(var) = layout.gen_p[gi][p.index()] {
                push_box(
                    &mut inequalities,
                    Family::GenBox,
                    var,
                    g.p_min.get(p).unwrap_or(0.0),
                    g.p_max.get(p).unwrap_or(0.0),
                );
            }
            if let Some(var) = layout.gen_q[gi][p.index()] {
                push_box(
                    &mut inequalities,
                    Family::GenBox,
                    var,
                    g.q_min.get(p).unwrap_or(0.0),
                    g.q_max.get(p).unwrap_or(0.0),
                );
            }
        }
    }

    // Aggregate zero-sum coordination: flexibility on each non-reference
    // phase nets to zero across all units.
    if scenario.coordination == Coordination::PhaseRestricted
        && scenario.coordination_mode == CoordinationMode::AggregateZero
    {
        for phase in Phase::ALL {
            if phase == spec.ref_phase {
                continue;
            }
            for vars in [&layout.flex_p, &layout.flex_q] {
                let mut sum = LinForm::default();
                for per_unit in vars.iter() {
                    if let Some(var) = per_unit[phase.index()] {
                        sum.push(var, 1.0);
                    }
                }
                if !sum.terms.is_empty() {
                    equalities.push(Constraint {
                        family: Family::Coordination,
                        expr: Expr::Quad(QuadForm::from_linear(&sum)),
                    });
                }
            }
        }
    }

    // ε-constraint interval on the swept component of the reference
    // injection.
    if let Some(eps) = &scenario.epsilon_box {
        let swept = match eps.target {
            Axis::P => &ref_injection.re,
            Axis::Q => &ref_injection.im,
        };
        let mut upper = swept.clone();
        upper.constant -= eps.value + eps.epsilon;
        let mut lower = QuadForm::constant(eps.value - eps.epsilon);
        lower.add_scaled(swept, -1.0);
        inequalities.push(Constraint {
            family: Family::EpsilonBox,
            expr: Expr::Quad(upper),
        });
        inequalities.push(Constraint {
            family: Family::EpsilonBox,
            expr: Expr::Quad(lower),
        });
    }

    Ok(Problem {
        case,
        index,
        layout,
        objective_spec: spec,
        scenario: scenario.clone(),
        objective: obj,
        equalities,
        inequalities,
        ref_injection,
    })
}

fn push_box(out: &mut Vec<Constraint>, family: Family, var: usize, lo: f64, hi: f64) {
    let mut upper = QuadForm::constant(-hi);
    upper.add_linear(var, 1.0);
    out.push(Constraint {
        family,
        expr: Expr::Quad(upper),
    });
    let mut lower = QuadForm::constant(lo);
    lower.add_linear(var, -1.0);
    out.push(Constraint {
        family,
        expr: Expr::Quad(lower),
    });
}
