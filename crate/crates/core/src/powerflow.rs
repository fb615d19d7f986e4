//! Bus-injection three-phase power-flow equations, a Newton solver for fixed
//! injections, and symmetrical components / voltage unbalance factors.
//!
//! Voltages are handled in rectangular coordinates throughout. The flow
//! convention is fixed as *flows leaving bus i*: the nodal injection at a
//! (bus, phase) node equals the sum of complex flows leaving that bus over
//! its incident lines, which captures series losses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::netmodel::{NetworkCase, NetworkIndex, Phase, YMatrix};
use crate::{Error, Result};

/// Slack phasor for a phase: 1.0 p.u. at {0°, −120°, +120°}.
pub fn slack_voltage(phase: Phase) -> Complex64 {
    let angle = match phase {
        Phase::A => 0.0,
        Phase::B => -2.0 * std::f64::consts::FRAC_PI_3,
        Phase::C => 2.0 * std::f64::consts::FRAC_PI_3,
    };
    Complex64::from_polar(1.0, angle)
}

/// Net scheduled injection per (bus, phase) node: generation minus load plus
/// flexibility, per-unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Setpoints {
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl Setpoints {
    pub fn zeros(index: &NetworkIndex) -> Setpoints {
        Setpoints {
            p: vec![0.0; index.n_nodes()],
            q: vec![0.0; index.n_nodes()],
        }
    }

    /// Loads only (all flexibility at zero output).
    pub fn from_loads(case: &NetworkCase, index: &NetworkIndex) -> Setpoints {
        let mut sp = Setpoints::zeros(index);
        for load in &case.loads {
            let bus = index.bus_index(&load.bus).expect("validated case");
            for p in Phase::ALL {
                if let Some(node) = index.node(bus, p) {
                    sp.p[node] -= load.p.get(p).unwrap_or(0.0);
                    sp.q[node] -= load.q.get(p).unwrap_or(0.0);
                }
            }
        }
        sp
    }

    /// Adds a flexibility setpoint at a node.
    pub fn add(&mut self, node: usize, p: f64, q: f64) {
        self.p[node] += p;
        self.q[node] += q;
    }
}

/// Complex voltages, injections and branch flows for one operating condition.
#[derive(Debug, Clone)]
pub struct PhasorState {
    /// Voltage per node, per-unit.
    pub v: Vec<Complex64>,
    /// Net complex injection per node (sum of flows leaving the bus).
    pub s_inj: Vec<Complex64>,
    /// Per line: flows per phase leaving the `from` end (`[0]`) and the
    /// `to` end (`[1]`). Entries for absent phases are zero.
    pub s_branch: Vec<[[Complex64; 3]; 2]>,
}

impl PhasorState {
    /// Derives injections and branch flows from a voltage vector.
    pub fn from_voltages(case: &NetworkCase, index: &NetworkIndex, v: Vec<Complex64>) -> PhasorState {
        let mut s_branch = vec![[[Complex64::default(); 3]; 2]; case.lines.len()];
        for rl in index.resolved_lines() {
            let y = &case.lines[rl.line].y_series;
            let vf = bus_voltages(index, &v, rl.from);
            let vt = bus_voltages(index, &v, rl.to);
            s_branch[rl.line][0] = branch_flow(&vf, &vt, y);
            s_branch[rl.line][1] = branch_flow(&vt, &vf, y);
        }
        let mut s_inj = vec![Complex64::default(); index.n_nodes()];
        for (ni, node) in index.nodes().iter().enumerate() {
            let mut s = Complex64::default();
            for &(li, from_side) in index.incident(node.bus) {
                let side = if from_side { 0 } else { 1 };
                s += s_branch[index.resolved_lines()[li].line][side][node.phase.index()];
            }
            s_inj[ni] = s;
        }
        PhasorState { v, s_inj, s_branch }
    }

    pub fn voltage(&self, index: &NetworkIndex, bus: usize, phase: Phase) -> Option<Complex64> {
        index.node(bus, phase).map(|n| self.v[n])
    }

    /// Injection at a (bus, phase), per-unit.
    pub fn injection(&self, index: &NetworkIndex, bus: usize, phase: Phase) -> Option<Complex64> {
        index.node(bus, phase).map(|n| self.s_inj[n])
    }

    /// VUF in percent at a three-phase bus.
    pub fn vuf_at(&self, index: &NetworkIndex, bus: usize) -> Result<f64> {
        let va = self.voltage(index, bus, Phase::A);
        let vb = self.voltage(index, bus, Phase::B);
        let vc = self.voltage(index, bus, Phase::C);
        match (va, vb, vc) {
            (Some(va), Some(vb), Some(vc)) => vuf(&sequence_components(va, vb, vc)),
            _ => Err(Error::UndefinedVuf { v1: 0.0 }),
        }
    }
}

fn bus_voltages(index: &NetworkIndex, v: &[Complex64], bus: usize) -> [Complex64; 3] {
    let mut out = [Complex64::default(); 3];
    for p in Phase::ALL {
        if let Some(n) = index.node(bus, p) {
            out[p.index()] = v[n];
        }
    }
    out
}

/// Complex flow leaving the `i` end of a line: `diag[V_i (V_i − V_j)^H Y^H]`.
pub fn branch_flow(v_i: &[Complex64; 3], v_j: &[Complex64; 3], y: &YMatrix) -> [Complex64; 3] {
    let mut s = [Complex64::default(); 3];
    for (phi, out) in s.iter_mut().enumerate() {
        let mut acc = Complex64::default();
        for psi in 0..3 {
            acc += (v_i[psi] - v_j[psi]).conj() * y.0[phi][psi].conj();
        }
        *out = v_i[phi] * acc;
    }
    s
}

/// One P and one Q residual per non-reference node, in node order:
/// `[p_0, q_0, p_1, q_1, …]`. Each is the scheduled net injection minus the
/// corresponding component of the nodal flow sum; the zero vector iff the
/// voltages satisfy the power-flow equations.
pub fn residuals(
    case: &NetworkCase,
    index: &NetworkIndex,
    setpoints: &Setpoints,
    v: &[Complex64],
) -> Vec<f64> {
    let state = PhasorState::from_voltages(case, index, v.to_vec());
    let mut out = Vec::with_capacity(2 * index.n_nodes());
    for (ni, node) in index.nodes().iter().enumerate() {
        if node.bus == index.ref_bus() {
            continue;
        }
        out.push(setpoints.p[ni] - state.s_inj[ni].re);
        out.push(setpoints.q[ni] - state.s_inj[ni].im);
    }
    out
}

#[derive(Debug, Clone, Copy)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tolerance: 1e-8,
            max_iterations: 50,
        }
    }
}

/// Maps non-reference nodes to consecutive unknown slots.
pub(crate) struct UnknownMap {
    /// node index -> unknown slot (None for reference-bus nodes).
    pub slot: Vec<Option<usize>>,
    pub n_unknown: usize,
}

impl UnknownMap {
    pub fn new(index: &NetworkIndex) -> UnknownMap {
        let mut slot = vec![None; index.n_nodes()];
        let mut n = 0;
        for (ni, node) in index.nodes().iter().enumerate() {
            if node.bus != index.ref_bus() {
                slot[ni] = Some(n);
                n += 1;
            }
        }
        UnknownMap { slot, n_unknown: n }
    }
}

/// Solves the power-flow equality system by Newton's method from a flat
/// start (slack phasors everywhere). Reference-bus voltages are fixed, not
/// variables.
pub fn solve_newton(
    case: &NetworkCase,
    index: &NetworkIndex,
    setpoints: &Setpoints,
    options: &NewtonOptions,
) -> Result<PhasorState> {
    let unknowns = UnknownMap::new(index);
    let n = unknowns.n_unknown;
    let mut v: Vec<Complex64> = index
        .nodes()
        .iter()
        .map(|node| slack_voltage(node.phase))
        .collect();

    let mut residual = residual_vector(case, index, setpoints, &unknowns, &v);
    for iteration in 0..options.max_iterations {
        let norm = residual.amax();
        if norm < options.tolerance {
            return Ok(PhasorState::from_voltages(case, index, v));
        }
        let jac = jacobian(case, index, &unknowns, &v);
        let lu = jac.lu();
        let step = lu
            .solve(&residual)
            .ok_or(Error::SingularJacobian { iteration })?;
        if step.iter().any(|x| !x.is_finite()) {
            return Err(Error::SingularJacobian { iteration });
        }
        for (ni, slot) in unknowns.slot.iter().enumerate() {
            if let Some(k) = slot {
                v[ni] -= Complex64::new(step[2 * k], step[2 * k + 1]);
            }
        }
        residual = residual_vector(case, index, setpoints, &unknowns, &v);
        let _ = n;
    }
    Err(Error::PowerFlowDiverged {
        iterations: options.max_iterations,
        residual: residual.amax(),
    })
}

fn residual_vector(
    case: &NetworkCase,
    index: &NetworkIndex,
    setpoints: &Setpoints,
    unknowns: &UnknownMap,
    v: &[Complex64],
) -> DVector<f64> {
    let mut r = DVector::zeros(2 * unknowns.n_unknown);
    let res = residuals(case, index, setpoints, v);
    // `residuals` already iterates non-reference nodes in node order, which
    // matches the unknown slots.
    for (k, val) in res.iter().enumerate() {
        r[k] = *val;
    }
    r
}

/// Analytic Jacobian of the residual vector w.r.t. rectangular voltage
/// unknowns, ordered `[e_0, f_0, e_1, f_1, …]`.
fn jacobian(
    case: &NetworkCase,
    index: &NetworkIndex,
    unknowns: &UnknownMap,
    v: &[Complex64],
) -> DMatrix<f64> {
    let n = unknowns.n_unknown;
    let mut jac = DMatrix::zeros(2 * n, 2 * n);
    for (ni, node) in index.nodes().iter().enumerate() {
        let Some(row) = unknowns.slot[ni] else { continue };
        // Current leaving this node: I = Σ_l Σ_ψ Y[φ,ψ] (V_iψ − V_jψ),
        // with complex coefficients on every involved node voltage.
        let mut current = Complex64::default();
        // (node index, coefficient) pairs; duplicates are fine.
        let mut coeffs: Vec<(usize, Complex64)> = Vec::new();
        for &(li, from_side) in index.incident(node.bus) {
            let rl = index.resolved_lines()[li];
            let (near, far) = if from_side {
                (rl.from, rl.to)
            } else {
                (rl.to, rl.from)
            };
            let y = &case.lines[rl.line].y_series;
            for psi in Phase::ALL {
                let yc = y.get(node.phase, psi);
                if yc.norm() == 0.0 {
                    continue;
                }
                let vn = index.node(near, psi);
                let vf = index.node(far, psi);
                let v_near = vn.map(|k| v[k]).unwrap_or_default();
                let v_far = vf.map(|k| v[k]).unwrap_or_default();
                current += yc * (v_near - v_far);
                if let Some(k) = vn {
                    coeffs.push((k, yc));
                }
                if let Some(k) = vf {
                    coeffs.push((k, -yc));
                }
            }
        }
        let v_m = v[ni];
        // s = V_m conj(I):
        //   ∂s/∂e_k = [k==m] conj(I) + V_m conj(c_k)
        //   ∂s/∂f_k = j[k==m] conj(I) − j V_m conj(c_k)
        // Residual is setpoint − s, hence the negated real/imag parts.
        let mut add = |k: usize, ds_de: Complex64, ds_df: Complex64| {
            if let Some(col) = unknowns.slot[k] {
                jac[(2 * row, 2 * col)] -= ds_de.re;
                jac[(2 * row, 2 * col + 1)] -= ds_df.re;
                jac[(2 * row + 1, 2 * col)] -= ds_de.im;
                jac[(2 * row + 1, 2 * col + 1)] -= ds_df.im;
            }
        };
        let conj_i = current.conj();
        add(ni, conj_i, Complex64::i() * conj_i);
        for (k, c) in coeffs {
            let t = v_m * c.conj();
            add(k, t, -Complex64::i() * t);
        }
    }
    jac
}

// ---------------------------------------------------------------------------
// Symmetrical components
// ---------------------------------------------------------------------------

/// Zero/positive/negative sequence voltages of one bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceTriple {
    pub v0: Complex64,
    pub v1: Complex64,
    pub v2: Complex64,
}

/// Rotation operator `a = 1∠120°`.
pub fn rotation_operator() -> Complex64 {
    Complex64::from_polar(1.0, 2.0 * std::f64::consts::FRAC_PI_3)
}

/// Fortescue transform of three phase voltages.
pub fn sequence_components(va: Complex64, vb: Complex64, vc: Complex64) -> SequenceTriple {
    let a = rotation_operator();
    let a2 = a * a;
    SequenceTriple {
        v0: (va + vb + vc) / 3.0,
        v1: (va + a * vb + a2 * vc) / 3.0,
        v2: (va + a2 * vb + a * vc) / 3.0,
    }
}

/// Guard below which the positive sequence is considered degenerate.
pub const VUF_GUARD: f64 = 1e-6;

/// Voltage unbalance factor in percent: `100·|v2|/|v1|`.
pub fn vuf(seq: &SequenceTriple) -> Result<f64> {
    let v1 = seq.v1.norm();
    if v1 <= VUF_GUARD {
        return Err(Error::UndefinedVuf { v1 });
    }
    Ok(100.0 * seq.v2.norm() / v1)
}
