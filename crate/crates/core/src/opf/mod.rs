//! The nonlinear flexibility-estimation program: builds the multi-phase AC
//! OPF with optional voltage-unbalance, phase-coordination, balanced-unit
//! and ε-box constraints, and solves it with a primal-dual interior-point
//! method with analytic first and second derivatives.

pub(crate) mod build;
mod ipm;
mod quad;

pub use ipm::IpmOptions;
pub use quad::{CLin, CQuad, LinForm, QuadForm};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::netmodel::{NetworkCase, NetworkIndex, PerPhase, Phase};
use crate::powerflow::{self, PhasorState};
use crate::Result;

/// Optimisation direction at the reference bus/phase.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectiveSpec {
    pub alpha_p: f64,
    pub alpha_q: f64,
    pub ref_bus: String,
    pub ref_phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coordination {
    /// All flexible units may jointly provide flexibility.
    Full,
    /// Units not connected to the reference phase are restricted.
    PhaseRestricted,
}

/// How the phase-restriction is encoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoordinationMode {
    /// Every off-phase unit is fixed at zero output.
    PerUnitZero,
    /// The aggregate off-phase P and Q sums are constrained to zero.
    AggregateZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    P,
    Q,
}

/// One ε-constraint interval box on the reference-bus injection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonBox {
    pub target: Axis,
    /// Interval centre, per-unit.
    pub value: f64,
    /// Half-width ε, per-unit.
    pub epsilon: f64,
}

/// The scenario knobs of a study.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    /// VUF threshold in percent; `None` leaves unbalance unconstrained.
    pub vuf_limit: Option<f64>,
    pub coordination: Coordination,
    pub coordination_mode: CoordinationMode,
    pub epsilon_box: Option<EpsilonBox>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            vuf_limit: None,
            coordination: Coordination::Full,
            coordination_mode: CoordinationMode::PerUnitZero,
            epsilon_box: None,
        }
    }
}

/// Constraint family, used for accounting and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Balance,
    VoltageLower,
    VoltageUpper,
    Thermal,
    Vuf,
    FlexBox,
    GenBox,
    Coordination,
    EpsilonBox,
}

/// One scalar constraint: an equality `expr = 0` or inequality `expr ≤ 0`.
#[derive(Debug, Clone)]
pub struct Constraint {
    pub family: Family,
    pub expr: Expr,
}

#[derive(Debug, Clone)]
pub enum Expr {
    Quad(QuadForm),
    /// `re(x)² + im(x)² − limit_sq`.
    SqMag {
        re: QuadForm,
        im: QuadForm,
        limit_sq: f64,
    },
}

impl Expr {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Quad(qf) => qf.value(x),
            Expr::SqMag { re, im, limit_sq } => {
                let r = re.value(x);
                let i = im.value(x);
                r * r + i * i - limit_sq
            }
        }
    }

    pub fn add_gradient(&self, x: &[f64], scale: f64, out: &mut DVector<f64>) {
        match self {
            Expr::Quad(qf) => qf.add_gradient(x, scale, out),
            Expr::SqMag { re, im, .. } => {
                re.add_gradient(x, scale * 2.0 * re.value(x), out);
                im.add_gradient(x, scale * 2.0 * im.value(x), out);
            }
        }
    }

    pub fn add_hessian(&self, x: &[f64], scale: f64, out: &mut DMatrix<f64>) {
        match self {
            Expr::Quad(qf) => qf.add_hessian(scale, out),
            Expr::SqMag { re, im, .. } => {
                // ∇²(u² + v²) = 2(∇u∇uᵀ + u∇²u + ∇v∇vᵀ + v∇²v)
                for part in [re, im] {
                    part.add_hessian(2.0 * scale * part.value(x), out);
                    let grad = part.gradient_terms(x);
                    for &(i, gi) in &grad {
                        for &(j, gj) in &grad {
                            out[(i, j)] += 2.0 * scale * gi * gj;
                        }
                    }
                }
            }
        }
    }
}

/// Rectangular variable pair of one complex voltage.
#[derive(Debug, Clone, Copy)]
pub struct VoltagePair {
    pub re: usize,
    pub im: usize,
}

/// Variable layout of a built problem. Balanced flex units collapse to one
/// P and one Q variable shared by all their phases; off-phase units fixed to
/// zero under `PerUnitZero` have no variables at all.
#[derive(Debug, Clone)]
pub struct ProblemLayout {
    pub n_vars: usize,
    /// Per node; `None` for reference-bus nodes (fixed slack phasors).
    pub voltage: Vec<Option<VoltagePair>>,
    pub flex_p: Vec<[Option<usize>; 3]>,
    pub flex_q: Vec<[Option<usize>; 3]>,
    pub gen_p: Vec<[Option<usize>; 3]>,
    pub gen_q: Vec<[Option<usize>; 3]>,
}

/// The assembled nonlinear program.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub case: &'a NetworkCase,
    pub index: &'a NetworkIndex,
    pub layout: ProblemLayout,
    /// Normalised direction coefficients actually used.
    pub objective_spec: ObjectiveSpec,
    pub scenario: ScenarioConfig,
    pub objective: QuadForm,
    pub equalities: Vec<Constraint>,
    pub inequalities: Vec<Constraint>,
    /// Complex injection at the reference bus/phase as a form over x.
    pub ref_injection: CQuad,
}

pub use build::build_problem;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    MaxIter,
    NumericalFailure,
}

/// Optimised flexibility setpoints of one unit, per-unit.
#[derive(Debug, Clone, Default)]
pub struct FlexSetpoint {
    pub p: PerPhase,
    pub q: PerPhase,
}

#[derive(Debug, Clone)]
pub struct OPFSolution {
    pub status: SolveStatus,
    pub state: PhasorState,
    pub flex_setpoints: Vec<FlexSetpoint>,
    /// Objective value, per-unit.
    pub objective_value: f64,
    /// (P, Q) injection at the reference bus/phase, per-unit, recomputed
    /// from the converged voltages.
    pub ref_injection: (f64, f64),
    /// Largest of the scaled KKT optimality conditions at the final point.
    pub kkt_residual: f64,
    /// Largest constraint violation, per-unit.
    pub max_violation: f64,
    pub iterations: usize,
    /// Raw variable vector; feeds warm starts along boundary sweeps.
    pub x: DVector<f64>,
}

impl<'a> Problem<'a> {
    pub fn n_vars(&self) -> usize {
        self.layout.n_vars
    }

    /// Flat start: slack voltages everywhere, zero flexibility, generator
    /// setpoints clamped into their boxes.
    pub fn flat_start(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.n_vars());
        for (ni, pair) in self.layout.voltage.iter().enumerate() {
            if let Some(pair) = pair {
                let v = powerflow::slack_voltage(self.index.nodes()[ni].phase);
                x[pair.re] = v.re;
                x[pair.im] = v.im;
            }
        }
        for (gi, g) in self.case.generators.iter().enumerate() {
            for p in Phase::ALL {
                if let Some(var) = self.layout.gen_p[gi][p.index()] {
                    let lo = g.p_min.get(p).unwrap_or(0.0);
                    let hi = g.p_max.get(p).unwrap_or(0.0);
                    x[var] = 0.0f64.clamp(lo, hi);
                }
                if let Some(var) = self.layout.gen_q[gi][p.index()] {
                    let lo = g.q_min.get(p).unwrap_or(0.0);
                    let hi = g.q_max.get(p).unwrap_or(0.0);
                    x[var] = 0.0f64.clamp(lo, hi);
                }
            }
        }
        x
    }

    /// Full voltage vector (fixed slack phasors plus variables).
    pub fn voltages(&self, x: &DVector<f64>) -> Vec<Complex64> {
        self.layout
            .voltage
            .iter()
            .enumerate()
            .map(|(ni, pair)| match pair {
                Some(pair) => Complex64::new(x[pair.re], x[pair.im]),
                None => powerflow::slack_voltage(self.index.nodes()[ni].phase),
            })
            .collect()
    }

    pub fn flex_setpoints(&self, x: &DVector<f64>) -> Vec<FlexSetpoint> {
        self.case
            .flex_units
            .iter()
            .enumerate()
            .map(|(ui, unit)| {
                let mut sp = FlexSetpoint::default();
                for p in unit.phases.iter() {
                    let pv = self.layout.flex_p[ui][p.index()].map_or(0.0, |k| x[k]);
                    let qv = self.layout.flex_q[ui][p.index()].map_or(0.0, |k| x[k]);
                    sp.p.set(p, pv);
                    sp.q.set(p, qv);
                }
                sp
            })
            .collect()
    }

    pub(crate) fn eval_objective(&self, x: &DVector<f64>) -> (f64, DVector<f64>) {
        let xs = x.as_slice();
        let mut grad = DVector::zeros(self.n_vars());
        self.objective.add_gradient(xs, 1.0, &mut grad);
        (self.objective.value(xs), grad)
    }

    pub(crate) fn eval_constraints(
        &self,
        x: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let xs = x.as_slice();
        let n = self.n_vars();
        let mut g = DVector::zeros(self.equalities.len());
        let mut dg = DMatrix::zeros(self.equalities.len(), n);
        let mut row_grad = DVector::zeros(n);
        for (k, c) in self.equalities.iter().enumerate() {
            g[k] = c.expr.value(xs);
            row_grad.fill(0.0);
            c.expr.add_gradient(xs, 1.0, &mut row_grad);
            dg.row_mut(k).copy_from(&row_grad.transpose());
        }
        let mut h = DVector::zeros(self.inequalities.len());
        let mut dh = DMatrix::zeros(self.inequalities.len(), n);
        for (k, c) in self.inequalities.iter().enumerate() {
            h[k] = c.expr.value(xs);
            row_grad.fill(0.0);
            c.expr.add_gradient(xs, 1.0, &mut row_grad);
            dh.row_mut(k).copy_from(&row_grad.transpose());
        }
        (g, h, dg, dh)
    }

    /// Hessian of the Lagrangian `f + λᵀg + μᵀh`.
    pub(crate) fn lagrangian_hessian(
        &self,
        x: &DVector<f64>,
        lam: &DVector<f64>,
        mu: &DVector<f64>,
    ) -> DMatrix<f64> {
        let xs = x.as_slice();
        let n = self.n_vars();
        let mut hess = DMatrix::zeros(n, n);
        self.objective.add_hessian(1.0, &mut hess);
        for (k, c) in self.equalities.iter().enumerate() {
            if lam[k] != 0.0 {
                c.expr.add_hessian(xs, lam[k], &mut hess);
            }
        }
        for (k, c) in self.inequalities.iter().enumerate() {
            if mu[k] != 0.0 {
                c.expr.add_hessian(xs, mu[k], &mut hess);
            }
        }
        hess
    }
}

/// Solves the program from the given warm start (falling back to a flat
/// start). Non-optimal outcomes are reported in the status, not as errors.
pub fn solve(problem: &Problem, warm_start: Option<&DVector<f64>>) -> OPFSolution {
    solve_with(problem, warm_start, &IpmOptions::default())
}

/// [`solve`] with explicit solver options.
pub fn solve_with(
    problem: &Problem,
    warm_start: Option<&DVector<f64>>,
    options: &IpmOptions,
) -> OPFSolution {
    let x0 = warm_start
        .cloned()
        .unwrap_or_else(|| problem.flat_start());
    let outcome = ipm::minimize(problem, x0, options);
    // A failed warm-started solve often recovers from a flat start.
    let outcome = if outcome.status != SolveStatus::Optimal && warm_start.is_some() {
        let retry = ipm::minimize(problem, problem.flat_start(), options);
        if retry.status == SolveStatus::Optimal {
            retry
        } else {
            outcome
        }
    } else {
        outcome
    };

    let x = if outcome.x.iter().all(|v| v.is_finite()) {
        outcome.x
    } else {
        problem.flat_start()
    };
    let v = problem.voltages(&x);
    let state = PhasorState::from_voltages(problem.case, problem.index, v);
    let ref_inj = problem.ref_injection.value(x.as_slice());
    OPFSolution {
        status: outcome.status,
        flex_setpoints: problem.flex_setpoints(&x),
        objective_value: problem.objective.value(x.as_slice()),
        ref_injection: (ref_inj.re, ref_inj.im),
        kkt_residual: outcome.kkt_residual,
        max_violation: outcome.max_violation,
        iterations: outcome.iterations,
        state,
        x,
    }
}

/// Compares the analytic constraint Jacobian and objective gradient against
/// central finite differences (step 1e-6) at `x`; returns the largest
/// relative error.
pub fn check_derivatives(problem: &Problem, x: &DVector<f64>) -> f64 {
    let step = 1e-6;
    let (_, grad) = problem.eval_objective(x);
    let (_, _, dg, dh) = problem.eval_constraints(x);
    let mut worst = 0.0f64;
    let mut record = |analytic: f64, fd: f64| {
        let scale = analytic.abs().max(fd.abs()).max(1.0);
        worst = worst.max((analytic - fd).abs() / scale);
    };
    for k in 0..problem.n_vars() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += step;
        xm[k] -= step;
        let (fp, _) = problem.eval_objective(&xp);
        let (fm, _) = problem.eval_objective(&xm);
        record(grad[k], (fp - fm) / (2.0 * step));
        let (gp, hp, _, _) = problem.eval_constraints(&xp);
        let (gm, hm, _, _) = problem.eval_constraints(&xm);
        for row in 0..gp.len() {
            record(dg[(row, k)], (gp[row] - gm[row]) / (2.0 * step));
        }
        for row in 0..hp.len() {
            record(dh[(row, k)], (hp[row] - hm[row]) / (2.0 * step));
        }
    }
    worst
}

/// Convenience wrapper: builds and solves in one call.
pub fn build_and_solve(
    case: &NetworkCase,
    index: &NetworkIndex,
    objective: &ObjectiveSpec,
    scenario: &ScenarioConfig,
    warm_start: Option<&DVector<f64>>,
) -> Result<OPFSolution> {
    let problem = build_problem(case, index, objective, scenario)?;
    Ok(solve(&problem, warm_start))
}
