//! Primal-dual interior-point solver for the flexibility program.
//!
//! Standard-form NLP `min f(x) s.t. g(x) = 0, h(x) ≤ 0` with slacks `z > 0`
//! on the inequalities and a log-barrier with coefficient `γ`, driven to zero
//! by `γ ← σ·zᵀμ/nᵢ`. Each iteration solves the condensed Newton KKT system
//!
//! ```text
//! [ M   ∇gᵀ ] [Δx]   [ -N ]        M = ∇²L + ∇hᵀ diag(μ/z) ∇h
//! [ ∇g   0  ] [Δλ] = [ -g ]        N = ∇L + ∇hᵀ diag(1/z)(γe + μ∘h)
//! ```
//!
//! then recovers `Δz`, `Δμ` and takes separate primal/dual steps scaled to
//! keep `z` and `μ` strictly positive.

use nalgebra::{DMatrix, DVector};

use std::collections::HashSet;

use super::{Expr, Problem, SolveStatus};

#[derive(Debug, Clone, Copy)]
pub struct IpmOptions {
    /// Shared tolerance of the four scaled KKT conditions.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Fraction-to-boundary backoff.
    pub xi: f64,
    /// Centering parameter.
    pub sigma: f64,
    /// Initial slack / multiplier magnitude.
    pub z0: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            tolerance: 1e-6,
            max_iterations: 3000,
            xi: 0.99995,
            sigma: 0.1,
            z0: 1.0,
        }
    }
}

pub(super) struct Outcome {
    pub status: SolveStatus,
    pub x: DVector<f64>,
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub iterations: usize,
}

/// Largest violation over equalities and inequalities.
fn violation(g: &DVector<f64>, h: &DVector<f64>) -> f64 {
    let ge = if g.is_empty() { 0.0 } else { g.amax() };
    let hi = h.iter().fold(0.0f64, |m, &v| m.max(v));
    ge.max(hi)
}

/// Euclidean norm of the perturbed KKT residual
/// `[∇L; g; h + z; z∘μ − γe]` at a trial point.
fn kkt_residual_norm(
    problem: &Problem,
    x: &DVector<f64>,
    lam: &DVector<f64>,
    z: &DVector<f64>,
    mu: &DVector<f64>,
    gamma: f64,
) -> f64 {
    if x.iter().any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let (_, df) = problem.eval_objective(x);
    let (g, h, dg, dh) = problem.eval_constraints(x);
    let mut lx = df;
    if !lam.is_empty() {
        lx += dg.transpose() * lam;
    }
    if !mu.is_empty() {
        lx += dh.transpose() * mu;
    }
    let mut sq = lx.norm_squared() + g.norm_squared();
    for k in 0..h.len() {
        let r1 = h[k] + z[k];
        let r2 = z[k] * mu[k] - gamma;
        sq += r1 * r1 + r2 * r2;
    }
    sq.sqrt()
}

pub(super) fn minimize(problem: &Problem, x0: DVector<f64>, opts: &IpmOptions) -> Outcome {
    let n = problem.n_vars();
    let neq = problem.equalities.len();
    let niq = problem.inequalities.len();

    let mut x = x0;
    let mut lam = DVector::zeros(neq);
    let (_, mut df) = problem.eval_objective(&x);
    let (mut g, mut h, mut dg, mut dh) = problem.eval_constraints(&x);

    let mut z = DVector::from_element(niq, opts.z0);
    for k in 0..niq {
        if h[k] < -opts.z0 {
            z[k] = -h[k];
        }
    }
    let mut gamma = 1.0;
    let mut mu = DVector::from_element(niq, opts.z0);
    for k in 0..niq {
        if gamma / z[k] > opts.z0 {
            mu[k] = gamma / z[k];
        }
    }

    let mut f_old = f64::INFINITY;
    let mut kkt = f64::INFINITY;
    let mut no_progress = 0usize;
    let mut best_residual = f64::INFINITY;
    let fail = |x: DVector<f64>, kkt: f64, viol: f64, it: usize| Outcome {
        status: SolveStatus::NumericalFailure,
        x,
        kkt_residual: kkt,
        max_violation: viol,
        iterations: it,
    };

    for iteration in 0..opts.max_iterations {
        // Scaled KKT optimality measures.
        let lx = {
            let mut lx = df.clone();
            if neq > 0 {
                lx += dg.transpose() * &lam;
            }
            if niq > 0 {
                lx += dh.transpose() * &mu;
            }
            lx
        };
        let x_norm = if n == 0 { 0.0 } else { x.amax() };
        let z_norm = if niq == 0 { 0.0 } else { z.amax() };
        let lam_norm = if neq == 0 { 0.0 } else { lam.amax() };
        let mu_norm = if niq == 0 { 0.0 } else { mu.amax() };
        let f = problem.objective.value(x.as_slice());
        let feascond = violation(&g, &h) / (1.0 + x_norm.max(z_norm));
        let gradcond = (if n == 0 { 0.0 } else { lx.amax() }) / (1.0 + lam_norm.max(mu_norm));
        let compcond = z.dot(&mu) / (1.0 + x_norm);
        let costcond = (f - f_old).abs() / (1.0 + f_old.abs());
        kkt = feascond.max(gradcond).max(compcond).max(costcond);
        if !kkt.is_finite() {
            return fail(x, kkt, violation(&g, &h), iteration);
        }
        if feascond < opts.tolerance
            && gradcond < opts.tolerance
            && compcond < opts.tolerance
            && costcond < opts.tolerance
        {
            return Outcome {
                status: SolveStatus::Optimal,
                kkt_residual: kkt,
                max_violation: violation(&g, &h),
                x,
                iterations: iteration,
            };
        }
        f_old = f;

        // Condensed Newton system.
        let lxx = problem.lagrangian_hessian(&x, &lam, &mu);
        let mut m_mat = lxx;
        let mut n_vec = lx;
        for k in 0..niq {
            let row = dh.row(k);
            let w = mu[k] / z[k];
            // M += (μ_k/z_k) ∇h_k∇h_kᵀ
            for (i, &ri) in row.iter().enumerate() {
                if ri == 0.0 {
                    continue;
                }
                for (j, &rj) in row.iter().enumerate() {
                    if rj != 0.0 {
                        m_mat[(i, j)] += w * ri * rj;
                    }
                }
            }
            let scale = (gamma + mu[k] * h[k]) / z[k];
            for (i, &ri) in row.iter().enumerate() {
                n_vec[i] += scale * ri;
            }
        }

        let dim = n + neq;
        let mut kkt_mat = DMatrix::zeros(dim, dim);
        kkt_mat.view_mut((0, 0), (n, n)).copy_from(&m_mat);
        if neq > 0 {
            kkt_mat
                .view_mut((0, n), (n, neq))
                .copy_from(&dg.transpose());
            kkt_mat.view_mut((n, 0), (neq, n)).copy_from(&dg);
        }
        let mut rhs = DVector::zeros(dim);
        for i in 0..n {
            rhs[i] = -n_vec[i];
        }
        for k in 0..neq {
            rhs[n + k] = -g[k];
        }
        let mut sol = kkt_mat.clone().lu().solve(&rhs);
        if sol.as_ref().map_or(true, |s| s.iter().any(|v| !v.is_finite())) {
            // Regularise once: inertia-correcting shifts on both blocks.
            let mut reg = kkt_mat;
            for i in 0..n {
                reg[(i, i)] += 1e-8;
            }
            for k in 0..neq {
                reg[(n + k, n + k)] -= 1e-8;
            }
            sol = reg.lu().solve(&rhs);
        }
        let Some(sol) = sol else {
            return fail(x, kkt, violation(&g, &h), iteration);
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return fail(x, kkt, violation(&g, &h), iteration);
        }
        let dx = sol.rows(0, n).into_owned();
        let dlam = sol.rows(n, neq).into_owned();
        let dz = if niq > 0 {
            -(&h + &z + &dh * &dx)
        } else {
            DVector::zeros(0)
        };
        let mut dmu = DVector::zeros(niq);
        for k in 0..niq {
            dmu[k] = -mu[k] + (gamma - mu[k] * dz[k]) / z[k];
        }

        // Fraction-to-boundary step lengths.
        let mut alpha_p = 1.0f64;
        let mut alpha_d = 1.0f64;
        for k in 0..niq {
            if dz[k] < 0.0 {
                alpha_p = alpha_p.min(opts.xi * (-z[k] / dz[k]));
            }
            if dmu[k] < 0.0 {
                alpha_d = alpha_d.min(opts.xi * (-mu[k] / dmu[k]));
            }
        }
        if alpha_p < 1e-12 && alpha_d < 1e-12 {
            break; // stalled against the boundary
        }

        // Plain MIPS update with separate primal and dual step lengths.
        // Damping it (for example to force descent of the perturbed-KKT
        // residual) looks safer but stalls in the flat valleys this problem
        // class produces — the objective is nearly linear in the equipment
        // variables — so the undamped step is taken whenever it stays
        // finite. A residual-based counter detects genuine limit cycles and
        // hands over to the active-set polish below.
        let trial = |sp: f64, sd: f64| {
            let xc = &x + sp * &dx;
            let lamc = &lam + sd * &dlam;
            let (zc, muc) = if niq > 0 {
                (&z + sp * &dz, &mu + sd * &dmu)
            } else {
                (z.clone(), mu.clone())
            };
            let rc = kkt_residual_norm(problem, &xc, &lamc, &zc, &muc, gamma);
            (rc, xc, lamc, zc, muc)
        };
        let mut accepted = trial(alpha_p, alpha_d);
        if !accepted.0.is_finite() {
            let alpha = alpha_p.min(alpha_d);
            let mut s = 0.5f64;
            for _ in 0..40 {
                accepted = trial(s * alpha, s * alpha);
                if accepted.0.is_finite() {
                    break;
                }
                s *= 0.5;
            }
            if !accepted.0.is_finite() {
                break;
            }
        }
        if accepted.0 <= best_residual * (1.0 - 1e-6) {
            best_residual = accepted.0;
            no_progress = 0;
        } else {
            no_progress += 1;
            if no_progress > 50 {
                break;
            }
        }
        let (_, xc, lamc, zc, muc) = accepted;
        x = xc;
        lam = lamc;
        z = zc;
        mu = muc;

        gamma = if niq > 0 {
            // Keep a floor tied to the stationarity residual: collapsing the
            // barrier before dual feasibility is reached starves the
            // multipliers of late-arriving active constraints.
            let floor = 1e-5 * kkt.min(1.0);
            (opts.sigma * z.dot(&mu) / niq as f64).max(floor)
        } else {
            0.0
        };

        let obj = problem.eval_objective(&x);
        df = obj.1;
        let cons = problem.eval_constraints(&x);
        g = cons.0;
        h = cons.1;
        dg = cons.2;
        dh = cons.3;
        if x.iter().any(|v| !v.is_finite()) {
            return fail(x, kkt, f64::INFINITY, iteration);
        }
    }

    let viol = violation(&g, &h);
    // Near-optimal iterates can chatter against weakly active bounds without
    // ever closing complementarity. An active-set Newton polish converges
    // quadratically from such points and certifies the KKT conditions.
    if viol < 1e-3 {
        if let Some(outcome) = polish(problem, &x, &lam, &mu, opts) {
            return outcome;
        }
    }
    // A point that cannot be driven feasible signals an empty (or numerically
    // empty) feasible set — the ε-boxes probe beyond the boundary routinely.
    let status = if viol > 1e2 * opts.tolerance {
        SolveStatus::Infeasible
    } else {
        SolveStatus::MaxIter
    };
    Outcome {
        status,
        x,
        kkt_residual: kkt,
        max_violation: viol,
        iterations: opts.max_iterations,
    }
}

/// Active-set Newton refinement: pins the currently active inequalities,
/// solves the resulting equality-constrained KKT system to machine
/// precision, then adjusts the set — releasing constraints whose
/// multipliers come out negative and pinning ones that become violated —
/// until the polished point satisfies all scaled KKT conditions below
/// tolerance, or gives up.
/// A single-variable linear inequality (one side of an equipment box),
/// as `(variable, coefficient, constant)` of `constant + coefficient·x ≤ 0`.
fn single_var(problem: &Problem, k: usize) -> Option<(usize, f64, f64)> {
    if let Expr::Quad(qf) = &problem.inequalities[k].expr {
        if qf.quadratic.is_empty() && qf.linear.len() == 1 {
            let (var, coef) = qf.linear[0];
            return Some((var, coef, qf.constant));
        }
    }
    None
}

/// Releases `active[j]` and, when it is one side of an equipment box, pins
/// the opposite side. For a pinned box side with a negative multiplier the
/// optimum usually sits on the opposite side (losses are concave along box
/// edges): swapping rather than just releasing keeps Newton from chasing an
/// interior saddle.
fn swap_box_side(
    problem: &Problem,
    active: &mut Vec<usize>,
    nu: &mut Vec<f64>,
    j: usize,
    x: &mut DVector<f64>,
    visited: &HashSet<Vec<u32>>,
) {
    let released = active[j];
    active.remove(j);
    nu.remove(j);
    if let Some((var, coef, _)) = single_var(problem, released) {
        let partner = (0..problem.inequalities.len()).find(|&k| {
            k != released
                && !active.contains(&k)
                && single_var(problem, k).is_some_and(|(v, c, _)| v == var && c * coef < 0.0)
        });
        if let Some(k) = partner {
            // Swapping is a heuristic: when another curved constraint (a VUF
            // row, say) keeps the optimum interior along this variable, the
            // jump to the opposite side bounces straight back. A swap whose
            // active set was already visited degrades to a plain release so
            // the cycle guard does not abort the whole polish.
            let mut key: Vec<u32> = active.iter().map(|&k| k as u32).collect();
            key.push(k as u32);
            key.sort_unstable();
            if visited.contains(&key) {
                return;
            }
            active.push(k);
            nu.push(0.0);
            // Jump straight to the opposite bound and repair feasibility;
            // Newton from the old side would have to creep across the box.
            let (var, coef, constant) = single_var(problem, k).unwrap();
            let old = x.clone();
            x[var] = -constant / coef;
            if !restore_feasibility(problem, x, active) {
                *x = old;
            }
        }
    }
}

/// Damped Gauss-Newton feasibility restoration: drives the equalities and
/// the pinned inequalities to zero after a jump in `x` (such as moving a
/// variable to the opposite side of its box).
fn restore_feasibility(problem: &Problem, x: &mut DVector<f64>, active: &[usize]) -> bool {
    let n = problem.n_vars();
    let neq = problem.equalities.len();
    let na = active.len();
    for _ in 0..50 {
        let (g, h, dg, dh) = problem.eval_constraints(x);
        let mut r = DVector::zeros(neq + na);
        let mut jac = DMatrix::zeros(neq + na, n);
        for k in 0..neq {
            r[k] = g[k];
            for i in 0..n {
                jac[(k, i)] = dg[(k, i)];
            }
        }
        for (j, &k) in active.iter().enumerate() {
            r[neq + j] = h[k];
            for i in 0..n {
                jac[(neq + j, i)] = dh[(k, i)];
            }
        }
        let res = r.amax();
        if res < 1e-10 {
            return true;
        }
        let svd = jac.svd(true, true);
        let Ok(step) = svd.solve(&(-&r), 1e-10 * svd.singular_values.max()) else {
            return false;
        };
        let mut s = 1.0f64;
        let mut accepted = false;
        for _ in 0..20 {
            let xc = &*x + s * &step;
            let (gc, hc, _, _) = problem.eval_constraints(&xc);
            let rc = (0..neq)
                .map(|k| gc[k].abs())
                .chain(active.iter().map(|&k| hc[k].abs()))
                .fold(0.0f64, f64::max);
            if rc.is_finite() && rc < res {
                *x = xc;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            return false;
        }
    }
    false
}

fn polish(
    problem: &Problem,
    x0: &DVector<f64>,
    lam0: &DVector<f64>,
    mu0: &DVector<f64>,
    opts: &IpmOptions,
) -> Option<Outcome> {
    let n = problem.n_vars();
    let neq = problem.equalities.len();
    let niq = problem.inequalities.len();
    let (_, h0, _, dh0) = problem.eval_constraints(x0);
    // Generous threshold: the interior-point iterate may still hover well
    // away from constraints it is converging onto; wrongly pinned ones are
    // released below when their multipliers come out negative. The margin is
    // normalised by the constraint gradient so that rows of very different
    // natural scale (a VUF row is quadratic in millivolt-scale sequence
    // components) are judged by their distance to the boundary, not by the
    // raw residual.
    let mut active: Vec<usize> = (0..niq)
        .filter(|&k| {
            let gnorm = dh0.row(k).norm();
            h0[k] > -1e-3 * gnorm.max(1e-6)
        })
        .collect();

    let mut x = x0.clone();
    let mut lam = lam0.clone();
    let mut nu: Vec<f64> = active.iter().map(|&k| mu0[k].max(0.0)).collect();

    let mut visited: HashSet<Vec<u32>> = HashSet::new();
    let mut revisits = 0usize;
    'outer: for _round in 0..40 {
        let _ = _round;
        let mut key: Vec<u32> = active.iter().map(|&k| k as u32).collect();
        key.sort_unstable();
        if !visited.insert(key) {
            // Revisiting a set is legitimate — `x` has moved since — but a
            // bounded number of times, or a swap ping-pong would spin here.
            revisits += 1;
            if revisits > 12 {
                return None; // active-set cycle
            }
        }
        let na = active.len();
        if na > n {
            return None; // active set cannot satisfy LICQ
        }
        for _newton in 0..50 {
            let _ = _newton;
            let (_, df) = problem.eval_objective(&x);
            let (g, h, dg, dh) = problem.eval_constraints(&x);
            let mut lx = df;
            if neq > 0 {
                lx += dg.transpose() * &lam;
            }
            for (j, &k) in active.iter().enumerate() {
                for i in 0..n {
                    lx[i] += nu[j] * dh[(k, i)];
                }
            }
            let res_inf = lx
                .amax()
                .max(if neq > 0 { g.amax() } else { 0.0 })
                .max(active.iter().fold(0.0f64, |m, &k| m.max(h[k].abs())));
            if res_inf < 1e-11 {
                // Converged for this active set; adjust or certify.
                if let Some((j, _)) = nu
                    .iter()
                    .enumerate()
                    .filter(|&(_, &v)| v < -1e-8)
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                {
                    swap_box_side(problem, &mut active, &mut nu, j, &mut x, &visited);
                    continue 'outer;
                }
                if let Some((k, _)) = (0..niq)
                    .filter(|k| !active.contains(k))
                    .map(|k| (k, h[k]))
                    .filter(|&(_, v)| v > 1e-9)
                    .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                {
                    // If ∇h_k is (nearly) a combination of the pinned
                    // gradients, pinning alone is hopeless: no direction can
                    // reduce h_k while holding the pinned set. Pivot instead:
                    // write ∇h_k = Σ c_j ∇h_j + Σ c ∇g and release the active
                    // constraint the dual ratio test selects (positive
                    // coefficient, smallest ν/c) so h_k can come down without
                    // the released row going active-side.
                    let mut basis = DMatrix::zeros(n, neq + na);
                    for j in 0..neq {
                        for i in 0..n {
                            basis[(i, j)] = dg[(j, i)];
                        }
                    }
                    for (j, &a) in active.iter().enumerate() {
                        for i in 0..n {
                            basis[(i, neq + j)] = dh[(a, i)];
                        }
                    }
                    let target = dh.row(k).transpose();
                    let svd = basis.clone().svd(true, true);
                    if let Ok(c) = svd.solve(&target, 1e-8 * svd.singular_values.max()) {
                        let residual = (&basis * &c - &target).norm();
                        // Near-dependence is enough: a residual component a
                        // hundred times smaller than the gradient means the
                        // first-order repair step is two orders larger than
                        // the violation, far outside the Newton region.
                        if residual < 5e-2 * target.norm() {
                            let leaving = (0..na)
                                .filter(|&j| c[neq + j] > 1e-8)
                                .min_by(|&a, &b| {
                                    (nu[a] / c[neq + a])
                                        .partial_cmp(&(nu[b] / c[neq + b]))
                                        .unwrap()
                                });
                            if let Some(j) = leaving {
                                active.remove(j);
                                nu.remove(j);
                            }
                        }
                    }
                    active.push(k);
                    nu.push(0.0);
                    continue 'outer;
                }
                let mut mu = DVector::zeros(niq);
                for (j, &k) in active.iter().enumerate() {
                    mu[k] = nu[j].max(0.0);
                }
                let viol = violation(&g, &h);
                let x_norm = if n == 0 { 0.0 } else { x.amax() };
                let lam_norm = if neq == 0 { 0.0 } else { lam.amax() };
                let mu_norm = if niq == 0 { 0.0 } else { mu.amax() };
                let feascond = viol / (1.0 + x_norm);
                let gradcond = lx.amax() / (1.0 + lam_norm.max(mu_norm));
                let compcond = (0..niq)
                    .map(|k| (-h[k]).max(0.0) * mu[k])
                    .sum::<f64>()
                    / (1.0 + x_norm);
                let kkt = feascond.max(gradcond).max(compcond);
                if kkt < opts.tolerance {
                    return Some(Outcome {
                        status: SolveStatus::Optimal,
                        x,
                        kkt_residual: kkt,
                        max_violation: viol,
                        iterations: opts.max_iterations,
                    });
                }
                return None;
            }

            // Newton step on the pinned KKT system.
            let mut mu_full = DVector::zeros(niq);
            for (j, &k) in active.iter().enumerate() {
                mu_full[k] = nu[j];
            }
            let hess = problem.lagrangian_hessian(&x, &lam, &mu_full);
            let dim = n + neq + na;
            let mut kkt_mat = DMatrix::zeros(dim, dim);
            kkt_mat.view_mut((0, 0), (n, n)).copy_from(&hess);
            if neq > 0 {
                kkt_mat.view_mut((0, n), (n, neq)).copy_from(&dg.transpose());
                kkt_mat.view_mut((n, 0), (neq, n)).copy_from(&dg);
            }
            for (j, &k) in active.iter().enumerate() {
                for i in 0..n {
                    kkt_mat[(i, n + neq + j)] = dh[(k, i)];
                    kkt_mat[(n + neq + j, i)] = dh[(k, i)];
                }
            }
            let mut rhs = DVector::zeros(dim);
            for i in 0..n {
                rhs[i] = -lx[i];
            }
            for k in 0..neq {
                rhs[n + k] = -g[k];
            }
            for (j, &k) in active.iter().enumerate() {
                rhs[n + neq + j] = -h[k];
            }
            // Least-squares solve: weakly active constraints make the pinned
            // KKT matrix (near-)singular, where LU returns wild directions.
            let svd = kkt_mat.svd(true, true);
            let step = svd.solve(&rhs, 1e-10 * svd.singular_values.max()).ok()?;
            if step.iter().any(|v| !v.is_finite()) {
                return None;
            }
            // Damped Newton with second-order correction: the full step can
            // leave the quadratic balance manifold, so each trial point is
            // first pulled back onto it before the residual is judged.
            let trial = |s: f64| -> Option<(DVector<f64>, f64)> {
                let mut xc = &x + s * step.rows(0, n);
                if !xc.iter().all(|v| v.is_finite()) {
                    return None;
                }
                restore_feasibility(problem, &mut xc, &active);
                let lamc = if neq > 0 {
                    &lam + s * step.rows(n, neq)
                } else {
                    lam.clone()
                };
                let (_, dfc) = problem.eval_objective(&xc);
                let (gc, hc, dgc, dhc) = problem.eval_constraints(&xc);
                let mut lxc = dfc;
                if neq > 0 {
                    lxc += dgc.transpose() * &lamc;
                }
                for (j, &k) in active.iter().enumerate() {
                    let nuc = nu[j] + s * step[n + neq + j];
                    for i in 0..n {
                        lxc[i] += nuc * dhc[(k, i)];
                    }
                }
                let rc = lxc
                    .amax()
                    .max(if neq > 0 { gc.amax() } else { 0.0 })
                    .max(active.iter().fold(0.0f64, |m, &k| m.max(hc[k].abs())));
                rc.is_finite().then_some((xc, rc))
            };
            let mut s = 1.0f64;
            let mut chosen = None;
            for _ in 0..25 {
                if let Some((xc, rc)) = trial(s) {
                    if rc < res_inf {
                        chosen = Some((xc, rc));
                        break;
                    }
                }
                s *= 0.5;
            }
            let stalled = match &chosen {
                Some((_, rc)) => s < 0.25 && *rc > 0.9 * res_inf,
                None => true,
            };
            let step_accepted = chosen.is_some();
            if let Some((xc, _)) = chosen {
                x = xc;
            } else {
                x += s * step.rows(0, n);
            }
            if neq > 0 {
                lam += s * step.rows(n, neq);
            }
            for (j, v) in nu.iter_mut().enumerate() {
                *v += s * step[n + neq + j];
            }
            // Heavily damped, stalling steps signal a wrong or incomplete
            // active set rather than a solvable Newton subproblem.
            if stalled {
                // A multiplier drifting negative: the wrong side of a box is
                // pinned; swap sides instead of creeping towards an exterior
                // stationary point.
                if let Some((j, _)) = nu
                    .iter()
                    .enumerate()
                    .filter(|&(_, &v)| v < -1e-8)
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                {
                    swap_box_side(problem, &mut active, &mut nu, j, &mut x, &visited);
                    continue 'outer;
                }
                // Otherwise the direction runs along a flat valley (the
                // objective is nearly linear in the equipment variables) and
                // its stationary point lies far outside the boxes. Ratio
                // test: pin the box side the direction pushes into first,
                // jump onto it and repair feasibility.
                // Only meaningful when the step made progress at all: a
                // direction the line search rejected outright points at the
                // least-squares floor of an inconsistent pinned system, not
                // along a valley.
                let blocking = step_accepted
                    .then(|| {
                        (0..niq)
                            .filter(|k| !active.contains(k))
                            .filter_map(|k| {
                                let (var, coef, _) = single_var(problem, k)?;
                                let speed = coef * step[var];
                                (speed > 1e-12 && h[k] < 0.0).then(|| (k, -h[k] / speed))
                            })
                            .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                    })
                    .flatten();
                if let Some((k, _)) = blocking {
                    active.push(k);
                    nu.push(0.0);
                    let (var, coef, constant) = single_var(problem, k).unwrap();
                    let old = x.clone();
                    x[var] = -constant / coef;
                    if !restore_feasibility(problem, &mut x, &active) {
                        x = old;
                    }
                    continue 'outer;
                }
                // Last resort: pinning several nearly dependent rows (the
                // VUF constraints of adjacent buses, typically) can make the
                // pinned system inconsistent, so the least-squares Newton
                // bottoms out above tolerance with every multiplier still
                // positive. Release the weakest active constraint — the one
                // contributing least to stationarity — preferring a release
                // that leads to an unvisited active set.
                let weakest = (0..active.len())
                    .filter(|&j| {
                        let mut key: Vec<u32> = active
                            .iter()
                            .enumerate()
                            .filter(|&(i, _)| i != j)
                            .map(|(_, &k)| k as u32)
                            .collect();
                        key.sort_unstable();
                        !visited.contains(&key)
                    })
                    .min_by(|&a, &b| nu[a].abs().partial_cmp(&nu[b].abs()).unwrap());
                if let Some(j) = weakest {
                    active.remove(j);
                    nu.remove(j);
                    continue 'outer;
                }
            }
        }
        return None; // Newton failed to converge for this active set
    }
    None
}
