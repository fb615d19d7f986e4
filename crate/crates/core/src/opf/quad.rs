//! Scalar linear and quadratic forms over the optimisation variables, plus
//! complex-valued linear expressions used to assemble power-flow quantities.
//!
//! In rectangular voltage coordinates every model quantity is polynomial:
//! branch flows and injections are quadratic, sequence voltages are linear,
//! squared magnitudes of linear expressions are quadratic, and squared
//! magnitudes of flows are sums of squared quadratics. Keeping constraints in
//! this form makes first and second derivatives exact and cheap.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// `constant + Σ c_k x_k`.
#[derive(Debug, Clone, Default)]
pub struct LinForm {
    pub constant: f64,
    pub terms: Vec<(usize, f64)>,
}

impl LinForm {
    pub fn constant(c: f64) -> LinForm {
        LinForm {
            constant: c,
            ..Default::default()
        }
    }

    pub fn var(index: usize) -> LinForm {
        LinForm {
            constant: 0.0,
            terms: vec![(index, 1.0)],
        }
    }

    pub fn push(&mut self, index: usize, coef: f64) {
        if coef != 0.0 {
            self.terms.push((index, coef));
        }
    }

    pub fn add_scaled(&mut self, other: &LinForm, k: f64) {
        self.constant += k * other.constant;
        for &(i, c) in &other.terms {
            self.push(i, k * c);
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }

    /// Product of two linear forms as a quadratic form.
    pub fn mul(&self, other: &LinForm) -> QuadForm {
        let mut qf = QuadForm::constant(self.constant * other.constant);
        for &(i, c) in &self.terms {
            qf.add_linear(i, c * other.constant);
        }
        for &(j, d) in &other.terms {
            qf.add_linear(j, d * self.constant);
        }
        for &(i, c) in &self.terms {
            for &(j, d) in &other.terms {
                qf.add_quadratic(i, j, c * d);
            }
        }
        qf
    }
}

/// `constant + Σ c_k x_k + Σ q_{ij} x_i x_j` with `i ≤ j`.
#[derive(Debug, Clone, Default)]
pub struct QuadForm {
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    /// Triplets `(i, j, coef)` with `i ≤ j`; the term is `coef·x_i·x_j`.
    pub quadratic: Vec<(usize, usize, f64)>,
}

impl QuadForm {
    pub fn constant(c: f64) -> QuadForm {
        QuadForm {
            constant: c,
            ..Default::default()
        }
    }

    pub fn from_linear(lin: &LinForm) -> QuadForm {
        QuadForm {
            constant: lin.constant,
            linear: lin.terms.clone(),
            quadratic: Vec::new(),
        }
    }

    pub fn add_linear(&mut self, index: usize, coef: f64) {
        if coef != 0.0 {
            self.linear.push((index, coef));
        }
    }

    pub fn add_quadratic(&mut self, i: usize, j: usize, coef: f64) {
        if coef != 0.0 {
            let (i, j) = if i <= j { (i, j) } else { (j, i) };
            self.quadratic.push((i, j, coef));
        }
    }

    pub fn add_scaled(&mut self, other: &QuadForm, k: f64) {
        self.constant += k * other.constant;
        for &(i, c) in &other.linear {
            self.add_linear(i, k * c);
        }
        for &(i, j, c) in &other.quadratic {
            self.add_quadratic(i, j, k * c);
        }
    }

    /// Merges duplicate entries; worth calling once after assembly.
    pub fn compress(&mut self) {
        self.linear.sort_unstable_by_key(|&(i, _)| i);
        self.linear.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
        self.linear.retain(|&(_, c)| c != 0.0);
        self.quadratic.sort_unstable_by_key(|&(i, j, _)| (i, j));
        self.quadratic.dedup_by(|next, prev| {
            if next.0 == prev.0 && next.1 == prev.1 {
                prev.2 += next.2;
                true
            } else {
                false
            }
        });
        self.quadratic.retain(|&(_, _, c)| c != 0.0);
    }

    pub fn is_linear(&self) -> bool {
        self.quadratic.is_empty()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut v = self.constant;
        for &(i, c) in &self.linear {
            v += c * x[i];
        }
        for &(i, j, c) in &self.quadratic {
            v += c * x[i] * x[j];
        }
        v
    }

    /// Sparse gradient as (index, value) pairs, unmerged.
    pub fn gradient_terms(&self, x: &[f64]) -> Vec<(usize, f64)> {
        let mut out = Vec::with_capacity(self.linear.len() + 2 * self.quadratic.len());
        for &(i, c) in &self.linear {
            out.push((i, c));
        }
        for &(i, j, c) in &self.quadratic {
            if i == j {
                out.push((i, 2.0 * c * x[i]));
            } else {
                out.push((i, c * x[j]));
                out.push((j, c * x[i]));
            }
        }
        out
    }

    pub fn add_gradient(&self, x: &[f64], scale: f64, out: &mut DVector<f64>) {
        for (i, g) in self.gradient_terms(x) {
            out[i] += scale * g;
        }
    }

    /// Adds `scale · ∇²` (a constant matrix) into `out`.
    pub fn add_hessian(&self, scale: f64, out: &mut DMatrix<f64>) {
        for &(i, j, c) in &self.quadratic {
            if i == j {
                out[(i, i)] += 2.0 * scale * c;
            } else {
                out[(i, j)] += scale * c;
                out[(j, i)] += scale * c;
            }
        }
    }
}

/// Complex-valued linear expression: `re(x) + j·im(x)`.
#[derive(Debug, Clone, Default)]
pub struct CLin {
    pub re: LinForm,
    pub im: LinForm,
}

impl CLin {
    pub fn constant(c: Complex64) -> CLin {
        CLin {
            re: LinForm::constant(c.re),
            im: LinForm::constant(c.im),
        }
    }

    /// A complex variable from its rectangular component indices.
    pub fn var(re_index: usize, im_index: usize) -> CLin {
        CLin {
            re: LinForm::var(re_index),
            im: LinForm::var(im_index),
        }
    }

    pub fn add_scaled(&mut self, other: &CLin, k: Complex64) {
        // (kr + j ki)(re + j im) = (kr·re − ki·im) + j(kr·im + ki·re)
        self.re.add_scaled(&other.re, k.re);
        self.re.add_scaled(&other.im, -k.im);
        self.im.add_scaled(&other.im, k.re);
        self.im.add_scaled(&other.re, k.im);
    }

    pub fn sub(&self, other: &CLin) -> CLin {
        let mut out = self.clone();
        out.add_scaled(other, Complex64::new(-1.0, 0.0));
        out
    }

    pub fn conj(&self) -> CLin {
        let mut im = LinForm::constant(-self.im.constant);
        for &(i, c) in &self.im.terms {
            im.push(i, -c);
        }
        CLin {
            re: self.re.clone(),
            im,
        }
    }

    pub fn value(&self, x: &[f64]) -> Complex64 {
        Complex64::new(self.re.value(x), self.im.value(x))
    }

    /// Complex product as a pair of quadratic forms.
    pub fn mul(&self, other: &CLin) -> CQuad {
        let mut re = self.re.mul(&other.re);
        re.add_scaled(&self.im.mul(&other.im), -1.0);
        let mut im = self.re.mul(&other.im);
        im.add_scaled(&self.im.mul(&other.re), 1.0);
        CQuad { re, im }
    }

    /// `|self|²` as a quadratic form.
    pub fn norm_sq(&self) -> QuadForm {
        let mut qf = self.re.mul(&self.re);
        qf.add_scaled(&self.im.mul(&self.im), 1.0);
        qf
    }
}

/// Complex-valued quadratic expression.
#[derive(Debug, Clone, Default)]
pub struct CQuad {
    pub re: QuadForm,
    pub im: QuadForm,
}

impl CQuad {
    pub fn add(&mut self, other: &CQuad) {
        self.re.add_scaled(&other.re, 1.0);
        self.im.add_scaled(&other.im, 1.0);
    }

    pub fn value(&self, x: &[f64]) -> Complex64 {
        Complex64::new(self.re.value(x), self.im.value(x))
    }

    pub fn compress(&mut self) {
        self.re.compress();
        self.im.compress();
    }
}
