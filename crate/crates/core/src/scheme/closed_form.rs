//! Hand-derived conservative right-hand sides `f^tau` for the bundled systems.
//!
//! Each form is an expression over the two-level space, so it can be printed
//! and evaluated like any other discrete expression. `a` below means level k
//! and `b` level k+1; bars are two-level averages.

use crate::divdiff::{Level, StepPair};
use crate::expr::{Expr, VarSpace};

use super::SchemeError;

/// A transcribed `f^tau`, optionally tied to the permutation whose discrete
/// multiplier it annihilates.
#[derive(Debug, Clone, PartialEq)]
pub struct ClosedForm {
    pub name: String,
    pub sigma: Option<Vec<usize>>,
    pub ftau: Vec<Expr>,
}

impl ClosedForm {
    pub fn eval(&self, s: &StepPair) -> Result<Vec<f64>, SchemeError> {
        let v = s.two_level();
        self.ftau.iter().map(|e| Ok(e.eval(&v)?)).collect()
    }

    pub fn render(&self, n: usize) -> Vec<String> {
        let sp = VarSpace::TwoLevel { n };
        self.ftau.iter().map(|e| e.display(sp).to_string()).collect()
    }
}

/// Two-level variable helpers for dimension `n`.
struct Lv {
    n: usize,
}

impl Lv {
    fn at(&self, j: usize, level: Level) -> Expr {
        match level {
            Level::K => Expr::var(j),
            Level::K1 => Expr::var(j + self.n + 1),
        }
    }
    fn a(&self, j: usize) -> Expr {
        self.at(j, Level::K)
    }
    fn b(&self, j: usize) -> Expr {
        self.at(j, Level::K1)
    }
    fn bar(&self, j: usize) -> Expr {
        Expr::c(0.5) * (self.a(j) + self.b(j))
    }
    fn tau(&self) -> Expr {
        self.b(0) - self.a(0)
    }
}

fn c(v: f64) -> Expr {
    Expr::c(v)
}

/// Rigid body: each component is the analytic field at the two-level average.
pub fn rigid_body(i1: f64, i2: f64, i3: f64) -> Vec<ClosedForm> {
    let l = Lv { n: 3 };
    let ftau = vec![
        c((i2 - i3) / (i2 * i3)) * l.bar(2) * l.bar(3),
        c((i3 - i1) / (i1 * i3)) * l.bar(1) * l.bar(3),
        c((i1 - i2) / (i1 * i2)) * l.bar(1) * l.bar(2),
    ];
    vec![ClosedForm { name: "average".into(), sigma: Some(vec![0, 1, 2, 3]), ftau }]
}

/// Two-species Lotka-Volterra with the consistent factor `x^k y^k`.
pub fn lotka_volterra_2(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Vec<ClosedForm> {
    let l = Lv { n: 2 };
    let (x, y) = (l.a(1), l.a(2));
    let lx = Expr::log_secant(l.a(1), l.b(1));
    let ly = Expr::log_secant(l.a(2), l.b(2));
    let ftau = vec![
        x.clone() * (c(alpha) * y.clone() * ly - c(beta) * y.clone()),
        y * (c(delta) * x.clone() - c(gamma) * x * lx),
    ];
    vec![ClosedForm { name: "log-secant".into(), sigma: Some(vec![0, 1, 2]), ftau }]
}

/// The six three-species Lotka-Volterra forms, one per raising order of
/// `x1, x2, x3`.
pub fn lotka_volterra_3() -> Vec<ClosedForm> {
    let l = Lv { n: 3 };
    let (a1, a2, a3) = (l.a(1), l.a(2), l.a(3));
    let (b1, b2, b3) = (l.b(1), l.b(2), l.b(3));
    let forms: [(&[usize], [Expr; 3]); 6] = [
        (
            &[0, 1, 2, 3],
            [
                b1.clone() * (b2.clone() - a3.clone()),
                a2.clone() * a3.clone() - b1.clone() * b2.clone(),
                a3.clone() * (b1.clone() - a2.clone()),
            ],
        ),
        (
            &[0, 1, 3, 2],
            [
                b1.clone() * (a2.clone() - b3.clone()),
                a2.clone() * (a3.clone() - b1.clone()),
                b3.clone() * b1.clone() - a2.clone() * a3.clone(),
            ],
        ),
        (
            &[0, 2, 1, 3],
            [
                b1.clone() * b2.clone() - a1.clone() * a3.clone(),
                b2.clone() * (a3.clone() - b1.clone()),
                a3.clone() * (a1.clone() - b2.clone()),
            ],
        ),
        (
            &[0, 2, 3, 1],
            [
                a1.clone() * (b2.clone() - a3.clone()),
                b2.clone() * (b3.clone() - a1.clone()),
                a1.clone() * a3.clone() - b2.clone() * b3.clone(),
            ],
        ),
        (
            &[0, 3, 1, 2],
            [
                a1.clone() * a2.clone() - b1.clone() * b3.clone(),
                a2.clone() * (b3.clone() - a1.clone()),
                b3.clone() * (b1.clone() - a2.clone()),
            ],
        ),
        (
            &[0, 3, 2, 1],
            [
                a1.clone() * (a2.clone() - b3.clone()),
                b2.clone() * b3.clone() - a1.clone() * a2.clone(),
                b3.clone() * (a1.clone() - b2.clone()),
            ],
        ),
    ];
    forms
        .into_iter()
        .enumerate()
        .map(|(i, (sigma, ftau))| ClosedForm {
            name: (i + 1).to_string(),
            sigma: Some(sigma.to_vec()),
            ftau: ftau.to_vec(),
        })
        .collect()
}

fn level_tag(l: Level) -> &'static str {
    match l {
        Level::K => "k",
        Level::K1 => "k+1",
    }
}

/// Restricted three-body form with `x1` read at level `r` in the `x2`
/// difference and `x2` read at level `s` in the `x1` difference.
///
/// Only `(r, s) = (k+1, k)` and `(k, k+1)` come from a raising order; the
/// other two are kept for comparison and are not conservative.
pub fn pr3bp(alpha: f64, r: Level, s: Level) -> ClosedForm {
    let beta = 1.0 - alpha;
    let l = Lv { n: 4 };
    // A^{p,q}: distance to the body at (-alpha, 0); B^{p,q}: to (beta, 0).
    let radius =
        |p: Level, q: Level, centre: f64| Expr::sqrt(Expr::powi(l.at(1, p) - c(centre), 2) + Expr::powi(l.at(2, q), 2));
    let a = |p, q| radius(p, q, -alpha);
    let b = |p, q| radius(p, q, beta);
    let secant = |lo: Expr, hi: Expr| lo.clone() * hi.clone() * (lo + hi);
    let (x1, x2, y1, y2) = (l.bar(1), l.bar(2), l.bar(3), l.bar(4));
    let f3 = x1.clone() + c(2.0) * y2.clone()
        - c(2.0 * alpha) * (x1.clone() - c(beta)) / secant(b(Level::K, s), b(Level::K1, s))
        - c(2.0 * beta) * (x1.clone() + c(alpha)) / secant(a(Level::K, s), a(Level::K1, s));
    let f4 = x2.clone()
        - c(2.0) * y1.clone()
        - c(2.0 * alpha) * x2.clone() / secant(b(r, Level::K), b(r, Level::K1))
        - c(2.0 * beta) * x2.clone() / secant(a(r, Level::K), a(r, Level::K1));
    let sigma = match (r, s) {
        (Level::K1, Level::K) => Some(vec![0, 1, 2, 3, 4]),
        (Level::K, Level::K1) => Some(vec![0, 2, 1, 3, 4]),
        _ => None,
    };
    ClosedForm { name: format!("{},{}", level_tag(r), level_tag(s)), sigma, ftau: vec![y1, y2, f3, f4] }
}

/// All four restricted three-body variants, the conservative default first.
pub fn pr3bp_all(alpha: f64) -> Vec<ClosedForm> {
    [(Level::K1, Level::K), (Level::K, Level::K1), (Level::K, Level::K), (Level::K1, Level::K1)]
        .into_iter()
        .map(|(r, s)| pr3bp(alpha, r, s))
        .collect()
}

/// Damped oscillator form `f^tau = C^tau (ybar, -(gamma y^tau + kappa xbar)/m)`
/// with `C^tau = (1 - exp(-(gamma/m) tau)) / ((gamma/m) tau)`.
pub fn damped_oscillator(m: f64, gamma: f64, kappa: f64) -> Vec<ClosedForm> {
    let l = Lv { n: 2 };
    let rate = c(gamma / m) * l.tau();
    let ct = Expr::exp_secant(-rate, Expr::zero());
    let (xk, yk, xk1) = (l.a(1), l.a(2), l.b(1));
    let (xbar, ybar) = (l.bar(1), l.bar(2));
    let num = yk.clone() * (c(m) * (yk.clone() + ybar.clone()) / c(2.0) + c(gamma / 2.0) * xk.clone())
        + c(kappa / 2.0) * (Expr::powi(xk, 2) - xk1.clone() * xbar.clone());
    let ytau = num / (c(m) * ybar.clone() + c(gamma / 2.0) * xk1);
    let ftau = vec![ct.clone() * ybar, ct * (-(c(gamma) * ytau + c(kappa) * xbar) / c(m))];
    vec![ClosedForm { name: "exp-secant".into(), sigma: Some(vec![0, 1, 2]), ftau }]
}

/// Numeric evaluation of the two-species form at a step pair.
pub fn closed_form_ftau_lv2(
    s: &StepPair,
    alpha: f64,
    beta: f64,
    gamma: f64,
    delta: f64,
) -> Result<Vec<f64>, SchemeError> {
    lotka_volterra_2(alpha, beta, gamma, delta)[0].eval(s)
}

/// Numeric evaluation of one restricted three-body variant at a step pair.
pub fn closed_form_ftau_pr3bp(s: &StepPair, r: Level, s_idx: Level, alpha: f64) -> Result<Vec<f64>, SchemeError> {
    pr3bp(alpha, r, s_idx).eval(s)
}
