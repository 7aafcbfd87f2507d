//! Conservation law multipliers, continuous and discrete.
//!
//! For `x' = f(t, x)` with conserved `psi`, the multiplier is `Lambda = d psi/dx`
//! and satisfies `Lambda f = -d psi/dt`. The discrete multiplier replaces each
//! column by a divided difference read on the stencil of a permutation plan,
//! and the time partial by the divided difference in `t`.

use std::collections::BTreeSet;

use nalgebra::DMatrix;

use crate::divdiff::{divided_difference_symbolic, DivDiffError, PermutationPlan, Rule, StepPair};
use crate::expr::{DomainError, Expr, Point, VarSpace};

/// An `m x n` matrix of expressions over `space`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierMatrix {
    pub entries: Vec<Vec<Expr>>,
    pub space: VarSpace,
}

impl MultiplierMatrix {
    pub fn m(&self) -> usize {
        self.entries.len()
    }

    pub fn n(&self) -> usize {
        self.entries.first().map_or(0, Vec::len)
    }

    pub fn eval(&self, vars: &[f64]) -> Result<DMatrix<f64>, DomainError> {
        let (m, n) = (self.m(), self.n());
        let mut out = DMatrix::zeros(m, n);
        for i in 0..m {
            for j in 0..n {
                out[(i, j)] = self.entries[i][j].eval(vars)?;
            }
        }
        Ok(out)
    }

    pub fn row(&self, i: usize) -> &[Expr] {
        &self.entries[i]
    }
}

/// `Lambda_ij = d psi_i / d x_j` over state space.
pub fn analytic_multiplier(psi: &[Expr], n: usize) -> MultiplierMatrix {
    let entries = psi.iter().map(|p| (1..=n).map(|j| p.partial_derivative(j)).collect()).collect();
    MultiplierMatrix { entries, space: VarSpace::State { n } }
}

/// `d psi_i / dt` over state space.
pub fn analytic_time_partial(psi: &[Expr]) -> Vec<Expr> {
    psi.iter().map(|p| p.partial_derivative(0)).collect()
}

/// The discrete multiplier of a permutation plan together with the discrete
/// time partial, both over the two-level space.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMultiplier {
    pub lambda: MultiplierMatrix,
    pub dt_psi: Vec<Expr>,
    pub plan: PermutationPlan,
    pub rules: BTreeSet<Rule>,
}

pub fn discrete_multiplier(psi: &[Expr], plan: &PermutationPlan) -> Result<DiscreteMultiplier, DivDiffError> {
    let n = plan.n();
    let mut rules = BTreeSet::new();
    let mut entries = Vec::with_capacity(psi.len());
    for p in psi {
        let mut row = Vec::with_capacity(n);
        for j in 1..=n {
            let d = divided_difference_symbolic(p, j, plan.stencil_for(j))?;
            rules.extend(d.rules);
            row.push(d.expr);
        }
        entries.push(row);
    }
    let dt_psi = discrete_time_partial(psi, plan)?;
    Ok(DiscreteMultiplier {
        lambda: MultiplierMatrix { entries, space: VarSpace::TwoLevel { n } },
        dt_psi,
        plan: plan.clone(),
        rules,
    })
}

/// Divided difference of each `psi_i` in `t` at the plan's stencil for time.
pub fn discrete_time_partial(psi: &[Expr], plan: &PermutationPlan) -> Result<Vec<Expr>, DivDiffError> {
    psi.iter().map(|p| Ok(divided_difference_symbolic(p, 0, plan.stencil_for(0))?.expr)).collect()
}

/// `(psi(t^k+1, x^k+1) - psi(t^k, x^k)) / dt`.
pub fn discrete_total_derivative(psi: &[Expr], s: &StepPair) -> Result<Vec<f64>, MultiplierError> {
    let dt = s.dt();
    if dt == 0.0 {
        return Err(MultiplierError::ZeroTimeStep);
    }
    let (a, b) = (s.k.values(), s.k1.values());
    psi.iter().map(|p| Ok((p.eval(&b)? - p.eval(&a)?) / dt)).collect()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MultiplierError {
    #[error("zero time step")]
    ZeroTimeStep,
    #[error(transparent)]
    Domain(#[from] DomainError),
}

/// Residual norms of a pair of multiplier conditions, each with the scale it
/// should be compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Residuals {
    pub r1: f64,
    pub r2: f64,
    pub scale1: f64,
    pub scale2: f64,
}

impl Residuals {
    /// Both residuals within `tol` relative to their scales.
    pub fn within(&self, tol: f64) -> bool {
        self.r1 <= tol * self.scale1 && self.r2 <= tol * self.scale2
    }

    /// Largest scaled residual.
    pub fn worst(&self) -> f64 {
        (self.r1 / self.scale1).max(self.r2 / self.scale2)
    }
}

/// `r1 = max |Lambda - d psi/dx|`, `r2 = max_i |(Lambda f)_i + d psi_i/dt|`
/// at `p`. Scales are `1 + sum |terms|` of each row.
pub fn check_continuous_conditions(
    lambda: &MultiplierMatrix,
    psi: &[Expr],
    f: &[Expr],
    p: &Point,
) -> Result<Residuals, DomainError> {
    let vals = p.values();
    let n = f.len();
    let lam = lambda.eval(&vals)?;
    let fv: Vec<f64> = f.iter().map(|e| e.eval(&vals)).collect::<Result<_, _>>()?;
    let mut out = Residuals { r1: 0.0, r2: 0.0, scale1: 1.0, scale2: 1.0 };
    for (i, ps) in psi.iter().enumerate() {
        let mut s2 = 0.0;
        let mut acc = 0.0;
        for j in 0..n {
            let exact = ps.partial_derivative(j + 1).eval(&vals)?;
            out.r1 = out.r1.max((lam[(i, j)] - exact).abs());
            out.scale1 = out.scale1.max(1.0 + exact.abs());
            acc += lam[(i, j)] * fv[j];
            s2 += (lam[(i, j)] * fv[j]).abs();
        }
        let pt = ps.partial_derivative(0).eval(&vals)?;
        out.r2 = out.r2.max((acc + pt).abs());
        out.scale2 = out.scale2.max(1.0 + s2 + pt.abs());
    }
    Ok(out)
}

/// Discrete residuals at a step pair for a given `f^tau`:
/// `r1 = |Lambda^tau D x - D psi + dpsi^tau|` (an identity of the plan) and
/// `r2 = |Lambda^tau f^tau + dpsi^tau|` (conservation).
pub fn check_discrete_conditions(
    dm: &DiscreteMultiplier,
    psi: &[Expr],
    ftau: &[f64],
    s: &StepPair,
) -> Result<Residuals, MultiplierError> {
    let vals = s.two_level();
    let lam = dm.lambda.eval(&vals)?;
    let pt: Vec<f64> = dm.dt_psi.iter().map(|e| e.eval(&vals)).collect::<Result<_, _>>()?;
    let dpsi = discrete_total_derivative(psi, s)?;
    let dt = s.dt();
    let n = dm.lambda.n();
    let dx: Vec<f64> = (1..=n).map(|j| s.delta(j) / dt).collect();
    let mut out = Residuals { r1: 0.0, r2: 0.0, scale1: 1.0, scale2: 1.0 };
    for i in 0..dm.lambda.m() {
        let (mut a1, mut s1, mut a2, mut s2) = (0.0, 0.0, 0.0, 0.0);
        for j in 0..n {
            a1 += lam[(i, j)] * dx[j];
            s1 += (lam[(i, j)] * dx[j]).abs();
            a2 += lam[(i, j)] * ftau[j];
            s2 += (lam[(i, j)] * ftau[j]).abs();
        }
        out.r1 = out.r1.max((a1 - dpsi[i] + pt[i]).abs());
        out.scale1 = out.scale1.max(1.0 + s1 + dpsi[i].abs() + pt[i].abs());
        out.r2 = out.r2.max((a2 + pt[i]).abs());
        out.scale2 = out.scale2.max(1.0 + s2 + pt[i].abs());
    }
    Ok(out)
}

/// Richardson step for the total time derivative along a test path.
pub const EULER_FD_STEP: f64 = 1e-5;

/// Euler operator of `g = Lambda . (x' - f)` along a polynomial path
/// `x(t)`, at time `t`. Returns one entry per (row, component).
///
/// `path[j]` is `x_{j+1}` as an expression in `t` alone. Partials in `x` and
/// `x'` are symbolic; the total time derivative of `dg/dx'` is a Richardson
/// extrapolated central difference with step [`EULER_FD_STEP`].
pub fn euler_operator_residual(
    lambda: &MultiplierMatrix,
    f: &[Expr],
    path: &[Expr],
    t: f64,
) -> Result<Vec<f64>, DomainError> {
    let n = f.len();
    let jet = VarSpace::Jet { n };
    let state_at = |tt: f64| -> Result<Vec<f64>, DomainError> {
        let mut v = vec![tt];
        for p in path {
            v.push(p.eval(&[tt])?);
        }
        Ok(v)
    };
    let mut jet_vals = state_at(t)?;
    for p in path {
        jet_vals.push(p.partial_derivative(0).eval(&[t])?);
    }
    debug_assert_eq!(jet_vals.len(), jet.len());
    let h = EULER_FD_STEP;
    let mut out = Vec::new();
    for row in &lambda.entries {
        // g = sum_j Lambda_j (xdot_j - f_j) in jet space; state indices are shared.
        let g = Expr::sum(
            row.iter()
                .zip(f)
                .enumerate()
                .map(|(j, (l, fj))| {
                    Expr::product(vec![l.clone(), Expr::sum(vec![Expr::var(n + 1 + j), Expr::neg(fj.clone())])])
                })
                .collect(),
        );
        for j in 0..n {
            let dx = g.partial_derivative(j + 1).eval(&jet_vals)?;
            let phi = g.partial_derivative(n + 1 + j);
            let at = |tt: f64| -> Result<f64, DomainError> {
                let mut v = state_at(tt)?;
                v.extend(std::iter::repeat_n(0.0, n));
                phi.eval(&v)
            };
            let central = |hh: f64| -> Result<f64, DomainError> { Ok((at(t + hh)? - at(t - hh)?) / (2.0 * hh)) };
            let dt = (4.0 * central(h / 2.0)? - central(h)?) / 3.0;
            out.push(dx - dt);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn st(n: usize, s: &str) -> Expr {
        parse(s, VarSpace::State { n }).unwrap()
    }

    fn pair(k: &[f64], k1: &[f64]) -> StepPair {
        StepPair::new(Point::new(k[0], k[1..].to_vec()), Point::new(k1[0], k1[1..].to_vec())).unwrap()
    }

    #[test]
    fn linear_invariant_has_constant_row() {
        let lam = analytic_multiplier(&[st(3, "x1")], 3);
        let v = lam.eval(&[0.0, 5.0, 6.0, 7.0]).unwrap();
        assert_eq!(v.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.0, 0.0]);
    }

    #[test]
    fn lv3_discrete_row() {
        let psi = [st(3, "x1 + x2 + x3"), st(3, "x1*x2*x3")];
        let dm = discrete_multiplier(&psi, &PermutationPlan::identity(3)).unwrap();
        let sp = VarSpace::TwoLevel { n: 3 };
        let row: Vec<String> = dm.lambda.row(1).iter().map(|e| e.display(sp).to_string()).collect();
        assert_eq!(row, vec!["x2_k*x3_k", "x1_k1*x3_k", "x1_k1*x2_k1"]);
        assert!(dm.dt_psi.iter().all(Expr::is_zero));
    }

    #[test]
    fn total_derivative_examples() {
        let s = pair(&[0.0, 1.0], &[0.01, 3.0]);
        let v = discrete_total_derivative(&[st(1, "x1^2")], &s).unwrap();
        assert!((v[0] - 800.0).abs() < 1e-9);
        let s = pair(&[0.0, 1.0], &[0.5, 1.0]);
        assert_eq!(discrete_total_derivative(&[st(1, "t")], &s).unwrap(), vec![1.0]);
        let s = pair(&[0.0, 1.0], &[0.0, 2.0]);
        assert_eq!(discrete_total_derivative(&[st(1, "t")], &s).unwrap_err(), MultiplierError::ZeroTimeStep);
    }

    #[test]
    fn wrong_field_is_detected() {
        let psi = [st(2, "x1^2 + x2^2")];
        let lam = analytic_multiplier(&psi, 2);
        let good = [st(2, "x2"), st(2, "-x1")];
        let bad = [st(2, "x2 + 0.01"), st(2, "-x1")];
        let p = Point::new(0.0, vec![1.0, 2.0]);
        assert!(check_continuous_conditions(&lam, &psi, &good, &p).unwrap().r2 < 1e-15);
        let r = check_continuous_conditions(&lam, &psi, &bad, &p).unwrap();
        assert!((r.r2 - 0.02).abs() < 1e-12);
    }

    #[test]
    fn euler_operator_detects_non_multiplier() {
        let psi = [st(2, "x1^2 + x2^2")];
        let f = [st(2, "x2"), st(2, "-x1")];
        let path = [parse("1 + t^2", VarSpace::State { n: 0 }).unwrap(), Expr::var(0)];
        let lam = analytic_multiplier(&psi, 2);
        let r = euler_operator_residual(&lam, &f, &path, 0.3).unwrap();
        assert!(r.iter().all(|v| v.abs() < 1e-6), "{r:?}");
        let control =
            MultiplierMatrix { entries: vec![vec![Expr::one(), Expr::zero()]], space: VarSpace::State { n: 2 } };
        let r = euler_operator_residual(&control, &f, &path, 0.3).unwrap();
        assert!(r.iter().any(|v| v.abs() > 1e-3));
    }
}
