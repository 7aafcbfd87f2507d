//! Stencils, permutation plans and divided differences.
//!
//! A step pair holds the two time levels `(t^k, x^k)` and `(t^k+1, x^k+1)`.
//! A stencil assignment picks, for each of the `n+1` variables `t, x1..xn`,
//! which of the two levels it is read from. Expressions over state space are
//! instantiated on a stencil by renaming into the two-level space.
//!
//! The divided difference of `f` in variable `i` at base stencil `a` (with `i`
//! at level k in `a`) is `(f(a with i raised) - f(a)) / (x_i^k+1 - x_i^k)`.
//! The symbolic form is built rule by rule so that it stays finite, and tends
//! to the partial derivative, as the two levels of `x_i` coincide.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::expr::{DomainError, Expr, Point, Rational};

/// Guard below which the numeric divided difference falls back to the
/// partial derivative, relative to `max(1, |x_i^k|)`.
pub const DEFAULT_GUARD: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DivDiffError {
    #[error("invalid permutation {0:?}")]
    InvalidPermutation(Vec<usize>),
    #[error("variable {0} is already at level k+1 in the base stencil")]
    AlreadyRaised(usize),
    #[error("no divided-difference rule applies to `{0}`")]
    NoRule(String),
    #[error("expected {expected} variables, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Level {
    K,
    K1,
}

/// One level choice per variable `t, x1..xn`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StencilAssignment {
    levels: Vec<Level>,
}

impl StencilAssignment {
    /// Every variable at level k.
    pub fn base(n: usize) -> Self {
        StencilAssignment { levels: vec![Level::K; n + 1] }
    }

    pub fn from_levels(levels: Vec<Level>) -> Self {
        StencilAssignment { levels }
    }

    pub fn levels(&self) -> &[Level] {
        &self.levels
    }

    pub fn level(&self, i: usize) -> Level {
        self.levels[i]
    }

    pub fn n(&self) -> usize {
        self.levels.len() - 1
    }

    /// Same assignment with variable `i` moved to level k+1.
    pub fn raised(&self, i: usize) -> Self {
        let mut levels = self.levels.clone();
        levels[i] = Level::K1;
        StencilAssignment { levels }
    }

    /// Position of state variable `j` in the two-level space.
    pub fn index(&self, j: usize) -> usize {
        match self.levels[j] {
            Level::K => j,
            Level::K1 => j + self.levels.len(),
        }
    }
}

impl fmt::Display for StencilAssignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, l) in self.levels.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            f.write_str(match l {
                Level::K => "k",
                Level::K1 => "k+1",
            })?;
        }
        f.write_str(")")
    }
}

/// The two time levels of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepPair {
    pub k: Point,
    pub k1: Point,
}

impl StepPair {
    pub fn new(k: Point, k1: Point) -> Result<Self, DivDiffError> {
        if k.x.len() != k1.x.len() {
            return Err(DivDiffError::Dimension { expected: k.x.len(), got: k1.x.len() });
        }
        Ok(StepPair { k, k1 })
    }

    pub fn n(&self) -> usize {
        self.k.x.len()
    }

    pub fn dt(&self) -> f64 {
        self.k1.t - self.k.t
    }

    /// Value of state variable `j` (0 is time) at `level`.
    pub fn value(&self, j: usize, level: Level) -> f64 {
        let p = match level {
            Level::K => &self.k,
            Level::K1 => &self.k1,
        };
        if j == 0 {
            p.t
        } else {
            p.x[j - 1]
        }
    }

    /// `x_j^k+1 - x_j^k` (time for `j = 0`).
    pub fn delta(&self, j: usize) -> f64 {
        self.value(j, Level::K1) - self.value(j, Level::K)
    }

    /// Values in two-level order `[t_k, x_k.., t_k1, x_k1..]`.
    pub fn two_level(&self) -> Vec<f64> {
        let mut v = self.k.values();
        v.extend(self.k1.values());
        v
    }

    /// State-space values read at a stencil.
    pub fn corner(&self, st: &StencilAssignment) -> Vec<f64> {
        (0..=self.n()).map(|j| self.value(j, st.level(j))).collect()
    }
}

/// A permutation `sigma` of `{0 = t, 1..n}` and its staircase of stencils
/// `v_0 = all k`, `v_{i+1} = v_i` with variable `sigma(i)` raised.
///
/// Variable `j` is differenced at base stencil `v_{sigma^-1(j)}`, so the
/// variables are raised to level k+1 in the order `sigma(0), sigma(1), ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationPlan {
    sigma: Vec<usize>,
    inverse: Vec<usize>,
    stages: Vec<StencilAssignment>,
}

impl PermutationPlan {
    pub fn identity(n: usize) -> Self {
        permutation_stencils(&(0..=n).collect::<Vec<_>>(), n).unwrap()
    }

    pub fn sigma(&self) -> &[usize] {
        &self.sigma
    }

    pub fn n(&self) -> usize {
        self.sigma.len() - 1
    }

    /// The `n+2` stencils `v_0..v_{n+1}`.
    pub fn stages(&self) -> &[StencilAssignment] {
        &self.stages
    }

    /// Base stencil at which variable `j` is differenced.
    pub fn stencil_for(&self, j: usize) -> &StencilAssignment {
        &self.stages[self.inverse[j]]
    }

    /// Parses `"0,2,1,3"` or `"(2,1,3)"`. A list of length `n` omits time and
    /// is read as raising `t` first.
    pub fn parse(text: &str, n: usize) -> Result<Self, DivDiffError> {
        let inner = text.trim().trim_start_matches('(').trim_end_matches(')');
        let mut sigma = Vec::new();
        for part in inner.split(|c: char| c == ',' || c.is_whitespace()) {
            if part.is_empty() {
                continue;
            }
            let v = part.parse::<usize>().map_err(|_| DivDiffError::InvalidPermutation(vec![]))?;
            sigma.push(v);
        }
        if sigma.len() == n {
            sigma.insert(0, 0);
        }
        permutation_stencils(&sigma, n)
    }
}

impl fmt::Display for PermutationPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.sigma.iter().map(|s| s.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Validates `sigma` as a permutation of `0..=n` and builds its stencils.
pub fn permutation_stencils(sigma: &[usize], n: usize) -> Result<PermutationPlan, DivDiffError> {
    let mut seen = vec![false; n + 1];
    if sigma.len() != n + 1 {
        return Err(DivDiffError::InvalidPermutation(sigma.to_vec()));
    }
    for &s in sigma {
        if s > n || seen[s] {
            return Err(DivDiffError::InvalidPermutation(sigma.to_vec()));
        }
        seen[s] = true;
    }
    let mut inverse = vec![0; n + 1];
    for (i, &s) in sigma.iter().enumerate() {
        inverse[s] = i;
    }
    let mut stages = vec![StencilAssignment::base(n)];
    for &s in sigma {
        let next = stages.last().unwrap().raised(s);
        stages.push(next);
    }
    Ok(PermutationPlan { sigma: sigma.to_vec(), inverse, stages })
}

/// All permutations of `0..=n` in lexicographic order.
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut p: Vec<usize> = (0..=n).collect();
    let mut out = vec![p.clone()];
    loop {
        let Some(i) = (0..p.len().saturating_sub(1)).rev().find(|&i| p[i] < p[i + 1]) else {
            return out;
        };
        let j = (i + 1..p.len()).rev().find(|&j| p[j] > p[i]).unwrap();
        p.swap(i, j);
        p[i + 1..].reverse();
        out.push(p.clone());
    }
}

/// Renames a state-space expression onto a stencil in two-level space.
pub fn instantiate(f: &Expr, st: &StencilAssignment) -> Expr {
    f.remap(&|j| st.index(j))
}

/// `f(t^k+1, x^k+1) - f(t^k, x^k)` componentwise.
pub fn forward_difference(f: &[Expr], s: &StepPair) -> Result<Vec<f64>, DivDiffError> {
    let (a, b) = (s.k.values(), s.k1.values());
    f.iter().map(|e| Ok(e.eval(&b)? - e.eval(&a)?)).collect()
}

/// `f(base with i raised) - f(base)`.
pub fn partial_forward_difference(
    f: &Expr,
    i: usize,
    base: &StencilAssignment,
    s: &StepPair,
) -> Result<f64, DivDiffError> {
    Ok(f.eval(&s.corner(&base.raised(i)))? - f.eval(&s.corner(base))?)
}

/// Which rewriting rules produced a symbolic divided difference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Rule {
    Constant,
    Linearity,
    SeparableProduct,
    Product,
    Quotient,
    Reciprocal,
    Chain,
    Polynomial,
    RationalPower,
    Exponential,
    Logarithm,
}

/// A symbolic divided difference over the two-level space, with the rules
/// that built it.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteExpr {
    pub expr: Expr,
    pub rules: BTreeSet<Rule>,
}

/// Symbolic divided difference of `f` in variable `i` at stencil `base`.
pub fn divided_difference_symbolic(f: &Expr, i: usize, base: &StencilAssignment) -> Result<DiscreteExpr, DivDiffError> {
    if base.level(i) == Level::K1 {
        return Err(DivDiffError::AlreadyRaised(i));
    }
    let raised = base.raised(i);
    let mut rules = BTreeSet::new();
    let expr = dd(f, i, base, &raised, &mut rules)?;
    Ok(DiscreteExpr { expr, rules })
}

fn single_variable(e: &Expr) -> bool {
    let mut seen = None;
    fn walk(e: &Expr, seen: &mut Option<usize>) -> bool {
        match e {
            Expr::Const(_) => true,
            Expr::Var(j) => match seen {
                Some(s) => *s == *j,
                None => {
                    *seen = Some(*j);
                    true
                }
            },
            Expr::Sum(v) | Expr::Product(v) => v.iter().all(|x| walk(x, seen)),
            Expr::Quotient(a, b) | Expr::ExpSecant(a, b) | Expr::LogSecant(a, b) => walk(a, seen) && walk(b, seen),
            Expr::Power(a, _) | Expr::Exp(a) | Expr::Log(a) | Expr::Neg(a) => walk(a, seen),
        }
    }
    walk(e, &mut seen)
}

/// `(v^p/q - u^p/q) / (v - u)` as a ratio of two finite geometric sums.
fn pow_secant(u: &Expr, v: &Expr, r: Rational) -> Expr {
    let (p, q) = (r.num(), r.den());
    let geometric = |m: i64| -> Expr {
        Expr::sum(
            (0..m)
                .map(|l| {
                    Expr::product(vec![
                        Expr::pow(v.clone(), Rational::new(l, q)),
                        Expr::pow(u.clone(), Rational::new(m - 1 - l, q)),
                    ])
                })
                .collect(),
        )
    };
    if q == 1 {
        geometric(p)
    } else {
        Expr::quotient(geometric(p), geometric(q))
    }
}

fn dd(
    f: &Expr,
    i: usize,
    base: &StencilAssignment,
    raised: &StencilAssignment,
    rules: &mut BTreeSet<Rule>,
) -> Result<Expr, DivDiffError> {
    if !f.depends_on(i) {
        rules.insert(Rule::Constant);
        return Ok(Expr::zero());
    }
    let at = |e: &Expr, st: &StencilAssignment| instantiate(e, st);
    let chain = |g: &Expr, rules: &mut BTreeSet<Rule>| {
        if *g != Expr::Var(i) {
            rules.insert(Rule::Chain);
        }
    };
    Ok(match f {
        Expr::Const(_) => Expr::zero(),
        Expr::Var(_) => Expr::one(),
        Expr::Sum(ts) => {
            rules.insert(Rule::Linearity);
            let parts: Result<Vec<_>, _> = ts.iter().map(|t| dd(t, i, base, raised, rules)).collect();
            Expr::sum(parts?)
        }
        Expr::Neg(a) => {
            rules.insert(Rule::Linearity);
            Expr::neg(dd(a, i, base, raised, rules)?)
        }
        Expr::Product(fs) => {
            let dependent = fs.iter().filter(|e| e.depends_on(i)).count();
            if dependent == 1 {
                rules.insert(Rule::Linearity);
            } else if fs.iter().all(single_variable) {
                rules.insert(Rule::SeparableProduct);
            } else {
                rules.insert(Rule::Product);
            }
            // Factors before j are read on the raised stencil, factors after j
            // on the base stencil; the sum telescopes.
            let mut terms = Vec::new();
            for (j, fj) in fs.iter().enumerate() {
                if !fj.depends_on(i) {
                    continue;
                }
                let mut parts = Vec::with_capacity(fs.len());
                for fl in &fs[..j] {
                    parts.push(at(fl, raised));
                }
                parts.push(dd(fj, i, base, raised, rules)?);
                for fl in &fs[j + 1..] {
                    parts.push(at(fl, base));
                }
                terms.push(Expr::product(parts));
            }
            Expr::sum(terms)
        }
        Expr::Quotient(a, b) => {
            if !b.depends_on(i) {
                rules.insert(Rule::Linearity);
                Expr::quotient(dd(a, i, base, raised, rules)?, at(b, base))
            } else {
                let db = dd(b, i, base, raised, rules)?;
                let denom = Expr::product(vec![at(b, raised), at(b, base)]);
                if !a.depends_on(i) {
                    rules.insert(Rule::Reciprocal);
                    Expr::quotient(Expr::neg(Expr::product(vec![at(a, base), db])), denom)
                } else {
                    rules.insert(Rule::Quotient);
                    let da = dd(a, i, base, raised, rules)?;
                    let num = Expr::sum(vec![
                        Expr::product(vec![da, at(b, base)]),
                        Expr::neg(Expr::product(vec![at(a, base), db])),
                    ]);
                    Expr::quotient(num, denom)
                }
            }
        }
        Expr::Power(g, r) => {
            rules.insert(if r.is_integer() { Rule::Polynomial } else { Rule::RationalPower });
            chain(g, rules);
            let s = pow_secant(&at(g, base), &at(g, raised), *r);
            Expr::product(vec![s, dd(g, i, base, raised, rules)?])
        }
        Expr::Exp(g) => {
            rules.insert(Rule::Exponential);
            chain(g, rules);
            let s = Expr::exp_secant(at(g, base), at(g, raised));
            Expr::product(vec![s, dd(g, i, base, raised, rules)?])
        }
        Expr::Log(g) => {
            rules.insert(Rule::Logarithm);
            chain(g, rules);
            let s = Expr::log_secant(at(g, base), at(g, raised));
            Expr::product(vec![s, dd(g, i, base, raised, rules)?])
        }
        Expr::ExpSecant(..) | Expr::LogSecant(..) => {
            return Err(DivDiffError::NoRule(f.to_string()));
        }
    })
}

/// Numeric divided difference. When `|x_i^k+1 - x_i^k|` is below
/// `guard * max(1, |x_i^k|)` the partial derivative at the base corner is
/// returned instead of the quotient.
pub fn divided_difference_numeric(
    f: &Expr,
    i: usize,
    base: &StencilAssignment,
    s: &StepPair,
    guard: f64,
) -> Result<f64, DivDiffError> {
    if base.level(i) == Level::K1 {
        return Err(DivDiffError::AlreadyRaised(i));
    }
    let d = s.delta(i);
    if d.abs() <= guard * s.value(i, Level::K).abs().max(1.0) {
        return Ok(f.partial_derivative(i).eval(&s.corner(base))?);
    }
    Ok(partial_forward_difference(f, i, base, s)? / d)
}

/// Splits `f(k+1) - f(k)` into one share per variable, averaging the
/// telescoping decompositions over all raising orders.
///
/// Each share is a weighted sum over the `2^(n+1)` corners of the step box;
/// the shares add up to the forward difference.
pub fn symmetrized_partial_differences(f: &Expr, s: &StepPair) -> Result<Vec<f64>, DivDiffError> {
    let nv = s.n() + 1;
    assert!(nv <= 20, "too many variables for corner enumeration");
    let corners = 1usize << nv;
    let mut vals = Vec::with_capacity(corners);
    let mut point = vec![0.0; nv];
    for mask in 0..corners {
        for (j, p) in point.iter_mut().enumerate() {
            let level = if mask >> j & 1 == 1 { Level::K1 } else { Level::K };
            *p = s.value(j, level);
        }
        vals.push(f.eval(&point)?);
    }
    // w(m) = m! (nv-1-m)! / nv!
    let mut w = vec![0.0; nv];
    for (m, wm) in w.iter_mut().enumerate() {
        let mut v = 1.0 / nv as f64;
        for a in 1..=m {
            v *= a as f64 / (nv - a) as f64;
        }
        *wm = v;
    }
    let mut out = vec![0.0; nv];
    for (j, o) in out.iter_mut().enumerate() {
        let bit = 1usize << j;
        let mut acc = 0.0;
        for mask in (0..corners).filter(|m| m & bit == 0) {
            acc += w[mask.count_ones() as usize] * (vals[mask | bit] - vals[mask]);
        }
        *o = acc;
    }
    Ok(out)
}

/// Sum of the symmetrized shares; equals `f(k+1) - f(k)` up to round-off.
pub fn symmetrized_forward_difference(f: &Expr, s: &StepPair) -> Result<f64, DivDiffError> {
    Ok(symmetrized_partial_differences(f, s)?.iter().sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, VarSpace};

    fn pair(k: &[f64], k1: &[f64]) -> StepPair {
        StepPair::new(Point::new(k[0], k[1..].to_vec()), Point::new(k1[0], k1[1..].to_vec())).unwrap()
    }

    fn eval2(e: &DiscreteExpr, s: &StepPair) -> f64 {
        e.expr.eval(&s.two_level()).unwrap()
    }

    #[test]
    fn identity_stages() {
        let plan = PermutationPlan::identity(2);
        assert_eq!(plan.stages().len(), 4);
        assert_eq!(plan.stencil_for(0).to_string(), "(k,k,k)");
        assert_eq!(plan.stencil_for(2).to_string(), "(k+1,k+1,k)");
    }

    #[test]
    fn invalid_permutations() {
        assert!(permutation_stencils(&[0, 1, 1], 2).is_err());
        assert!(permutation_stencils(&[0, 1], 2).is_err());
        assert!(permutation_stencils(&[0, 3, 1], 2).is_err());
    }

    #[test]
    fn parses_short_sigma() {
        let plan = PermutationPlan::parse("(2,1,3)", 3).unwrap();
        assert_eq!(plan.sigma(), &[0, 2, 1, 3]);
    }

    #[test]
    fn counts_permutations() {
        assert_eq!(all_permutations(3).len(), 24);
        assert_eq!(all_permutations(0), vec![vec![0]]);
    }

    #[test]
    fn square_difference_is_sum() {
        // (x^2)[x^k, x^k+1] = x^k + x^k+1
        let f = parse("x1^2", VarSpace::State { n: 1 }).unwrap();
        let d = divided_difference_symbolic(&f, 1, &StencilAssignment::base(1)).unwrap();
        assert_eq!(d.expr.display(VarSpace::TwoLevel { n: 1 }).to_string(), "x1_k + x1_k1");
        assert!(d.rules.contains(&Rule::Polynomial));
    }

    #[test]
    fn inverse_sqrt_closed_form() {
        let f = parse("1/sqrt(x1)", VarSpace::State { n: 1 }).unwrap();
        let d = divided_difference_symbolic(&f, 1, &StencilAssignment::base(1)).unwrap();
        let (a, b): (f64, f64) = (1.5, 2.25);
        let s = pair(&[0.0, a], &[0.1, b]);
        let expect = -1.0 / (a.sqrt() * b.sqrt() * (a.sqrt() + b.sqrt()));
        assert!((eval2(&d, &s) - expect).abs() < 1e-15);
    }

    #[test]
    fn rational_power_closed_form() {
        let f = parse("x1^(2/3)", VarSpace::State { n: 1 }).unwrap();
        let d = divided_difference_symbolic(&f, 1, &StencilAssignment::base(1)).unwrap();
        let s = pair(&[0.0, 1.3], &[0.0, 1.9]);
        let direct = (1.9f64.powf(2.0 / 3.0) - 1.3f64.powf(2.0 / 3.0)) / 0.6;
        assert!((eval2(&d, &s) - direct).abs() < 1e-14);
        assert!(d.rules.contains(&Rule::RationalPower));
    }

    #[test]
    fn exp_and_log_limits() {
        let sp = VarSpace::State { n: 1 };
        for (src, deriv) in [("exp(x1)", 0.7f64.exp()), ("log(x1)", 1.0 / 0.7)] {
            let f = parse(src, sp).unwrap();
            let d = divided_difference_symbolic(&f, 1, &StencilAssignment::base(1)).unwrap();
            let s = pair(&[0.0, 0.7], &[1.0, 0.7]);
            assert!((eval2(&d, &s) - deriv).abs() < 1e-15, "{src}");
        }
    }

    #[test]
    fn product_telescopes() {
        let sp = VarSpace::State { n: 3 };
        let f = parse("x1*x2*x3", sp).unwrap();
        let plan = PermutationPlan::identity(3);
        let s = pair(&[0.0, 1.0, 2.0, 3.0], &[0.1, 1.1, 1.7, 3.4]);
        let mut total = 0.0;
        for j in 1..=3 {
            let d = divided_difference_symbolic(&f, j, plan.stencil_for(j)).unwrap();
            total += eval2(&d, &s) * s.delta(j);
        }
        let fd = forward_difference(&[f], &s).unwrap()[0];
        assert!((total - fd).abs() < 1e-14);
    }

    #[test]
    fn numeric_guard_uses_derivative() {
        let f = parse("x1^3", VarSpace::State { n: 1 }).unwrap();
        let s = pair(&[0.0, 2.0], &[0.0, 2.0 + 1e-9]);
        let v = divided_difference_numeric(&f, 1, &StencilAssignment::base(1), &s, DEFAULT_GUARD).unwrap();
        assert_eq!(v, 12.0);
    }

    #[test]
    fn already_raised_is_rejected() {
        let f = parse("x1", VarSpace::State { n: 1 }).unwrap();
        let st = StencilAssignment::base(1).raised(1);
        assert!(matches!(divided_difference_symbolic(&f, 1, &st), Err(DivDiffError::AlreadyRaised(1))));
    }

    #[test]
    fn symmetrized_matches_forward_difference() {
        let f = parse("x1*x2 + x2^2 - 1", VarSpace::State { n: 2 }).unwrap();
        let s = pair(&[0.0, 1.0, 2.0], &[0.0, 1.5, 2.5]);
        let sym = symmetrized_forward_difference(&f, &s).unwrap();
        assert!((sym - (1.5 * 2.5 + 6.25 - 2.0 - 4.0)).abs() < 1e-13);
    }
}
