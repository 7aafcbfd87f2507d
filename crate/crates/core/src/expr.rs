//! Scalar expression trees over time and state variables.
//!
//! Expressions index their variables by position. The meaning of a position is
//! given by a [`VarSpace`]: plain state space (`t, x1..xn`), the two-level
//! stencil space used by discrete schemes (`t_k, x1_k.., t_k1, x1_k1..`), or the
//! jet space used by the Euler operator (`t, x1..xn, xdot1..xdotn`).
//!
//! All trees are built through smart constructors, which flatten sums and
//! products and fold constants. A tree produced that way is canonical: printing
//! it and parsing the text back yields the same tree.

use std::fmt;
use std::ops;

use thiserror::Error;

/// A reduced fraction `num/den` with `den > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rational {
    num: i64,
    den: i64,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let r = a % b;
        a = b;
        b = r;
    }
    a
}

impl Rational {
    /// Builds `num/den` in lowest terms. Panics if `den == 0`.
    pub fn new(num: i64, den: i64) -> Self {
        assert!(den != 0, "rational with zero denominator");
        let g = gcd(num, den).max(1);
        let s = if den < 0 { -1 } else { 1 };
        Rational { num: s * num / g, den: s * den / g }
    }

    pub fn integer(p: i64) -> Self {
        Rational { num: p, den: 1 }
    }

    pub fn num(self) -> i64 {
        self.num
    }

    pub fn den(self) -> i64 {
        self.den
    }

    pub fn is_integer(self) -> bool {
        self.den == 1
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    fn sub_one(self) -> Self {
        Rational::new(self.num - self.den, self.den)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

/// How variable positions are named.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarSpace {
    /// `t, x1..xn`.
    State { n: usize },
    /// `t_k, x1_k..xn_k, t_k1, x1_k1..xn_k1`.
    TwoLevel { n: usize },
    /// `t, x1..xn, xdot1..xdotn`.
    Jet { n: usize },
}

/// Why a name failed to resolve in a [`VarSpace`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LookupError {
    Unknown,
    OutOfRange { index: usize, n: usize },
}

impl VarSpace {
    pub fn n(self) -> usize {
        match self {
            VarSpace::State { n } | VarSpace::TwoLevel { n } | VarSpace::Jet { n } => n,
        }
    }

    /// Number of positions in the space.
    pub fn len(self) -> usize {
        match self {
            VarSpace::State { n } => n + 1,
            VarSpace::TwoLevel { n } => 2 * (n + 1),
            VarSpace::Jet { n } => 2 * n + 1,
        }
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn name(self, i: usize) -> String {
        match self {
            VarSpace::State { .. } => state_name(i),
            VarSpace::TwoLevel { n } => {
                let (level, j) = (i / (n + 1), i % (n + 1));
                let suffix = if level == 0 { "_k" } else { "_k1" };
                format!("{}{}", state_name(j), suffix)
            }
            VarSpace::Jet { n } => {
                if i > n {
                    format!("xdot{}", i - n)
                } else {
                    state_name(i)
                }
            }
        }
    }

    pub fn lookup(self, name: &str) -> Result<usize, LookupError> {
        match self {
            VarSpace::State { n } => lookup_state(name, n),
            VarSpace::TwoLevel { n } => {
                let (base, level) = if let Some(b) = name.strip_suffix("_k1") {
                    (b, 1)
                } else if let Some(b) = name.strip_suffix("_k") {
                    (b, 0)
                } else {
                    return Err(LookupError::Unknown);
                };
                lookup_state(base, n).map(|j| j + level * (n + 1))
            }
            VarSpace::Jet { n } => {
                if let Some(d) = name.strip_prefix("xdot") {
                    let idx = parse_index(d).ok_or(LookupError::Unknown)?;
                    if idx == 0 || idx > n {
                        return Err(LookupError::OutOfRange { index: idx, n });
                    }
                    Ok(n + idx)
                } else {
                    lookup_state(name, n)
                }
            }
        }
    }
}

fn state_name(i: usize) -> String {
    if i == 0 {
        "t".to_string()
    } else {
        format!("x{i}")
    }
}

fn parse_index(d: &str) -> Option<usize> {
    if d.is_empty() || !d.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    d.parse().ok()
}

fn lookup_state(name: &str, n: usize) -> Result<usize, LookupError> {
    if name == "t" {
        return Ok(0);
    }
    let d = name.strip_prefix('x').ok_or(LookupError::Unknown)?;
    let idx = parse_index(d).ok_or(LookupError::Unknown)?;
    if idx == 0 || idx > n {
        return Err(LookupError::OutOfRange { index: idx, n });
    }
    Ok(idx)
}

/// A point `(t, x)` in state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Point {
    pub t: f64,
    pub x: Vec<f64>,
}

impl Point {
    pub fn new(t: f64, x: Vec<f64>) -> Self {
        Point { t, x }
    }

    /// Values in state-space order `[t, x1, .., xn]`.
    pub fn values(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.x.len() + 1);
        v.push(self.t);
        v.extend_from_slice(&self.x);
        v
    }
}

/// An expression tree. Build through the constructors on `Expr` (or the
/// arithmetic operators) to keep trees canonical.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Sum(Vec<Expr>),
    Product(Vec<Expr>),
    Quotient(Box<Expr>, Box<Expr>),
    Power(Box<Expr>, Rational),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Neg(Box<Expr>),
    /// `(exp(b) - exp(a)) / (b - a)`, equal to `exp(a)` when `a == b`.
    ExpSecant(Box<Expr>, Box<Expr>),
    /// `(log(b) - log(a)) / (b - a)`, equal to `1/a` when `a == b`.
    LogSecant(Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    LogNonPositive,
    DivisionByZero,
    NegativeFractionalPower,
    MissingVariable,
}

/// Evaluation left the real domain of some node.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{kind:?} at value {value} in `{node}`")]
pub struct DomainError {
    pub kind: DomainKind,
    pub value: f64,
    pub node: String,
}

fn domain(kind: DomainKind, value: f64, node: &Expr) -> DomainError {
    DomainError { kind, value, node: node.to_string() }
}

impl Expr {
    pub fn c(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn var(i: usize) -> Expr {
        Expr::Var(i)
    }

    pub fn zero() -> Expr {
        Expr::Const(0.0)
    }

    pub fn one() -> Expr {
        Expr::Const(1.0)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Expr::Const(c) if *c == 0.0)
    }

    pub fn sum(terms: Vec<Expr>) -> Expr {
        let mut out = Vec::with_capacity(terms.len());
        let mut c = 0.0;
        let mut have_c = false;
        let mut push = |e: Expr, out: &mut Vec<Expr>| match e {
            Expr::Const(v) => {
                c = if have_c { c + v } else { v };
                have_c = true;
            }
            other => out.push(other),
        };
        for t in terms {
            match t {
                Expr::Sum(inner) => {
                    for e in inner {
                        push(e, &mut out);
                    }
                }
                e => push(e, &mut out),
            }
        }
        if out.is_empty() {
            return Expr::Const(if have_c { c } else { 0.0 });
        }
        if have_c && c != 0.0 {
            out.push(Expr::Const(c));
        }
        if out.len() == 1 {
            out.pop().unwrap()
        } else {
            Expr::Sum(out)
        }
    }

    pub fn product(factors: Vec<Expr>) -> Expr {
        fn walk(e: Expr, c: &mut Option<f64>, neg: &mut bool, out: &mut Vec<Expr>) {
            match e {
                Expr::Const(v) => *c = Some(c.map_or(v, |c| c * v)),
                Expr::Neg(inner) => {
                    *neg = !*neg;
                    walk(*inner, c, neg, out);
                }
                Expr::Product(fs) => {
                    for f in fs {
                        walk(f, c, neg, out);
                    }
                }
                other => out.push(other),
            }
        }
        let mut c = None;
        let mut neg = false;
        let mut out = Vec::with_capacity(factors.len());
        for f in factors {
            walk(f, &mut c, &mut neg, &mut out);
        }
        let mut c = c.unwrap_or(1.0);
        if neg {
            c = -c;
        }
        if c == 0.0 || out.is_empty() {
            return Expr::Const(if out.is_empty() { c } else { 0.0 });
        }
        let body = if out.len() == 1 && (c == 1.0 || c == -1.0) {
            out.pop().unwrap()
        } else if c == 1.0 || c == -1.0 {
            Expr::Product(out)
        } else {
            out.insert(0, Expr::Const(c));
            return Expr::Product(out);
        };
        if c == -1.0 {
            Expr::Neg(Box::new(body))
        } else {
            body
        }
    }

    pub fn quotient(a: Expr, b: Expr) -> Expr {
        match (&a, &b) {
            (_, Expr::Const(v)) if *v == 1.0 => a,
            (Expr::Const(x), Expr::Const(y)) if *y != 0.0 => Expr::Const(x / y),
            (Expr::Const(x), _) if *x == 0.0 => Expr::zero(),
            _ => Expr::Quotient(Box::new(a), Box::new(b)),
        }
    }

    pub fn pow(base: Expr, r: Rational) -> Expr {
        if r.num == 0 {
            return Expr::one();
        }
        if r.num == 1 && r.den == 1 {
            return base;
        }
        if r.num < 0 {
            return Expr::quotient(Expr::one(), Expr::pow(base, Rational::new(-r.num, r.den)));
        }
        if let Expr::Const(v) = base {
            if let Ok(val) = eval_power(v, r) {
                return Expr::Const(val);
            }
        }
        Expr::Power(Box::new(base), r)
    }

    pub fn powi(base: Expr, p: i64) -> Expr {
        Expr::pow(base, Rational::integer(p))
    }

    pub fn sqrt(base: Expr) -> Expr {
        Expr::pow(base, Rational::new(1, 2))
    }

    pub fn exp(a: Expr) -> Expr {
        match a {
            Expr::Const(v) => Expr::Const(v.exp()),
            a => Expr::Exp(Box::new(a)),
        }
    }

    pub fn log(a: Expr) -> Expr {
        match a {
            Expr::Const(v) if v > 0.0 => Expr::Const(v.ln()),
            a => Expr::Log(Box::new(a)),
        }
    }

    pub fn neg(a: Expr) -> Expr {
        match a {
            Expr::Const(v) => Expr::Const(-v),
            Expr::Neg(inner) => *inner,
            Expr::Product(mut fs) => {
                if let Some(Expr::Const(c)) = fs.first() {
                    let c = -*c;
                    if c == 1.0 {
                        fs.remove(0);
                        if fs.len() == 1 {
                            return fs.pop().unwrap();
                        }
                    } else {
                        fs[0] = Expr::Const(c);
                    }
                    Expr::Product(fs)
                } else {
                    Expr::Neg(Box::new(Expr::Product(fs)))
                }
            }
            Expr::Quotient(num, den) if matches!(*num, Expr::Const(_) | Expr::Product(_)) => match Expr::neg(*num) {
                n @ (Expr::Const(_) | Expr::Product(_)) => Expr::Quotient(Box::new(n), den),
                n => Expr::Neg(Box::new(Expr::Quotient(Box::new(Expr::neg(n)), den))),
            },
            a => Expr::Neg(Box::new(a)),
        }
    }

    pub fn exp_secant(a: Expr, b: Expr) -> Expr {
        if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
            return Expr::Const(eval_exp_secant(*x, *y));
        }
        Expr::ExpSecant(Box::new(a), Box::new(b))
    }

    pub fn log_secant(a: Expr, b: Expr) -> Expr {
        if let (Expr::Const(x), Expr::Const(y)) = (&a, &b) {
            if *x > 0.0 && *y > 0.0 {
                return Expr::Const(eval_log_secant(*x, *y));
            }
        }
        Expr::LogSecant(Box::new(a), Box::new(b))
    }

    /// Whether the expression mentions variable `i`.
    pub fn depends_on(&self, i: usize) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(j) => *j == i,
            Expr::Sum(v) | Expr::Product(v) => v.iter().any(|e| e.depends_on(i)),
            Expr::Quotient(a, b) | Expr::ExpSecant(a, b) | Expr::LogSecant(a, b) => a.depends_on(i) || b.depends_on(i),
            Expr::Power(a, _) | Expr::Exp(a) | Expr::Log(a) | Expr::Neg(a) => a.depends_on(i),
        }
    }

    /// Largest variable index mentioned, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(j) => Some(*j),
            Expr::Sum(v) | Expr::Product(v) => v.iter().filter_map(Expr::max_var).max(),
            Expr::Quotient(a, b) | Expr::ExpSecant(a, b) | Expr::LogSecant(a, b) => a.max_var().max(b.max_var()),
            Expr::Power(a, _) | Expr::Exp(a) | Expr::Log(a) | Expr::Neg(a) => a.max_var(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + match self {
            Expr::Const(_) | Expr::Var(_) => 0,
            Expr::Sum(v) | Expr::Product(v) => v.iter().map(Expr::node_count).sum(),
            Expr::Quotient(a, b) | Expr::ExpSecant(a, b) | Expr::LogSecant(a, b) => a.node_count() + b.node_count(),
            Expr::Power(a, _) | Expr::Exp(a) | Expr::Log(a) | Expr::Neg(a) => a.node_count(),
        }
    }

    /// Replaces every `Var(i)` by `f(i)`, rebuilding through the smart
    /// constructors.
    pub fn substitute(&self, f: &dyn Fn(usize) -> Expr) -> Expr {
        match self {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Var(i) => f(*i),
            Expr::Sum(v) => Expr::sum(v.iter().map(|e| e.substitute(f)).collect()),
            Expr::Product(v) => Expr::product(v.iter().map(|e| e.substitute(f)).collect()),
            Expr::Quotient(a, b) => Expr::quotient(a.substitute(f), b.substitute(f)),
            Expr::Power(a, r) => Expr::pow(a.substitute(f), *r),
            Expr::Exp(a) => Expr::exp(a.substitute(f)),
            Expr::Log(a) => Expr::log(a.substitute(f)),
            Expr::Neg(a) => Expr::neg(a.substitute(f)),
            Expr::ExpSecant(a, b) => Expr::exp_secant(a.substitute(f), b.substitute(f)),
            Expr::LogSecant(a, b) => Expr::log_secant(a.substitute(f), b.substitute(f)),
        }
    }

    /// Renames variables: `Var(i)` becomes `Var(map(i))`.
    pub fn remap(&self, map: &dyn Fn(usize) -> usize) -> Expr {
        self.substitute(&|i| Expr::Var(map(i)))
    }

    /// Evaluates with `vars[i]` bound to variable `i`.
    pub fn eval(&self, vars: &[f64]) -> Result<f64, DomainError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => match vars.get(*i) {
                Some(v) => *v,
                None => return Err(domain(DomainKind::MissingVariable, *i as f64, self)),
            },
            Expr::Sum(v) => {
                let mut acc = v[0].eval(vars)?;
                for e in &v[1..] {
                    acc += e.eval(vars)?;
                }
                acc
            }
            Expr::Product(v) => {
                let mut acc = v[0].eval(vars)?;
                for e in &v[1..] {
                    acc *= e.eval(vars)?;
                }
                acc
            }
            Expr::Quotient(a, b) => {
                let d = b.eval(vars)?;
                if d == 0.0 {
                    return Err(domain(DomainKind::DivisionByZero, d, self));
                }
                a.eval(vars)? / d
            }
            Expr::Power(a, r) => {
                let b = a.eval(vars)?;
                eval_power(b, *r).map_err(|k| domain(k, b, self))?
            }
            Expr::Exp(a) => a.eval(vars)?.exp(),
            Expr::Log(a) => {
                let v = a.eval(vars)?;
                if v <= 0.0 {
                    return Err(domain(DomainKind::LogNonPositive, v, self));
                }
                v.ln()
            }
            Expr::Neg(a) => -a.eval(vars)?,
            Expr::ExpSecant(a, b) => eval_exp_secant(a.eval(vars)?, b.eval(vars)?),
            Expr::LogSecant(a, b) => {
                let (x, y) = (a.eval(vars)?, b.eval(vars)?);
                if x <= 0.0 || y <= 0.0 {
                    return Err(domain(DomainKind::LogNonPositive, x.min(y), self));
                }
                eval_log_secant(x, y)
            }
        })
    }

    pub fn eval_at(&self, p: &Point) -> Result<f64, DomainError> {
        self.eval(&p.values())
    }

    /// Exact partial derivative with respect to variable `i`.
    ///
    /// The derivatives of the secant nodes use the difference-quotient form
    /// and are undefined where their two arguments coincide.
    pub fn partial_derivative(&self, i: usize) -> Expr {
        if !self.depends_on(i) {
            return Expr::zero();
        }
        match self {
            Expr::Const(_) => Expr::zero(),
            Expr::Var(j) => Expr::c(if *j == i { 1.0 } else { 0.0 }),
            Expr::Sum(v) => Expr::sum(v.iter().map(|e| e.partial_derivative(i)).collect()),
            Expr::Product(v) => {
                let mut terms = Vec::new();
                for (j, fj) in v.iter().enumerate() {
                    if !fj.depends_on(i) {
                        continue;
                    }
                    let mut fs: Vec<Expr> = Vec::with_capacity(v.len());
                    for (l, fl) in v.iter().enumerate() {
                        if l != j {
                            fs.push(fl.clone());
                        }
                    }
                    fs.push(fj.partial_derivative(i));
                    terms.push(Expr::product(fs));
                }
                Expr::sum(terms)
            }
            Expr::Quotient(a, b) => {
                let da = a.partial_derivative(i);
                if !b.depends_on(i) {
                    return Expr::quotient(da, (**b).clone());
                }
                let db = b.partial_derivative(i);
                let num = Expr::sum(vec![
                    Expr::product(vec![da, (**b).clone()]),
                    Expr::neg(Expr::product(vec![(**a).clone(), db])),
                ]);
                Expr::quotient(num, Expr::powi((**b).clone(), 2))
            }
            Expr::Power(a, r) => {
                Expr::product(vec![Expr::c(r.as_f64()), Expr::pow((**a).clone(), r.sub_one()), a.partial_derivative(i)])
            }
            Expr::Exp(a) => Expr::product(vec![self.clone(), a.partial_derivative(i)]),
            Expr::Log(a) => Expr::quotient(a.partial_derivative(i), (**a).clone()),
            Expr::Neg(a) => Expr::neg(a.partial_derivative(i)),
            Expr::ExpSecant(a, b) => {
                let gap = Expr::sum(vec![(**b).clone(), Expr::neg((**a).clone())]);
                let wa =
                    Expr::quotient(Expr::sum(vec![self.clone(), Expr::neg(Expr::exp((**a).clone()))]), gap.clone());
                let wb = Expr::quotient(Expr::sum(vec![Expr::exp((**b).clone()), Expr::neg(self.clone())]), gap);
                Expr::sum(vec![
                    Expr::product(vec![wa, a.partial_derivative(i)]),
                    Expr::product(vec![wb, b.partial_derivative(i)]),
                ])
            }
            Expr::LogSecant(a, b) => {
                let gap = Expr::sum(vec![(**b).clone(), Expr::neg((**a).clone())]);
                let inv = |e: &Expr| Expr::quotient(Expr::one(), e.clone());
                let wa = Expr::quotient(Expr::sum(vec![self.clone(), Expr::neg(inv(a))]), gap.clone());
                let wb = Expr::quotient(Expr::sum(vec![inv(b), Expr::neg(self.clone())]), gap);
                Expr::sum(vec![
                    Expr::product(vec![wa, a.partial_derivative(i)]),
                    Expr::product(vec![wb, b.partial_derivative(i)]),
                ])
            }
        }
    }

    /// Renders with names from `space`.
    pub fn display(&self, space: VarSpace) -> Displayed<'_> {
        Displayed { expr: self, space: Some(space) }
    }
}

/// Printing adaptor returned by [`Expr::display`].
pub struct Displayed<'a> {
    expr: &'a Expr,
    space: Option<VarSpace>,
}

impl fmt::Display for Displayed<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = String::new();
        write_expr(self.expr, self.space, 0, &mut s);
        f.write_str(&s)
    }
}

/// Prints with state-space names (`t`, `x1`, ...).
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        Displayed { expr: self, space: None }.fmt(f)
    }
}

pub(crate) fn eval_power(b: f64, r: Rational) -> Result<f64, DomainKind> {
    if r.den > 1 && b < 0.0 {
        return Err(DomainKind::NegativeFractionalPower);
    }
    if r.num < 0 && b == 0.0 {
        return Err(DomainKind::DivisionByZero);
    }
    Ok(match r.den {
        1 => b.powi(r.num as i32),
        2 => b.sqrt().powi(r.num as i32),
        _ => b.powf(r.as_f64()),
    })
}

pub(crate) fn eval_exp_secant(a: f64, b: f64) -> f64 {
    let d = b - a;
    if d == 0.0 {
        a.exp()
    } else {
        a.exp() * d.exp_m1() / d
    }
}

pub(crate) fn eval_log_secant(a: f64, b: f64) -> f64 {
    let d = b - a;
    if d == 0.0 {
        1.0 / a
    } else {
        (d / a).ln_1p() / d
    }
}

// ---------------------------------------------------------------------------
// Printing

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Sum(_) => 1,
        Expr::Quotient(..) => 2,
        Expr::Product(fs) => match fs.first() {
            Some(Expr::Const(c)) if *c < 0.0 => 3,
            _ => 2,
        },
        Expr::Neg(_) => 3,
        Expr::Const(c) if *c < 0.0 || c.is_sign_negative() => 3,
        Expr::Power(_, r) if *r == Rational::new(1, 2) => 5,
        Expr::Power(..) => 4,
        _ => 5,
    }
}

fn fmt_const(c: f64, out: &mut String) {
    use std::fmt::Write;
    if c.is_sign_negative() {
        out.push('-');
        fmt_const(-c, out);
    } else if c.fract() == 0.0 && c < 1e15 {
        let _ = write!(out, "{}", c as i64);
    } else {
        let _ = write!(out, "{c:?}");
    }
}

fn write_child(e: &Expr, space: Option<VarSpace>, min: u8, out: &mut String) {
    if prec(e) < min {
        out.push('(');
        write_expr(e, space, 0, out);
        out.push(')');
    } else {
        write_expr(e, space, min, out);
    }
}

/// Returns the magnitude form of a term that prints with a leading minus.
fn negated_term(e: &Expr) -> Option<Expr> {
    match e {
        Expr::Neg(inner) => Some((**inner).clone()),
        Expr::Const(c) if c.is_sign_negative() => Some(Expr::Const(-c)),
        Expr::Product(fs) => match fs.first() {
            Some(Expr::Const(c)) if *c < 0.0 => {
                let mut fs = fs.clone();
                fs[0] = Expr::Const(-c);
                Some(Expr::Product(fs))
            }
            _ => None,
        },
        Expr::Quotient(a, b) => match **a {
            Expr::Const(_) | Expr::Product(_) => negated_term(a).map(|m| Expr::Quotient(Box::new(m), b.clone())),
            _ => None,
        },
        _ => None,
    }
}

fn write_expr(e: &Expr, space: Option<VarSpace>, _min: u8, out: &mut String) {
    match e {
        Expr::Const(c) => fmt_const(*c, out),
        Expr::Var(i) => match space {
            Some(s) => out.push_str(&s.name(*i)),
            None => out.push_str(&state_name(*i)),
        },
        Expr::Sum(terms) => {
            for (k, t) in terms.iter().enumerate() {
                if k == 0 {
                    write_child(t, space, 2, out);
                    continue;
                }
                match negated_term(t) {
                    Some(m) => {
                        out.push_str(" - ");
                        write_child(&m, space, 2, out);
                    }
                    None => {
                        out.push_str(" + ");
                        write_child(t, space, 2, out);
                    }
                }
            }
        }
        Expr::Product(fs) => {
            for (k, f) in fs.iter().enumerate() {
                if k > 0 {
                    out.push('*');
                }
                if k == 0 {
                    if let Expr::Const(c) = f {
                        fmt_const(*c, out);
                        continue;
                    }
                }
                write_child(f, space, 3, out);
            }
        }
        Expr::Quotient(a, b) => {
            write_child(a, space, 2, out);
            out.push('/');
            write_child(b, space, 3, out);
        }
        Expr::Power(a, r) => {
            if *r == Rational::new(1, 2) {
                out.push_str("sqrt(");
                write_expr(a, space, 0, out);
                out.push(')');
                return;
            }
            write_child(a, space, 5, out);
            out.push('^');
            if r.is_integer() && r.num >= 0 {
                out.push_str(&r.num.to_string());
            } else {
                out.push('(');
                out.push_str(&r.to_string());
                out.push(')');
            }
        }
        Expr::Exp(a) | Expr::Log(a) => {
            out.push_str(if matches!(e, Expr::Exp(_)) { "exp(" } else { "log(" });
            write_expr(a, space, 0, out);
            out.push(')');
        }
        Expr::Neg(a) => {
            out.push('-');
            write_child(a, space, 4, out);
        }
        Expr::ExpSecant(a, b) | Expr::LogSecant(a, b) => {
            out.push_str(if matches!(e, Expr::ExpSecant(..)) { "expdd(" } else { "logdd(" });
            write_expr(a, space, 0, out);
            out.push_str(", ");
            write_expr(b, space, 0, out);
            out.push(')');
        }
    }
}

// ---------------------------------------------------------------------------
// Parsing

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    UnexpectedChar(char),
    UnexpectedEnd,
    UnknownIdentifier(String),
    VariableOutOfRange { name: String, n: usize },
    UnknownFunction(String),
    WrongArity { name: String, expected: usize },
    BadExponent,
    InvalidNumber(String),
}

/// A syntax error at byte `offset` of the input.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at byte {offset}: {kind:?}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

/// Parses `text` with variable names from `space`.
///
/// Grammar: `+ - * /`, unary minus, `^` with an integer or parenthesized
/// rational exponent, decimal literals, the functions `exp`, `log`, `sqrt`,
/// and the secant forms `expdd(a, b)` and `logdd(a, b)`.
pub fn parse(text: &str, space: VarSpace) -> Result<Expr, ParseError> {
    let mut p = Parser { src: text.as_bytes(), pos: 0, space };
    let e = p.expr()?;
    p.skip_ws();
    if p.pos < p.src.len() {
        return Err(p.unexpected());
    }
    Ok(e)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    space: VarSpace,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn unexpected(&self) -> ParseError {
        match self.src.get(self.pos) {
            Some(&b) => ParseError { offset: self.pos, kind: ParseErrorKind::UnexpectedChar(b as char) },
            None => ParseError { offset: self.pos, kind: ParseErrorKind::UnexpectedEnd },
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), ParseError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut terms = vec![self.term()?];
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    terms.push(self.term()?);
                }
                Some(b'-') => {
                    self.pos += 1;
                    terms.push(Expr::neg(self.term()?));
                }
                _ => break,
            }
        }
        Ok(if terms.len() == 1 { terms.pop().unwrap() } else { Expr::sum(terms) })
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut acc = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::product(vec![acc, rhs]);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    acc = Expr::quotient(acc, rhs);
                }
                _ => break,
            }
        }
        Ok(acc)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Expr::neg(self.unary()?))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            let r = self.exponent()?;
            return Ok(Expr::pow(base, r));
        }
        Ok(base)
    }

    fn integer(&mut self) -> Result<i64, ParseError> {
        self.skip_ws();
        let start = self.pos;
        let neg = if self.src.get(self.pos) == Some(&b'-') {
            self.pos += 1;
            true
        } else {
            false
        };
        let digits = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == digits {
            return Err(ParseError { offset: start, kind: ParseErrorKind::BadExponent });
        }
        let text = std::str::from_utf8(&self.src[digits..self.pos]).unwrap();
        let v: i64 = text.parse().map_err(|_| ParseError { offset: start, kind: ParseErrorKind::BadExponent })?;
        Ok(if neg { -v } else { v })
    }

    fn exponent(&mut self) -> Result<Rational, ParseError> {
        let start = self.pos;
        if self.peek() == Some(b'(') {
            self.pos += 1;
            let p = self.integer()?;
            let mut q = 1;
            if self.peek() == Some(b'/') {
                self.pos += 1;
                q = self.integer()?;
                if q <= 0 {
                    return Err(ParseError { offset: start, kind: ParseErrorKind::BadExponent });
                }
            }
            self.expect(b')')?;
            Ok(Rational::new(p, q))
        } else {
            Ok(Rational::integer(self.integer()?))
        }
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        let start = match self.peek() {
            Some(_) => self.pos,
            None => return Err(self.unexpected()),
        };
        let b = self.src[start];
        if b == b'(' {
            self.pos += 1;
            let e = self.expr()?;
            self.expect(b')')?;
            return Ok(e);
        }
        if b.is_ascii_digit() || b == b'.' {
            return self.number();
        }
        if b.is_ascii_alphabetic() || b == b'_' {
            while self.pos < self.src.len()
                && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
            {
                self.pos += 1;
            }
            let name = std::str::from_utf8(&self.src[start..self.pos]).unwrap().to_string();
            if self.peek() == Some(b'(') {
                return self.call(name, start);
            }
            return match self.space.lookup(&name) {
                Ok(i) => Ok(Expr::Var(i)),
                Err(LookupError::Unknown) => {
                    Err(ParseError { offset: start, kind: ParseErrorKind::UnknownIdentifier(name) })
                }
                Err(LookupError::OutOfRange { n, .. }) => {
                    Err(ParseError { offset: start, kind: ParseErrorKind::VariableOutOfRange { name, n } })
                }
            };
        }
        Err(self.unexpected())
    }

    fn call(&mut self, name: String, start: usize) -> Result<Expr, ParseError> {
        let arity = match name.as_str() {
            "exp" | "log" | "sqrt" => 1,
            "expdd" | "logdd" => 2,
            _ => return Err(ParseError { offset: start, kind: ParseErrorKind::UnknownFunction(name) }),
        };
        self.expect(b'(')?;
        let mut args = vec![self.expr()?];
        while self.peek() == Some(b',') {
            self.pos += 1;
            args.push(self.expr()?);
        }
        self.expect(b')')?;
        if args.len() != arity {
            return Err(ParseError { offset: start, kind: ParseErrorKind::WrongArity { name, expected: arity } });
        }
        let mut it = args.into_iter();
        let a = it.next().unwrap();
        Ok(match name.as_str() {
            "exp" => Expr::exp(a),
            "log" => Expr::log(a),
            "sqrt" => Expr::sqrt(a),
            "expdd" => Expr::exp_secant(a, it.next().unwrap()),
            _ => Expr::log_secant(a, it.next().unwrap()),
        })
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        let digits = |p: &mut Self| {
            while p.pos < p.src.len() && p.src[p.pos].is_ascii_digit() {
                p.pos += 1;
            }
        };
        digits(self);
        if self.src.get(self.pos) == Some(&b'.') {
            self.pos += 1;
            digits(self);
        }
        if matches!(self.src.get(self.pos), Some(b'e' | b'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.src.get(self.pos), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            let d = self.pos;
            digits(self);
            if self.pos == d {
                self.pos = save;
            }
        }
        let text = std::str::from_utf8(&self.src[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ParseError { offset: start, kind: ParseErrorKind::InvalidNumber(text.to_string()) })
    }
}

// ---------------------------------------------------------------------------
// Operators

impl ops::Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::sum(vec![self, rhs])
    }
}

impl ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::sum(vec![self, Expr::neg(rhs)])
    }
}

impl ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::product(vec![self, rhs])
    }
}

impl ops::Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::quotient(self, rhs)
    }
}

impl ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::neg(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const S3: VarSpace = VarSpace::State { n: 3 };

    fn p(s: &str) -> Expr {
        parse(s, S3).unwrap()
    }

    #[test]
    fn evaluates_polynomial() {
        let e = p("x1^2 + 3*x2 - t/2");
        assert_eq!(e.eval(&[4.0, 2.0, 1.0, 0.0]).unwrap(), 4.0 + 3.0 - 2.0);
    }

    #[test]
    fn sqrt_is_half_power() {
        assert_eq!(p("sqrt(x1)"), Expr::pow(Expr::var(1), Rational::new(1, 2)));
        assert_eq!(p("x1^(1/2)"), p("sqrt(x1)"));
        assert_eq!(p("sqrt(x1)").eval(&[0.0, 9.0, 0.0, 0.0]).unwrap(), 3.0);
    }

    #[test]
    fn unary_minus_binds_below_power() {
        assert_eq!(p("-x1^2").eval(&[0.0, 3.0, 0.0, 0.0]).unwrap(), -9.0);
    }

    #[test]
    fn syntax_error_reports_offset() {
        let err = parse("x1 + * x2", S3).unwrap_err();
        assert_eq!(err.offset, 5);
        let err = parse("x1 + (x2", S3).unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnexpectedEnd);
    }

    #[test]
    fn out_of_range_variable_is_rejected() {
        let err = parse("x1 + x4", S3).unwrap_err();
        assert_eq!(err.offset, 5);
        assert!(matches!(err.kind, ParseErrorKind::VariableOutOfRange { n: 3, .. }));
        assert!(matches!(parse("x0", S3).unwrap_err().kind, ParseErrorKind::VariableOutOfRange { .. }));
        assert!(matches!(parse("y", S3).unwrap_err().kind, ParseErrorKind::UnknownIdentifier(_)));
    }

    #[test]
    fn domain_errors() {
        let v = [0.0, -1.0, 0.0, 0.0];
        assert_eq!(p("log(x1)").eval(&v).unwrap_err().kind, DomainKind::LogNonPositive);
        assert_eq!(p("1/x2").eval(&v).unwrap_err().kind, DomainKind::DivisionByZero);
        assert_eq!(p("x1^(1/3)").eval(&v).unwrap_err().kind, DomainKind::NegativeFractionalPower);
        assert_eq!(p("x1^3").eval(&v).unwrap(), -1.0);
    }

    #[test]
    fn derivative_of_rational_power() {
        let d = p("x1^(3/2)").partial_derivative(1);
        let v = d.eval(&[0.0, 4.0, 0.0, 0.0]).unwrap();
        assert!((v - 3.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_of_log_and_exp() {
        let e = p("log(x1*x2) + exp(t*x3)");
        let vals = [0.5, 2.0, 3.0, 4.0];
        assert!((e.partial_derivative(1).eval(&vals).unwrap() - 0.5).abs() < 1e-15);
        assert!((e.partial_derivative(0).eval(&vals).unwrap() - 4.0 * 2f64.exp()).abs() < 1e-13);
    }

    #[test]
    fn printer_round_trips() {
        for s in [
            "x1 - 2*x2",
            "-x1*x2 + 3",
            "x1/(x2*x3) - (x1 + 1)/x2",
            "exp(-t)*sqrt(x1^2 + x2^2)",
            "x1^(2/3) - log(x2)",
            "expdd(x1, x2) + logdd(x2, x3)",
            "1.0e-7*x1 - 0.1",
            "(x1/x2)*x3",
            "-(x1 + x2)",
            "1/x1^3",
        ] {
            let e = p(s);
            let printed = e.to_string();
            assert_eq!(parse(&printed, S3).unwrap(), e, "{s} -> {printed}");
        }
    }

    #[test]
    fn two_level_names() {
        let sp = VarSpace::TwoLevel { n: 2 };
        assert_eq!(sp.name(0), "t_k");
        assert_eq!(sp.name(4), "x1_k1");
        assert_eq!(sp.lookup("x2_k1"), Ok(5));
        let e = parse("x1_k1*x2_k - t_k", sp).unwrap();
        assert_eq!(parse(&e.display(sp).to_string(), sp).unwrap(), e);
    }

    #[test]
    fn jet_names() {
        let sp = VarSpace::Jet { n: 2 };
        assert_eq!(sp.lookup("xdot2"), Ok(4));
        assert_eq!(sp.name(3), "xdot1");
    }

    #[test]
    fn secants_at_coincidence() {
        assert_eq!(eval_exp_secant(0.3, 0.3), 0.3f64.exp());
        assert_eq!(eval_log_secant(2.0, 2.0), 0.5);
        let v = eval_log_secant(2.0, 2.0 + 1e-12);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constructors_fold() {
        let x = Expr::var(1);
        assert_eq!(Expr::c(0.0) * x.clone(), Expr::zero());
        assert_eq!(Expr::c(1.0) * x.clone(), x);
        assert_eq!(x.clone() + Expr::c(0.0), x);
        assert_eq!(-(-x.clone()), x);
        assert_eq!(Expr::powi(x.clone(), 0), Expr::one());
    }
}
