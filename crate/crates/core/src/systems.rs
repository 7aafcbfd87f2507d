//! The bundled ODE systems and user-defined system files.
//!
//! Every system passes a registration gate before use: at 100 random domain
//! points the analytic multiplier must satisfy `Lambda f = -d psi/dt` to
//! 1e-10 relative, and the multiplier must have full row rank.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::divdiff::{permutation_stencils, PermutationPlan, StepPair};
use crate::expr::{parse, DomainError, Expr, ParseError, Point, VarSpace};
use crate::multiplier::{analytic_multiplier, check_continuous_conditions};
use crate::scheme::{closed_form, select_minor_values, ClosedForm};

/// Registration gate tolerance for `Lambda f + d psi/dt`, relative.
pub const REGISTRATION_TOL: f64 = 1e-10;
/// Points sampled by the registration gate.
pub const REGISTRATION_POINTS: usize = 100;

/// Bundled system identifiers.
pub const IDS: [&str; 5] = ["rigid-body", "lv2", "lv3", "pr3bp", "dho"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SystemError {
    #[error("line {line}: {source}")]
    Parse { line: usize, source: ParseError },
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("registration failed: {0}")]
    Registration(String),
    #[error("unknown system `{0}`")]
    Unknown(String),
    #[error(transparent)]
    Domain(#[from] DomainError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    Gt,
    Ge,
    Lt,
    Le,
    Ne,
}

/// `lhs rel rhs`, stored as `lhs - rhs rel 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub expr: Expr,
    pub rel: Relation,
    pub text: String,
}

impl Predicate {
    pub fn parse(text: &str, n: usize) -> Result<Self, ParseError> {
        let space = VarSpace::State { n };
        let ops = [
            (">=", Relation::Ge),
            ("<=", Relation::Le),
            ("!=", Relation::Ne),
            (">", Relation::Gt),
            ("<", Relation::Lt),
        ];
        for (tok, rel) in ops {
            if let Some(pos) = text.find(tok) {
                let lhs = parse(&text[..pos], space)?;
                let rhs = parse(&text[pos + tok.len()..], space).map_err(|mut e| {
                    e.offset += pos + tok.len();
                    e
                })?;
                return Ok(Predicate { expr: lhs - rhs, rel, text: text.trim().to_string() });
            }
        }
        let e = parse(text, space)?;
        Ok(Predicate { expr: e, rel: Relation::Gt, text: format!("{} > 0", text.trim()) })
    }

    fn positive(expr: Expr, text: &str) -> Self {
        Predicate { expr, rel: Relation::Gt, text: text.to_string() }
    }

    /// False when the predicate fails or cannot be evaluated.
    pub fn holds(&self, vals: &[f64]) -> bool {
        match self.expr.eval(vals) {
            Ok(v) => match self.rel {
                Relation::Gt => v > 0.0,
                Relation::Ge => v >= 0.0,
                Relation::Lt => v < 0.0,
                Relation::Le => v <= 0.0,
                Relation::Ne => v != 0.0,
            },
            Err(_) => false,
        }
    }
}

/// Axis-aligned sampling region for random points.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBox {
    pub t: (f64, f64),
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    fn uniform(n: usize, t: (f64, f64), lo: f64, hi: f64) -> Self {
        SampleBox { t, lo: vec![lo; n], hi: vec![hi; n] }
    }
}

/// An ODE system `x' = f(t, x)` with conserved quantities `psi`.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub id: String,
    pub n: usize,
    pub f: Vec<Expr>,
    pub psi: Vec<Expr>,
    pub psi_names: Vec<String>,
    pub domain: Vec<Predicate>,
    pub params: Vec<(String, f64)>,
    pub closed_forms: Vec<ClosedForm>,
    /// Transcribed `g^tau` (one entry per component; only the complement of
    /// the solved minor is read).
    pub paper_g: Option<Vec<Expr>>,
    /// Rows of `f` taken as `g` in the minor inversion.
    pub g_split: Option<Vec<usize>>,
    pub default_sigma: Vec<usize>,
    pub sample: SampleBox,
    /// Extra constraints used only when sampling random points.
    pub sample_constraints: Vec<Predicate>,
    pub x0: Vec<f64>,
}

fn st(n: usize) -> impl Fn(usize) -> Expr {
    move |j| {
        assert!(j <= n);
        Expr::var(j)
    }
}

fn c(v: f64) -> Expr {
    Expr::c(v)
}

impl SystemSpec {
    /// A system without registration checks or closed forms.
    pub fn unchecked(id: &str, f: Vec<Expr>, psi: Vec<Expr>) -> Self {
        let n = f.len();
        SystemSpec {
            id: id.to_string(),
            n,
            psi_names: (1..=psi.len()).map(|i| format!("psi{i}")).collect(),
            f,
            psi,
            domain: vec![],
            params: vec![],
            closed_forms: vec![],
            paper_g: None,
            g_split: None,
            default_sigma: (0..=n).collect(),
            sample: SampleBox::uniform(n, (0.0, 1.0), -1.0, 1.0),
            sample_constraints: vec![],
            x0: vec![1.0; n],
        }
    }

    pub fn m(&self) -> usize {
        self.psi.len()
    }

    pub fn default_plan(&self) -> PermutationPlan {
        permutation_stencils(&self.default_sigma, self.n).expect("default sigma is valid")
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.iter().find(|(k, _)| k == name).map(|(_, v)| *v)
    }

    pub fn in_domain(&self, vals: &[f64]) -> bool {
        self.domain.iter().all(|p| p.holds(vals))
    }

    pub fn psi_values(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        let mut v = vec![t];
        v.extend_from_slice(x);
        self.psi.iter().map(|p| p.eval(&v)).collect()
    }

    pub fn field(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, DomainError> {
        let mut v = vec![t];
        v.extend_from_slice(x);
        self.f.iter().map(|p| p.eval(&v)).collect()
    }

    fn admissible(&self, vals: &[f64]) -> bool {
        self.in_domain(vals) && self.sample_constraints.iter().all(|p| p.holds(vals))
    }

    /// A uniformly random admissible point of the sampling box.
    pub fn random_point<R: Rng>(&self, rng: &mut R) -> Point {
        for _ in 0..100_000 {
            let t = rng.random_range(self.sample.t.0..=self.sample.t.1);
            let x: Vec<f64> = (0..self.n).map(|j| rng.random_range(self.sample.lo[j]..=self.sample.hi[j])).collect();
            let p = Point::new(t, x);
            if self.admissible(&p.values()) {
                return p;
            }
        }
        panic!("no admissible sample point for system {}", self.id);
    }

    /// A random step pair: admissible base point, time step in `[1e-3, 0.1]`
    /// and a state increment of up to 10% of the box width per component.
    pub fn random_step_pair<R: Rng>(&self, rng: &mut R) -> StepPair {
        loop {
            let k = self.random_point(rng);
            let dt = rng.random_range(1e-3..=0.1);
            let x1: Vec<f64> = (0..self.n)
                .map(|j| {
                    let w = 0.1 * (self.sample.hi[j] - self.sample.lo[j]);
                    k.x[j] + rng.random_range(-w..=w)
                })
                .collect();
            let k1 = Point::new(k.t + dt, x1);
            if self.admissible(&k1.values()) {
                return StepPair { k, k1 };
            }
        }
    }

    /// Runs the registration gate.
    pub fn validate(&self) -> Result<(), SystemError> {
        let (m, n) = (self.m(), self.n);
        if n == 0 || self.f.len() != n {
            return Err(SystemError::Registration("f needs one entry per component".into()));
        }
        if m == 0 || m > n {
            return Err(SystemError::Registration(format!("need 1 <= m <= n, got m={m}, n={n}")));
        }
        for e in self.f.iter().chain(&self.psi) {
            if e.max_var().is_some_and(|v| v > n) {
                return Err(SystemError::Registration(format!("`{e}` uses a variable beyond x{n}")));
            }
        }
        if self.x0.len() != n || self.default_sigma.len() != n + 1 {
            return Err(SystemError::Registration("x0 or default sigma has wrong length".into()));
        }
        let lam = analytic_multiplier(&self.psi, n);
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..REGISTRATION_POINTS {
            let p = self.random_point(&mut rng);
            let r = check_continuous_conditions(&lam, &self.psi, &self.f, &p)?;
            if r.r2 > REGISTRATION_TOL * r.scale2 {
                return Err(SystemError::Registration(format!("Lambda f + dpsi/dt = {:e} at {:?}", r.r2, p.values())));
            }
            let lt = lam.eval(&p.values())?;
            if select_minor_values(&lt, None).is_err() {
                return Err(SystemError::Registration(format!(
                    "conserved quantities are dependent at {:?}",
                    p.values()
                )));
            }
        }
        Ok(())
    }

    fn registered(self) -> Result<Self, SystemError> {
        self.validate()?;
        Ok(self)
    }

    /// Parses a system file: `n=`, `f1=`..`fn=`, `psi1=`.., `domain=` lines
    /// (predicates separated by `;`), optional `x0=` and `box=lo,hi`.
    /// `#` starts a comment.
    pub fn from_spec_text(text: &str) -> Result<Self, SystemError> {
        let mut n = None;
        let mut fs: Vec<(usize, usize, String)> = vec![];
        let mut psis: Vec<(usize, usize, String)> = vec![];
        let mut domain_lines = vec![];
        let mut x0 = None;
        let mut bx = None;
        let mut id = "user".to_string();
        for (ln, raw) in text.lines().enumerate() {
            let line_no = ln + 1;
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| SystemError::Syntax { line: line_no, message: "expected key=value".into() })?;
            let (key, value) = (key.trim(), value.trim());
            let syntax = |message: String| SystemError::Syntax { line: line_no, message };
            if key == "n" {
                n = Some(value.parse::<usize>().map_err(|_| syntax(format!("bad dimension `{value}`")))?);
            } else if key == "name" || key == "id" {
                id = value.to_string();
            } else if key == "domain" {
                domain_lines.push((line_no, value.to_string()));
            } else if key == "x0" {
                let v: Result<Vec<f64>, _> = value.split(',').map(|s| s.trim().parse::<f64>()).collect();
                x0 = Some(v.map_err(|_| syntax(format!("bad x0 `{value}`")))?);
            } else if key == "box" {
                let v: Result<Vec<f64>, _> = value.split(',').map(|s| s.trim().parse::<f64>()).collect();
                match v.as_deref() {
                    Ok([lo, hi]) if lo < hi => bx = Some((*lo, *hi)),
                    _ => return Err(syntax(format!("bad box `{value}`"))),
                }
            } else if let Some(i) = key.strip_prefix("psi").and_then(|d| d.parse::<usize>().ok()) {
                psis.push((i, line_no, value.to_string()));
            } else if let Some(i) = key.strip_prefix('f').and_then(|d| d.parse::<usize>().ok()) {
                fs.push((i, line_no, value.to_string()));
            } else {
                return Err(syntax(format!("unknown key `{key}`")));
            }
        }
        let n = n.ok_or(SystemError::Syntax { line: 0, message: "missing n=".into() })?;
        let space = VarSpace::State { n };
        let collect = |items: &mut Vec<(usize, usize, String)>, what: &str, count: Option<usize>| {
            items.sort_by_key(|x| x.0);
            let mut out = vec![];
            for (k, (i, line, src)) in items.iter().enumerate() {
                if *i != k + 1 {
                    return Err(SystemError::Syntax { line: *line, message: format!("{what}{i} out of sequence") });
                }
                out.push(parse(src, space).map_err(|source| SystemError::Parse { line: *line, source })?);
            }
            if let Some(c) = count {
                if out.len() != c {
                    return Err(SystemError::Syntax { line: 0, message: format!("expected {c} {what} lines") });
                }
            }
            Ok(out)
        };
        let f = collect(&mut fs, "f", Some(n))?;
        let psi = collect(&mut psis, "psi", None)?;
        let mut sys = SystemSpec::unchecked(&id, f, psi);
        for (line, src) in domain_lines {
            for part in src.split(';').filter(|p| !p.trim().is_empty()) {
                sys.domain.push(Predicate::parse(part, n).map_err(|source| SystemError::Parse { line, source })?);
            }
        }
        if let Some(x) = x0 {
            sys.x0 = x;
        }
        if let Some((lo, hi)) = bx {
            sys.sample = SampleBox::uniform(n, (0.0, 1.0), lo, hi);
        }
        sys.registered()
    }

    pub fn from_spec_file(path: &Path) -> Result<Self, SystemError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| SystemError::Syntax { line: 0, message: e.to_string() })?;
        Self::from_spec_text(&text)
    }
}

/// Euler's rigid body equations with principal moments `I1, I2, I3`;
/// conserves `E = sum x_i^2 / I_i` and `L = sum x_i^2`.
pub fn rigid_body(i1: f64, i2: f64, i3: f64) -> Result<SystemSpec, SystemError> {
    if !(i1 > 0.0 && i2 > 0.0 && i3 > 0.0) {
        return Err(SystemError::InvalidParameter("moments of inertia must be positive".into()));
    }
    if i1 == i2 && i2 == i3 {
        return Err(SystemError::InvalidParameter("degenerate body: all moments equal".into()));
    }
    let x = st(3);
    let f = vec![
        c((i2 - i3) / (i2 * i3)) * x(2) * x(3),
        c((i3 - i1) / (i1 * i3)) * x(1) * x(3),
        c((i1 - i2) / (i1 * i2)) * x(1) * x(2),
    ];
    let sq = |j| Expr::powi(x(j), 2);
    let e = sq(1) / c(i1) + sq(2) / c(i2) + sq(3) / c(i3);
    let l = sq(1) + sq(2) + sq(3);
    let mut sys = SystemSpec::unchecked("rigid-body", f, vec![e, l]);
    sys.psi_names = vec!["E".into(), "L".into()];
    sys.params = vec![("I1".into(), i1), ("I2".into(), i2), ("I3".into(), i3)];
    sys.closed_forms = closed_form::rigid_body(i1, i2, i3);
    sys.g_split = Some(vec![2]);
    sys.paper_g = Some(averaged(&sys.f, 3));
    sys.sample = SampleBox::uniform(3, (0.0, 10.0), -2.0, 2.0);
    sys.x0 = vec![1.0, 1.0, 1.0];
    sys.registered()
}

fn averaged(f: &[Expr], n: usize) -> Vec<Expr> {
    let avg = |j: usize| c(0.5) * (Expr::var(j) + Expr::var(j + n + 1));
    f.iter().map(|e| e.substitute(&avg)).collect()
}

fn positive_orthant(n: usize) -> Vec<Predicate> {
    (1..=n).map(|j| Predicate::positive(Expr::var(j), &format!("x{j} > 0"))).collect()
}

/// `x' = x(alpha - beta y)`, `y' = y(delta x - gamma)`; conserves
/// `V = gamma log x - delta x + alpha log y - beta y`.
pub fn lotka_volterra_2(alpha: f64, beta: f64, gamma: f64, delta: f64) -> Result<SystemSpec, SystemError> {
    if [alpha, beta, gamma, delta].iter().any(|p| !(*p > 0.0)) {
        return Err(SystemError::InvalidParameter("parameters must be positive".into()));
    }
    let x = st(2);
    let f = vec![x(1) * (c(alpha) - c(beta) * x(2)), x(2) * (c(delta) * x(1) - c(gamma))];
    let v = c(gamma) * Expr::log(x(1)) - c(delta) * x(1) + c(alpha) * Expr::log(x(2)) - c(beta) * x(2);
    let mut sys = SystemSpec::unchecked("lv2", f, vec![v]);
    sys.psi_names = vec!["V".into()];
    sys.params = vec![("alpha".into(), alpha), ("beta".into(), beta), ("gamma".into(), gamma), ("delta".into(), delta)];
    sys.domain = positive_orthant(2);
    sys.closed_forms = closed_form::lotka_volterra_2(alpha, beta, gamma, delta);
    sys.sample = SampleBox::uniform(2, (0.0, 10.0), 0.2, 3.0);
    sys.x0 = vec![1.0, 2.0];
    sys.registered()
}

/// `x1' = x1(x2 - x3)` and cyclic; conserves `x1 + x2 + x3` and `x1 x2 x3`.
pub fn lotka_volterra_3() -> Result<SystemSpec, SystemError> {
    let x = st(3);
    let f = vec![x(1) * (x(2) - x(3)), x(2) * (x(3) - x(1)), x(3) * (x(1) - x(2))];
    let psi = vec![x(1) + x(2) + x(3), x(1) * x(2) * x(3)];
    let mut sys = SystemSpec::unchecked("lv3", f, psi);
    sys.psi_names = vec!["x+y+z".into(), "xyz".into()];
    sys.domain = positive_orthant(3);
    sys.closed_forms = closed_form::lotka_volterra_3();
    let mut g = averaged(&sys.f, 3);
    // g_3 = x3^k (x1^k+1 - x2^k)
    g[2] = Expr::var(3) * (Expr::var(5) - Expr::var(2));
    sys.paper_g = Some(g);
    sys.g_split = Some(vec![2]);
    sys.sample = SampleBox::uniform(3, (0.0, 10.0), 0.2, 3.0);
    sys.x0 = vec![1.0, 2.0, 3.0];
    sys.registered()
}

/// Planar restricted three-body problem in the rotating frame with mass
/// ratio `alpha`; state `(x1, x2, y1, y2)` with `y` the velocity. Conserves
/// the Jacobi integral.
pub fn pr3bp(alpha: f64) -> Result<SystemSpec, SystemError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(SystemError::InvalidParameter("mass ratio must lie in (0, 1)".into()));
    }
    let beta = 1.0 - alpha;
    let x = st(4);
    let a2 = Expr::powi(x(1) + c(alpha), 2) + Expr::powi(x(2), 2);
    let b2 = Expr::powi(x(1) - c(beta), 2) + Expr::powi(x(2), 2);
    let a3 = Expr::pow(a2.clone(), crate::expr::Rational::new(3, 2));
    let b3 = Expr::pow(b2.clone(), crate::expr::Rational::new(3, 2));
    let f = vec![
        x(3),
        x(4),
        x(1) + c(2.0) * x(4) - c(alpha) * (x(1) - c(beta)) / b3.clone() - c(beta) * (x(1) + c(alpha)) / a3.clone(),
        x(2) - c(2.0) * x(3) - c(alpha) * x(2) / b3 - c(beta) * x(2) / a3,
    ];
    let j = c(0.5) * (Expr::powi(x(1), 2) + Expr::powi(x(2), 2) - Expr::powi(x(3), 2) - Expr::powi(x(4), 2))
        + c(alpha) / Expr::sqrt(b2.clone())
        + c(beta) / Expr::sqrt(a2.clone());
    let mut sys = SystemSpec::unchecked("pr3bp", f, vec![j]);
    sys.psi_names = vec!["J".into()];
    sys.params = vec![("alpha".into(), alpha)];
    sys.domain = vec![
        Predicate::positive(a2.clone(), "(x1 + alpha)^2 + x2^2 > 0"),
        Predicate::positive(b2.clone(), "(x1 - beta)^2 + x2^2 > 0"),
    ];
    sys.sample_constraints = vec![
        Predicate::positive(a2 - c(0.04), "distance to first body > 0.2"),
        Predicate::positive(b2 - c(0.04), "distance to second body > 0.2"),
    ];
    sys.closed_forms = closed_form::pr3bp_all(alpha);
    sys.sample = SampleBox { t: (0.0, 10.0), lo: vec![-1.5, -1.5, -2.0, -2.0], hi: vec![1.5, 1.5, 2.0, 2.0] };
    sys.x0 = vec![0.994, 0.0, 0.0, -2.001_585_106_379_082_5];
    sys.registered()
}

/// `x' = y`, `y' = -(gamma y + kappa x)/m`; conserves the time-dependent
/// `psi = exp((gamma/m) t) (m y^2 + gamma x y + kappa x^2) / 2`.
pub fn damped_harmonic_oscillator(m: f64, gamma: f64, kappa: f64) -> Result<SystemSpec, SystemError> {
    if !(m > 0.0 && kappa > 0.0 && gamma >= 0.0) {
        return Err(SystemError::InvalidParameter("need m > 0, kappa > 0, gamma >= 0".into()));
    }
    let x = st(2);
    let f = vec![x(2), -(c(gamma) * x(2) + c(kappa) * x(1)) / c(m)];
    let psi = Expr::exp(c(gamma / m) * x(0))
        * (c(m) * Expr::powi(x(2), 2) + c(gamma) * x(1) * x(2) + c(kappa) * Expr::powi(x(1), 2))
        / c(2.0);
    let mut sys = SystemSpec::unchecked("dho", f, vec![psi]);
    sys.psi_names = vec!["psi".into()];
    sys.params = vec![("m".into(), m), ("gamma".into(), gamma), ("kappa".into(), kappa)];
    sys.closed_forms = closed_form::damped_oscillator(m, gamma, kappa);
    sys.sample = SampleBox::uniform(2, (0.0, 10.0), -2.0, 2.0);
    sys.x0 = vec![1.0, 0.0];
    sys.registered()
}

/// Looks up a bundled system, overriding any of its named parameters.
pub fn by_id(id: &str, overrides: &[(String, f64)]) -> Result<SystemSpec, SystemError> {
    let get = |name: &str, default: f64| -> f64 {
        overrides.iter().rev().find(|(k, _)| k == name).map_or(default, |(_, v)| *v)
    };
    let known: &[&str] = match id {
        "rigid-body" => &["I1", "I2", "I3"],
        "lv2" => &["alpha", "beta", "gamma", "delta"],
        "lv3" => &[],
        "pr3bp" => &["alpha"],
        "dho" => &["m", "gamma", "kappa"],
        _ => return Err(SystemError::Unknown(id.to_string())),
    };
    if let Some((k, _)) = overrides.iter().find(|(k, _)| !known.contains(&k.as_str())) {
        return Err(SystemError::InvalidParameter(format!("`{k}` is not a parameter of {id}")));
    }
    match id {
        "rigid-body" => rigid_body(get("I1", 1.0), get("I2", 2.0), get("I3", 3.0)),
        "lv2" => lotka_volterra_2(get("alpha", 1.0), get("beta", 1.0), get("gamma", 1.0), get("delta", 1.0)),
        "lv3" => lotka_volterra_3(),
        "pr3bp" => pr3bp(get("alpha", ARENSTORF_ALPHA)),
        _ => damped_harmonic_oscillator(get("m", 4.0), get("gamma", 0.5), get("kappa", 5.0)),
    }
}

/// Mass ratio of the Arenstorf benchmark orbit.
pub const ARENSTORF_ALPHA: f64 = 0.012277471;
/// Period of the Arenstorf benchmark orbit.
pub const ARENSTORF_PERIOD: f64 = 17.065_216_560_157_962_558_891_720_624_9;
