//! One-step schemes in the form `(x^k+1 - x^k)/tau = f^tau(t^k, x^k, x^k+1, tau)`.
//!
//! Conservative schemes solve `Lambda^tau f^tau = -dpsi^tau` for `m` of the
//! `n` components of `f^tau` through an invertible `m x m` minor of the
//! discrete multiplier, and fill the remaining components with a consistent
//! approximation `g^tau` of `f`. Closed forms transcribed per system and the
//! three classical baselines share the same evaluator interface.

pub mod closed_form;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::divdiff::{DivDiffError, PermutationPlan, StepPair};
use crate::expr::{DomainError, Expr, Point, VarSpace};
use crate::multiplier::{
    check_discrete_conditions, discrete_multiplier, DiscreteMultiplier, MultiplierError, MultiplierMatrix, Residuals,
};
use crate::systems::{Predicate, SystemSpec};

pub use closed_form::ClosedForm;

/// A minor whose `|det|` is below this times `max|entry|^m` counts as singular.
pub const RANK_TOL: f64 = 1e-12;

/// The current minor is kept while its `|det|` is at least this fraction of
/// the greedy choice.
pub const REPIVOT_RATIO: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SchemeError {
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error(transparent)]
    DivDiff(#[from] DivDiffError),
    #[error("multiplier is rank deficient at the probe (|det| = {det:e}, scale {scale:e})")]
    RankDeficient { det: f64, scale: f64 },
    #[error("selected minor is singular at this stencil (|det| = {det:e})")]
    SingularMinor { det: f64 },
    #[error("state leaves the domain: {0}")]
    OutsideDomain(String),
    #[error("unknown scheme variant `{0}`")]
    UnknownVariant(String),
    #[error("unknown method `{0}`")]
    UnknownMethod(String),
    #[error("scheme has no permutation plan to check against")]
    NoPlan,
    #[error("no minor selected; call prepare_step first")]
    NoMinor,
    #[error("{0}")]
    Invalid(String),
}

impl From<MultiplierError> for SchemeError {
    fn from(e: MultiplierError) -> Self {
        match e {
            MultiplierError::Domain(d) => SchemeError::Domain(d),
            MultiplierError::ZeroTimeStep => SchemeError::Invalid("zero time step".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Minor inversion of the discrete multiplier.
    Multiplier,
    /// The transcribed per-system conservative form.
    MultiplierClosedForm,
    BackwardEuler,
    Midpoint,
    Trapezoidal,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Multiplier,
        Method::MultiplierClosedForm,
        Method::BackwardEuler,
        Method::Midpoint,
        Method::Trapezoidal,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Multiplier => "multiplier",
            Method::MultiplierClosedForm => "multiplier-closed-form",
            Method::BackwardEuler => "backward-euler",
            Method::Midpoint => "midpoint",
            Method::Trapezoidal => "trapezoidal",
        }
    }

    pub fn is_conservative(self) -> bool {
        matches!(self, Method::Multiplier | Method::MultiplierClosedForm)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Method {
    type Err = SchemeError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL.into_iter().find(|m| m.tag() == s).ok_or_else(|| SchemeError::UnknownMethod(s.to_string()))
    }
}

/// The `m` columns of the discrete multiplier solved for, listed first in a
/// column permutation `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinorSelection {
    pub columns: Vec<usize>,
    pub m: usize,
    pub det: f64,
}

impl MinorSelection {
    pub fn minor_cols(&self) -> &[usize] {
        &self.columns[..self.m]
    }

    pub fn complement(&self) -> &[usize] {
        &self.columns[self.m..]
    }

    fn leftmost(n: usize) -> Vec<usize> {
        (0..n).collect()
    }
}

/// Determinant of the square submatrix on `cols`.
pub fn minor_det(lt: &DMatrix<f64>, cols: &[usize]) -> f64 {
    let sub = lt.select_columns(cols);
    match sub.nrows() {
        0 => 1.0,
        1 => sub[(0, 0)],
        2 => sub[(0, 0)] * sub[(1, 1)] - sub[(0, 1)] * sub[(1, 0)],
        _ => sub.lu().determinant(),
    }
}

/// Columns picked by Gaussian elimination with complete pivoting: at each
/// step the remaining entry of largest magnitude chooses the next column.
/// Returns the full permutation, chosen columns first, each part ascending.
pub fn greedy_columns(lt: &DMatrix<f64>) -> Vec<usize> {
    let (m, n) = lt.shape();
    let mut a = lt.clone();
    let mut rows: Vec<usize> = (0..m).collect();
    let mut cols: Vec<usize> = (0..n).collect();
    let mut chosen = Vec::with_capacity(m);
    for _ in 0..m {
        let mut best = (0, 0, -1.0);
        for &r in &rows {
            for &c in &cols {
                let v = a[(r, c)].abs();
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        let (pr, pc, _) = best;
        let piv = a[(pr, pc)];
        rows.retain(|&r| r != pr);
        cols.retain(|&c| c != pc);
        chosen.push(pc);
        if piv != 0.0 {
            for &r in &rows {
                let factor = a[(r, pc)] / piv;
                for &c in &cols {
                    a[(r, c)] -= factor * a[(pr, c)];
                }
                a[(r, pc)] = 0.0;
            }
        }
    }
    chosen.sort_unstable();
    let mut rest: Vec<usize> = (0..n).filter(|c| !chosen.contains(c)).collect();
    chosen.append(&mut rest);
    chosen
}

fn det_scale(lt: &DMatrix<f64>) -> f64 {
    let max = lt.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    max.powi(lt.nrows() as i32)
}

/// Chooses the minor to solve for at an evaluated multiplier.
///
/// The `current` selection (the leftmost columns when `None`) is kept while
/// its determinant is nonsingular and within [`REPIVOT_RATIO`] of the greedy
/// complete-pivoting choice; otherwise the greedy choice is returned.
pub fn select_minor_values(lt: &DMatrix<f64>, current: Option<&MinorSelection>) -> Result<MinorSelection, SchemeError> {
    let (m, n) = lt.shape();
    if m > n {
        return Err(SchemeError::Invalid(format!("{m} invariants exceed dimension {n}")));
    }
    let scale = det_scale(lt);
    let greedy = greedy_columns(lt);
    let gdet = minor_det(lt, &greedy[..m]);
    if scale == 0.0 || gdet.abs() < RANK_TOL * scale {
        return Err(SchemeError::RankDeficient { det: gdet.abs(), scale });
    }
    let cur_cols = current.map_or_else(|| MinorSelection::leftmost(n), |c| c.columns.clone());
    let cdet = minor_det(lt, &cur_cols[..m]);
    if cdet.abs() >= RANK_TOL * scale && cdet.abs() >= REPIVOT_RATIO * gdet.abs() {
        return Ok(MinorSelection { columns: cur_cols, m, det: cdet });
    }
    Ok(MinorSelection { columns: greedy, m, det: gdet })
}

/// Evaluates a discrete multiplier at `probe` and selects a minor there.
pub fn select_minor(lt: &MultiplierMatrix, probe: &StepPair) -> Result<MinorSelection, SchemeError> {
    let vals = probe.two_level();
    select_minor_values(&lt.eval(&vals)?, None)
}

/// `f^tau = P^T ( -minor^-1 (dpsi^tau + complement g^tau) ; g^tau )`.
///
/// `g_all` has one entry per state component; only the complement columns are
/// read.
pub fn build_ftau(
    lt: &DMatrix<f64>,
    pt: &[f64],
    g_all: &[f64],
    minor: &MinorSelection,
) -> Result<Vec<f64>, SchemeError> {
    let m = minor.m;
    let mut f = g_all.to_vec();
    if m == 0 {
        return Ok(f);
    }
    let mut rhs = DVector::from_fn(m, |i, _| -pt[i]);
    for &c in minor.complement() {
        for i in 0..m {
            rhs[i] -= lt[(i, c)] * g_all[c];
        }
    }
    let cols = minor.minor_cols();
    let sol: Vec<f64> = match m {
        1 => {
            let d = lt[(0, cols[0])];
            if d == 0.0 {
                return Err(SchemeError::SingularMinor { det: 0.0 });
            }
            vec![rhs[0] / d]
        }
        _ => {
            let sub = lt.select_columns(cols);
            let lu = sub.lu();
            let det = lu.determinant();
            if det == 0.0 || !det.is_finite() {
                return Err(SchemeError::SingularMinor { det: det.abs() });
            }
            lu.solve(&rhs).ok_or(SchemeError::SingularMinor { det: det.abs() })?.iter().copied().collect()
        }
    };
    for (k, &c) in cols.iter().enumerate() {
        f[c] = sol[k];
    }
    Ok(f)
}

/// Per-trajectory state carried between steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepContext {
    pub minor: Option<MinorSelection>,
}

/// A change of minor between steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Repivot {
    pub from: Option<Vec<usize>>,
    pub to: Vec<usize>,
    pub det: f64,
}

#[derive(Debug, Clone)]
enum Body {
    Generic { dm: DiscreteMultiplier, g: Vec<Expr>, fixed: Option<Vec<usize>> },
    Closed(ClosedForm),
    Baseline { f: Vec<Expr> },
}

/// How to build a conservative scheme.
#[derive(Debug, Clone, Default)]
pub struct SchemeOptions {
    /// Permutation plan; the system default when `None`.
    pub sigma: Option<PermutationPlan>,
    /// Closed-form variant name, or `"paper"` to use the system's transcribed
    /// `g^tau` in the minor inversion.
    pub variant: Option<String>,
    /// Explicit `g^tau` over the two-level space, one entry per component.
    pub g_override: Option<Vec<Expr>>,
    /// Solve for these columns at every step instead of selecting a minor.
    pub minor: Option<Vec<usize>>,
}

/// An immutable one-step scheme for one system.
#[derive(Debug, Clone)]
pub struct SchemeDefinition {
    pub system_id: String,
    pub method: Method,
    pub label: String,
    n: usize,
    plan: Option<PermutationPlan>,
    psi: Vec<Expr>,
    domain: Vec<Predicate>,
    body: Body,
    multiplier: Option<DiscreteMultiplier>,
}

/// Default `g^tau`: the field at the two-level average state and mid time.
fn averaged_field(f: &[Expr], n: usize) -> Vec<Expr> {
    let avg = |j: usize| Expr::c(0.5) * (Expr::var(j) + Expr::var(j + n + 1));
    f.iter().map(|e| e.substitute(&avg)).collect()
}

impl SchemeDefinition {
    /// Builds any scheme for `system`.
    pub fn build(system: &SystemSpec, method: Method, opts: &SchemeOptions) -> Result<Self, SchemeError> {
        match method {
            Method::Multiplier => build_conservative_scheme(system, opts),
            Method::MultiplierClosedForm => build_closed_form_scheme(system, opts),
            _ => baseline_residual(method, system),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn psi(&self) -> &[Expr] {
        &self.psi
    }

    pub fn plan(&self) -> Option<&PermutationPlan> {
        self.plan.as_ref()
    }

    pub fn discrete_multiplier(&self) -> Option<&DiscreteMultiplier> {
        self.multiplier.as_ref()
    }

    /// The closed form evaluated by this scheme, if any.
    pub fn closed_form(&self) -> Option<&ClosedForm> {
        match &self.body {
            Body::Closed(c) => Some(c),
            _ => None,
        }
    }

    /// Whether `x` satisfies every domain predicate at time `t`.
    pub fn check_domain(&self, t: f64, x: &[f64]) -> Result<(), SchemeError> {
        if self.domain.is_empty() {
            return Ok(());
        }
        let mut v = Vec::with_capacity(x.len() + 1);
        v.push(t);
        v.extend_from_slice(x);
        for p in &self.domain {
            if !p.holds(&v) {
                return Err(SchemeError::OutsideDomain(p.text.clone()));
            }
        }
        Ok(())
    }

    /// Validates (and if needed replaces) the minor at the probe
    /// `(t^k, x^k) -> (t^k + tau, x^k)`. Returns the re-pivot, if one happened.
    pub fn prepare_step(
        &self,
        ctx: &mut StepContext,
        tk: f64,
        xk: &[f64],
        tau: f64,
    ) -> Result<Option<Repivot>, SchemeError> {
        let Body::Generic { dm, fixed, .. } = &self.body else {
            return Ok(None);
        };
        let probe = probe_pair(tk, xk, tau);
        let lt = dm.lambda.eval(&probe.two_level())?;
        if let Some(cols) = fixed {
            let m = lt.nrows();
            let mut columns = cols.clone();
            columns.extend((0..self.n).filter(|c| !cols.contains(c)));
            ctx.minor = Some(MinorSelection { columns, m, det: minor_det(&lt, cols) });
            return Ok(None);
        }
        let sel = select_minor_values(&lt, ctx.minor.as_ref())?;
        let changed = ctx.minor.as_ref().map(|c| &c.columns) != Some(&sel.columns);
        let event = if changed && ctx.minor.is_some() {
            Some(Repivot { from: ctx.minor.as_ref().map(|c| c.columns.clone()), to: sel.columns.clone(), det: sel.det })
        } else {
            None
        };
        ctx.minor = Some(sel);
        Ok(event)
    }

    /// `f^tau` at a step pair.
    pub fn ftau(&self, ctx: &StepContext, s: &StepPair) -> Result<Vec<f64>, SchemeError> {
        self.check_domain(s.k1.t, &s.k1.x)?;
        match &self.body {
            Body::Generic { dm, g, .. } => {
                let vals = s.two_level();
                let lt = dm.lambda.eval(&vals)?;
                let pt: Vec<f64> = dm.dt_psi.iter().map(|e| e.eval(&vals)).collect::<Result<_, _>>()?;
                let gv: Vec<f64> = g.iter().map(|e| e.eval(&vals)).collect::<Result<_, _>>()?;
                let minor = ctx.minor.as_ref().ok_or(SchemeError::NoMinor)?;
                let cols = minor.minor_cols();
                let det = minor_det(&lt, cols);
                if det.abs() < RANK_TOL * det_scale(&lt) {
                    return Err(SchemeError::SingularMinor { det: det.abs() });
                }
                build_ftau(&lt, &pt, &gv, minor)
            }
            Body::Closed(c) => c.eval(s),
            Body::Baseline { f } => baseline_ftau(self.method, f, s),
        }
    }

    /// `f^tau` with a minor chosen at the probe of `s` itself.
    pub fn ftau_at(&self, s: &StepPair) -> Result<Vec<f64>, SchemeError> {
        let mut ctx = StepContext::default();
        self.prepare_step(&mut ctx, s.k.t, &s.k.x, s.dt())?;
        self.ftau(&ctx, s)
    }

    /// `(x^k+1 - x^k)/tau - f^tau`.
    pub fn residual(&self, ctx: &StepContext, s: &StepPair) -> Result<Vec<f64>, SchemeError> {
        let f = self.ftau(ctx, s)?;
        let tau = s.dt();
        Ok((0..self.n).map(|j| (s.k1.x[j] - s.k.x[j]) / tau - f[j]).collect())
    }

    /// Discrete multiplier residuals of this scheme at `s`.
    pub fn check_discrete(&self, s: &StepPair) -> Result<Residuals, SchemeError> {
        let dm = self.multiplier.as_ref().ok_or(SchemeError::NoPlan)?;
        let f = self.ftau_at(s)?;
        Ok(check_discrete_conditions(dm, &self.psi, &f, s)?)
    }

    /// Human-readable listing of the scheme's symbolic pieces.
    pub fn describe(&self) -> String {
        use std::fmt::Write;
        let sp = VarSpace::TwoLevel { n: self.n };
        let mut out = String::new();
        let _ = writeln!(out, "system {}  method {}  {}", self.system_id, self.method, self.label);
        if let Some(dm) = &self.multiplier {
            let _ = writeln!(out, "sigma {}", dm.plan);
            for (j, st) in dm.plan.stages().iter().enumerate() {
                let _ = writeln!(out, "  v{j} = {st}");
            }
            let _ = writeln!(out, "discrete multiplier:");
            for (i, row) in dm.lambda.entries.iter().enumerate() {
                let cells: Vec<String> = row.iter().map(|e| e.display(sp).to_string()).collect();
                let _ = writeln!(out, "  row {}: [{}]", i + 1, cells.join(", "));
            }
            let cells: Vec<String> = dm.dt_psi.iter().map(|e| e.display(sp).to_string()).collect();
            let _ = writeln!(out, "discrete time partial: [{}]", cells.join(", "));
            let rules: Vec<String> = dm.rules.iter().map(|r| format!("{r:?}")).collect();
            let _ = writeln!(out, "rules: {}", rules.join(", "));
        }
        match &self.body {
            Body::Generic { g, .. } => {
                let _ = writeln!(out, "g^tau (complement components):");
                for (j, e) in g.iter().enumerate() {
                    let _ = writeln!(out, "  g{} = {}", j + 1, e.display(sp));
                }
            }
            Body::Closed(c) => {
                let _ = writeln!(out, "f^tau ({}):", c.name);
                for (j, e) in c.render(self.n).iter().enumerate() {
                    let _ = writeln!(out, "  f{} = {}", j + 1, e);
                }
            }
            Body::Baseline { .. } => {}
        }
        out
    }
}

fn probe_pair(tk: f64, xk: &[f64], tau: f64) -> StepPair {
    StepPair { k: Point::new(tk, xk.to_vec()), k1: Point::new(tk + tau, xk.to_vec()) }
}

fn baseline_ftau(method: Method, f: &[Expr], s: &StepPair) -> Result<Vec<f64>, SchemeError> {
    let eval_all = |v: &[f64]| -> Result<Vec<f64>, SchemeError> { f.iter().map(|e| Ok(e.eval(v)?)).collect() };
    match method {
        Method::BackwardEuler => eval_all(&s.k1.values()),
        Method::Midpoint => {
            let a = s.k.values();
            let b = s.k1.values();
            let mid: Vec<f64> = a.iter().zip(&b).map(|(p, q)| 0.5 * (p + q)).collect();
            eval_all(&mid)
        }
        Method::Trapezoidal => {
            let fa = eval_all(&s.k.values())?;
            let fb = eval_all(&s.k1.values())?;
            Ok(fa.iter().zip(&fb).map(|(p, q)| 0.5 * (p + q)).collect())
        }
        _ => Err(SchemeError::UnknownMethod(method.tag().into())),
    }
}

/// Backward Euler, midpoint or trapezoidal scheme for `system`.
pub fn baseline_residual(method: Method, system: &SystemSpec) -> Result<SchemeDefinition, SchemeError> {
    if method.is_conservative() {
        return Err(SchemeError::UnknownMethod(method.tag().into()));
    }
    Ok(SchemeDefinition {
        system_id: system.id.clone(),
        method,
        label: String::new(),
        n: system.n,
        plan: None,
        psi: system.psi.clone(),
        domain: system.domain.clone(),
        body: Body::Baseline { f: system.f.clone() },
        multiplier: None,
    })
}

/// Minor-inversion conservative scheme.
pub fn build_conservative_scheme(system: &SystemSpec, opts: &SchemeOptions) -> Result<SchemeDefinition, SchemeError> {
    let plan = match &opts.sigma {
        Some(p) => p.clone(),
        None => system.default_plan(),
    };
    if plan.n() != system.n {
        return Err(SchemeError::Invalid(format!("permutation {} does not match dimension {}", plan, system.n)));
    }
    let dm = discrete_multiplier(&system.psi, &plan)?;
    let (g, label) = match (&opts.g_override, opts.variant.as_deref()) {
        (Some(g), _) => (g.clone(), "g override".to_string()),
        (None, Some("paper")) => match &system.paper_g {
            Some(g) => (g.clone(), "paper g".to_string()),
            None => return Err(SchemeError::UnknownVariant("paper".into())),
        },
        (None, None | Some("average")) => (averaged_field(&system.f, system.n), "average g".into()),
        (None, Some(v)) => return Err(SchemeError::UnknownVariant(v.into())),
    };
    if g.len() != system.n {
        return Err(SchemeError::Invalid("g^tau needs one entry per component".into()));
    }
    if let Some(cols) = &opts.minor {
        let mut sorted = cols.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != system.m() || sorted.iter().any(|&c| c >= system.n) {
            return Err(SchemeError::Invalid(format!(
                "minor needs {} distinct columns below {}",
                system.m(),
                system.n
            )));
        }
    }
    Ok(SchemeDefinition {
        system_id: system.id.clone(),
        method: Method::Multiplier,
        label,
        n: system.n,
        plan: Some(plan),
        psi: system.psi.clone(),
        domain: system.domain.clone(),
        body: Body::Generic { dm: dm.clone(), g, fixed: opts.minor.clone() },
        multiplier: Some(dm),
    })
}

/// Scheme from one of the system's transcribed closed forms. With no variant
/// given, a form matching `opts.sigma` is used, else the system default.
pub fn build_closed_form_scheme(system: &SystemSpec, opts: &SchemeOptions) -> Result<SchemeDefinition, SchemeError> {
    if system.closed_forms.is_empty() {
        return Err(SchemeError::UnknownVariant("(system has no closed form)".into()));
    }
    let form = match (opts.variant.as_deref(), &opts.sigma) {
        (Some(v), _) => {
            system.closed_forms.iter().find(|c| c.name == v).ok_or_else(|| SchemeError::UnknownVariant(v.into()))?
        }
        (None, Some(p)) => system
            .closed_forms
            .iter()
            .find(|c| c.sigma.as_deref() == Some(p.sigma()))
            .unwrap_or(&system.closed_forms[0]),
        (None, None) => &system.closed_forms[0],
    };
    let plan = match &form.sigma {
        Some(s) => Some(crate::divdiff::permutation_stencils(s, system.n)?),
        None => None,
    };
    let multiplier = match &plan {
        Some(p) => Some(discrete_multiplier(&system.psi, p)?),
        None => None,
    };
    Ok(SchemeDefinition {
        system_id: system.id.clone(),
        method: Method::MultiplierClosedForm,
        label: format!("variant {}", form.name),
        n: system.n,
        plan,
        psi: system.psi.clone(),
        domain: system.domain.clone(),
        body: Body::Closed(form.clone()),
        multiplier,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems;

    fn pair(k: &[f64], k1: &[f64]) -> StepPair {
        StepPair::new(Point::new(k[0], k[1..].to_vec()), Point::new(k1[0], k1[1..].to_vec())).unwrap()
    }

    #[test]
    fn rigid_body_minor_is_leftmost() {
        let lt = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, 1.0 / 3.0, 1.0, 1.0, 1.0]);
        let sel = select_minor_values(&lt, None).unwrap();
        assert_eq!(sel.columns, vec![0, 1, 2]);
        assert!((sel.det - 0.5).abs() < 1e-15);
    }

    #[test]
    fn lv3_minor_is_leftmost() {
        let lt = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 6.0, 3.0, 2.0]);
        let sel = select_minor_values(&lt, None).unwrap();
        assert_eq!(sel.columns, vec![0, 1, 2]);
        assert_eq!(sel.det, -3.0);
    }

    #[test]
    fn weak_minor_is_replaced() {
        let lt = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 1.0, 1.0, 1.0 + 1e-3, 5.0]);
        let sel = select_minor_values(&lt, None).unwrap();
        assert_eq!(sel.minor_cols(), &[0, 2]);
    }

    #[test]
    fn dependent_rows_are_rank_deficient() {
        let lt = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(select_minor_values(&lt, None), Err(SchemeError::RankDeficient { .. })));
    }

    #[test]
    fn square_case_uses_whole_matrix() {
        let lt = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let sel = select_minor_values(&lt, None).unwrap();
        assert_eq!(sel.minor_cols(), &[0, 1]);
        let f = build_ftau(&lt, &[1.0, 2.0], &[0.0, 0.0], &sel).unwrap();
        assert!((2.0 * f[0] + f[1] + 1.0).abs() < 1e-15);
        assert!((f[0] + 3.0 * f[1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn rigid_body_inversion_example() {
        let sys = systems::rigid_body(1.0, 2.0, 3.0).unwrap();
        let scheme = build_conservative_scheme(&sys, &SchemeOptions::default()).unwrap();
        let s = pair(&[0.0, 1.0, 1.0, 1.0], &[0.01, 1.0, 1.0, 1.0]);
        let f = scheme.ftau_at(&s).unwrap();
        assert!((f[0] + 1.0 / 6.0).abs() < 1e-15);
        assert!((f[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f[2] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn lv3_inversion_with_paper_g_matches_first_form() {
        let sys = systems::lotka_volterra_3().unwrap();
        let opts = SchemeOptions { variant: Some("paper".into()), ..Default::default() };
        let scheme = build_conservative_scheme(&sys, &opts).unwrap();
        let closed = build_closed_form_scheme(&sys, &SchemeOptions::default()).unwrap();
        let s = pair(&[0.0, 1.0, 2.0, 3.0], &[0.01, 1.02, 1.97, 3.05]);
        let a = scheme.ftau_at(&s).unwrap();
        let b = closed.ftau_at(&s).unwrap();
        for j in 0..3 {
            assert!((a[j] - b[j]).abs() <= 1e-13 * b[j].abs().max(1.0), "{a:?} {b:?}");
        }
    }

    #[test]
    fn rigid_closed_form_is_midpoint_bitwise() {
        let sys = systems::rigid_body(1.0, 2.0, 3.0).unwrap();
        let closed = build_closed_form_scheme(&sys, &SchemeOptions::default()).unwrap();
        let mid = baseline_residual(Method::Midpoint, &sys).unwrap();
        let ctx = StepContext::default();
        let s = pair(&[0.3, 0.9, 1.1, -0.7], &[0.31, 0.93, 1.02, -0.66]);
        assert_eq!(closed.residual(&ctx, &s).unwrap(), mid.residual(&ctx, &s).unwrap());
    }

    #[test]
    fn dho_undamped_limit_is_midpoint() {
        let sys = systems::damped_harmonic_oscillator(4.0, 0.0, 5.0).unwrap();
        let closed = build_closed_form_scheme(&sys, &SchemeOptions::default()).unwrap();
        let mid = baseline_residual(Method::Midpoint, &sys).unwrap();
        let ctx = StepContext::default();
        let s = pair(&[0.0, 1.0, 0.0], &[0.01, 0.999, -0.0125]);
        let a = closed.residual(&ctx, &s).unwrap();
        let b = mid.residual(&ctx, &s).unwrap();
        for j in 0..2 {
            assert!((a[j] - b[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn baseline_linear_examples() {
        // x' = -x has no conserved quantity, so skip the registration gate.
        let f = crate::expr::parse("-x1", VarSpace::State { n: 1 }).unwrap();
        let sys = SystemSpec::unchecked("decay", vec![f], vec![]);
        let be = baseline_residual(Method::BackwardEuler, &sys).unwrap();
        let ctx = StepContext::default();
        let x = 1.0 / 1.1;
        let r = be.residual(&ctx, &pair(&[0.0, 1.0], &[0.1, x])).unwrap();
        assert!(r[0].abs() < 1e-14);
        let mid = baseline_residual(Method::Midpoint, &sys).unwrap();
        let x = 0.95 / 1.05;
        let r = mid.residual(&ctx, &pair(&[0.0, 1.0], &[0.1, x])).unwrap();
        assert!(r[0].abs() < 1e-14);
    }
}
