//! Randomized identity suites.
//!
//! Each check samples random inputs from a fixed seed, measures the worst
//! scaled violation of one identity and compares it against a pinned limit.
//! The acceptance tests and `conservekit verify` both run these.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::divdiff::{
    all_permutations, divided_difference_numeric, divided_difference_symbolic, forward_difference, instantiate,
    permutation_stencils, symmetrized_forward_difference, PermutationPlan, StencilAssignment, StepPair, DEFAULT_GUARD,
};
use crate::expr::{parse, Expr, Point, Rational, VarSpace};
use crate::multiplier::{
    analytic_multiplier, check_continuous_conditions, discrete_multiplier, euler_operator_residual, MultiplierMatrix,
};
use crate::scheme::{build_closed_form_scheme, build_conservative_scheme, SchemeOptions};
use crate::systems::{self, SystemSpec};

/// Pinned limits.
pub mod limits {
    /// Derivative against central differences, relative.
    pub const DERIVATIVE_FD: f64 = 1e-6;
    /// Telescoping sum of divided differences against the forward difference.
    pub const TELESCOPING: f64 = 1e-12;
    /// Symbolic against quotient divided difference when `|dx| >= 1e-3`.
    pub const SYMBOLIC_NUMERIC: f64 = 1e-12;
    /// Symbolic form at coincidence against the partial derivative.
    pub const COINCIDENCE: f64 = 1e-12;
    /// Symmetrized against plain forward difference.
    pub const SYMMETRIZED: f64 = 1e-13;
    /// Both product-rule forms against the direct quotient.
    pub const PRODUCT_FORMS: f64 = 1e-12;
    /// Continuous multiplier conditions.
    pub const CONTINUOUS: f64 = 1e-10;
    /// Discrete multiplier conditions.
    pub const DISCRETE: f64 = 1e-12;
    /// Euler operator along test paths for true multipliers.
    pub const EULER: f64 = 1e-6;
    /// Euler operator lower bound for the negative controls.
    pub const EULER_CONTROL: f64 = 1e-3;
    /// Discrete multiplier at coincidence against the analytic one.
    pub const MULTIPLIER_COINCIDENCE: f64 = 1e-12;
    /// Spread of the discrete multiplier over permutations where it should not depend on them.
    pub const PERMUTATION_INDEPENDENCE: f64 = 1e-15;
    /// Minor inversion against the transcribed closed forms.
    pub const INVERSION_VS_CLOSED: f64 = 1e-13;
}

/// Outcome of one identity check.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: String,
    pub samples: usize,
    /// Worst scaled violation (or, for lower-bound checks, the smallest value).
    pub worst: f64,
    pub limit: f64,
    pub pass: bool,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: worst {:.3e} vs limit {:.1e} over {} samples",
            if self.pass { "PASS" } else { "FAIL" },
            self.suite,
            self.name,
            self.worst,
            self.limit,
            self.samples
        )
    }
}

/// Largest entrywise difference; NaN anywhere counts as infinite.
fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| {
        let d = (x - y).abs();
        if d.is_nan() {
            f64::INFINITY
        } else {
            m.max(d)
        }
    })
}

/// `max(acc, v)`, with NaN as infinitely bad.
fn worse(acc: f64, v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        acc.max(v)
    }
}

fn upper(suite: &'static str, name: impl Into<String>, samples: usize, worst: f64, limit: f64) -> Check {
    Check { suite, name: name.into(), samples, worst, limit, pass: worst <= limit }
}

fn lower(suite: &'static str, name: impl Into<String>, samples: usize, least: f64, limit: f64) -> Check {
    Check { suite, name: name.into(), samples, worst: least, limit, pass: least >= limit }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    /// Random stencils per system and permutation.
    pub stencils: usize,
    /// Random domain points per system.
    pub points: usize,
    /// Random expressions for the derivative and printer checks.
    pub expressions: usize,
    /// Size of the divided-difference corpus.
    pub corpus: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { seed: 20_240_601, stencils: 1000, points: 100, expressions: 1000, corpus: 60 }
    }
}

pub const MODULES: [&str; 5] = ["expr", "divdiff", "multiplier", "scheme", "systems"];

/// Runs the suite of one module, or all of them.
pub fn run(module: Option<&str>, opts: &VerifyOptions) -> Result<Vec<Check>, String> {
    match module {
        None => Ok(MODULES.iter().flat_map(|m| run(Some(m), opts).unwrap()).collect()),
        Some("expr") => Ok(expr_suite(opts)),
        Some("divdiff") => Ok(divdiff_suite(opts)),
        Some("multiplier") => Ok(multiplier_suite(opts)),
        Some("scheme") => Ok(scheme_suite(opts)),
        Some("systems") => Ok(systems_suite()),
        Some(other) => Err(format!("unknown module `{other}` (one of {})", MODULES.join(", "))),
    }
}

// ---------------------------------------------------------------------------
// Random expressions

/// Dimension of the random-expression space.
pub const CORPUS_N: usize = 3;

/// A point of `[0, 1] x [0.5, 2]^n`, where every corpus expression is defined.
pub fn corpus_point<R: Rng>(rng: &mut R, n: usize) -> Point {
    Point::new(rng.random_range(0.0..=1.0), (0..n).map(|_| rng.random_range(0.5..=2.0)).collect())
}

fn random_const<R: Rng>(rng: &mut R) -> Expr {
    let v = (rng.random_range(0.25..=3.0f64) * 4.0).round() / 4.0;
    Expr::c(if rng.random_bool(0.25) { -v } else { v })
}

/// A random expression in `t, x1..xn`, defined on `[0, 1] x [0.5, 2]^n`.
pub fn random_expression<R: Rng>(rng: &mut R, n: usize, depth: usize) -> Expr {
    if depth == 0 || rng.random_bool(0.15) {
        return if rng.random_bool(0.8) { Expr::var(rng.random_range(0..=n)) } else { random_const(rng) };
    }
    let d = depth - 1;
    match rng.random_range(0..9) {
        0 => Expr::sum((0..rng.random_range(2..=3)).map(|_| random_expression(rng, n, d)).collect()),
        1 | 2 => Expr::product((0..rng.random_range(2..=3)).map(|_| random_expression(rng, n, d)).collect()),
        3 => random_expression(rng, n, d) / positive_expression(rng, n, d),
        4 => -random_expression(rng, n, d),
        5 => Expr::powi(random_expression(rng, n, d), rng.random_range(2..=3)),
        6 => Expr::pow(positive_expression(rng, n, d), random_rational(rng)),
        7 => Expr::exp(Expr::c(0.5) * random_expression(rng, n, d.min(1))),
        _ => Expr::log(positive_expression(rng, n, d)),
    }
}

fn random_rational<R: Rng>(rng: &mut R) -> Rational {
    let q = rng.random_range(1..=3);
    let p = rng.random_range(1..=4);
    Rational::new(p, q)
}

/// A random expression that is positive on the corpus domain.
pub fn positive_expression<R: Rng>(rng: &mut R, n: usize, depth: usize) -> Expr {
    if depth == 0 || rng.random_bool(0.2) {
        return if rng.random_bool(0.8) {
            Expr::var(rng.random_range(1..=n))
        } else {
            Expr::c(rng.random_range(1..=12) as f64 / 4.0)
        };
    }
    let d = depth - 1;
    match rng.random_range(0..6) {
        0 => positive_expression(rng, n, d) + positive_expression(rng, n, d),
        1 => positive_expression(rng, n, d) * positive_expression(rng, n, d),
        2 => positive_expression(rng, n, d) / positive_expression(rng, n, d),
        3 => Expr::pow(positive_expression(rng, n, d), random_rational(rng)),
        4 => Expr::exp(Expr::c(0.5) * random_expression(rng, n, d.min(1))),
        _ => Expr::one() + Expr::powi(random_expression(rng, n, d), 2),
    }
}

/// Hand-picked members of the divided-difference corpus, over `t, x1..x3`.
pub const CORPUS_SEED: [&str; 24] = [
    "x1",
    "x1^2",
    "x1*x2*x3",
    "x1 + x2 + x3",
    "x1^3 - 2*x1*x2 + x3",
    "1/x1",
    "1/sqrt(x1)",
    "sqrt(x1^2 + x2^2)",
    "x1^(2/3)*x2^(1/3)",
    "x1^(5/2)",
    "exp(x1)",
    "exp(-t)*x1",
    "exp(0.5*t)*(4*x2^2 + 0.5*x1*x2 + 5*x1^2)/2",
    "log(x1)",
    "log(x1) - x1 + log(x2) - x2",
    "log(x1*x2 + x3)",
    "x1/(x2 + x3)",
    "(x1 + x2)/(x1*x3)",
    "1/sqrt((x1 + 0.5)^2 + x2^2)",
    "x1^2/1 + x2^2/2 + x3^2/3",
    "exp(x1*x2)/x3",
    "t*x1 + t^2",
    "x1*log(x2)*exp(x3/4)",
    "(x1 - x2)^2*(x2 - x3)",
];

/// `count` corpus expressions: the fixed seed list, then random ones.
pub fn divdiff_corpus(seed: u64, count: usize) -> Vec<Expr> {
    let sp = VarSpace::State { n: CORPUS_N };
    let mut out: Vec<Expr> = CORPUS_SEED.iter().map(|s| parse(s, sp).unwrap()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < count {
        let e = random_expression(&mut rng, CORPUS_N, 3);
        if e.max_var().is_some() {
            out.push(e);
        }
    }
    out.truncate(count.max(CORPUS_SEED.len()));
    out
}

fn corpus_pair<R: Rng>(rng: &mut R, n: usize) -> StepPair {
    let k = corpus_point(rng, n);
    let mut k1 = k.clone();
    k1.t += rng.random_range(1e-3..=0.1);
    for x in &mut k1.x {
        *x = (*x + rng.random_range(-0.2..=0.2)).clamp(0.5, 2.0);
    }
    StepPair { k, k1 }
}

// ---------------------------------------------------------------------------
// Suites

pub fn expr_suite(opts: &VerifyOptions) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let sp = VarSpace::State { n: CORPUS_N };
    let (mut worst_fd, mut worst_rt, mut det_fail) = (0.0f64, 0usize, 0usize);
    for _ in 0..opts.expressions {
        let e = random_expression(&mut rng, CORPUS_N, 4);
        let p = corpus_point(&mut rng, CORPUS_N);
        let vals = p.values();
        let printed = e.to_string();
        match parse(&printed, sp) {
            Ok(back) if back == e && back.to_string() == printed => {}
            _ => worst_rt += 1,
        }
        let f0 = e.eval(&vals).unwrap();
        if e.eval(&vals).unwrap().to_bits() != f0.to_bits() {
            det_fail += 1;
        }
        for i in 0..=CORPUS_N {
            let d = e.partial_derivative(i).eval(&vals).unwrap();
            let h = 1e-6 * vals[i].abs().max(1.0);
            let mut up = vals.clone();
            up[i] += h;
            let mut dn = vals.clone();
            dn[i] -= h;
            let fd = (e.eval(&up).unwrap() - e.eval(&dn).unwrap()) / (2.0 * h);
            let scale = d.abs().max(f0.abs()).max(1.0);
            worst_fd = worse(worst_fd, (d - fd).abs() / scale);
        }
    }
    vec![
        upper("expr", "derivative vs central differences", opts.expressions, worst_fd, limits::DERIVATIVE_FD),
        upper("expr", "print/parse fixed point (mismatches)", opts.expressions, worst_rt as f64, 0.0),
        upper("expr", "deterministic evaluation (mismatches)", opts.expressions, det_fail as f64, 0.0),
    ]
}

pub fn divdiff_suite(opts: &VerifyOptions) -> Vec<Check> {
    let corpus = divdiff_corpus(opts.seed, opts.corpus);
    let n = CORPUS_N;
    let perms = all_permutations(n);
    let pairs_per = 5;
    #[derive(Default)]
    struct Acc {
        tele: f64,
        symnum: f64,
        coinc: f64,
        sym: f64,
        prod: f64,
        samples: usize,
    }
    let results: Vec<Acc> = corpus
        .par_iter()
        .enumerate()
        .map(|(ci, f)| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ (ci as u64 * 0x9e37_79b9));
            let mut acc = Acc::default();
            for sigma in &perms {
                let plan = permutation_stencils(sigma, n).unwrap();
                let dds: Vec<Expr> =
                    (0..=n).map(|i| divided_difference_symbolic(f, i, plan.stencil_for(i)).unwrap().expr).collect();
                for _ in 0..pairs_per {
                    let s = corpus_pair(&mut rng, n);
                    let v = s.two_level();
                    let fa = f.eval(&s.k.values()).unwrap();
                    let fb = f.eval(&s.k1.values()).unwrap();
                    let mut total = 0.0;
                    let mut mag = fa.abs().max(fb.abs());
                    for (i, d) in dds.iter().enumerate() {
                        let term = d.eval(&v).unwrap() * s.delta(i);
                        total += term;
                        mag = worse(mag, term.abs());
                    }
                    acc.tele = worse(acc.tele, (total - (fb - fa)).abs() / mag.max(f64::MIN_POSITIVE));
                    acc.samples += 1;
                }
            }
            // Quotient agreement, coincidence limit, symmetrized sum and
            // product-rule forms, on random pairs at the identity plan.
            let plan = PermutationPlan::identity(n);
            for _ in 0..pairs_per * 4 {
                let s = corpus_pair(&mut rng, n);
                for i in 0..=n {
                    let base = plan.stencil_for(i);
                    let d = divided_difference_symbolic(f, i, base).unwrap().expr;
                    let dx = s.delta(i);
                    if dx.abs() >= 1e-3 {
                        let sym = d.eval(&s.two_level()).unwrap();
                        let num = divided_difference_numeric(f, i, base, &s, DEFAULT_GUARD).unwrap();
                        let fa = f.eval(&s.corner(base)).unwrap();
                        let fb = f.eval(&s.corner(&base.raised(i))).unwrap();
                        let scale = sym.abs().max((fa.abs() + fb.abs()) / dx.abs());
                        acc.symnum = worse(acc.symnum, (sym - num).abs() / scale);
                    }
                    let mut c = s.clone();
                    if i == 0 {
                        c.k1.t = c.k.t;
                    } else {
                        c.k1.x[i - 1] = c.k.x[i - 1];
                    }
                    let lim = d.eval(&c.two_level()).unwrap();
                    let exact = f.partial_derivative(i).eval(&c.corner(base)).unwrap();
                    let fval = f.eval(&c.corner(base)).unwrap();
                    let scale = exact.abs().max(fval.abs()).max(1.0);
                    acc.coinc = worse(acc.coinc, (lim - exact).abs() / scale);
                }
                let fd = forward_difference(std::slice::from_ref(f), &s).unwrap()[0];
                let sym = symmetrized_forward_difference(f, &s).unwrap();
                let fa = f.eval(&s.k.values()).unwrap();
                let fb = f.eval(&s.k1.values()).unwrap();
                let scale = fa.abs().max(fb.abs()).max(f64::MIN_POSITIVE);
                acc.sym = worse(acc.sym, (sym - fd).abs() / scale);
            }
            // Product-rule forms with the next corpus member as the second factor.
            let g = &corpus[(ci + 1) % corpus.len()];
            for _ in 0..pairs_per * 4 {
                let s = corpus_pair(&mut rng, n);
                let i = rng.random_range(0..=n);
                let base = StencilAssignment::base(n);
                let raised = base.raised(i);
                let dx = s.delta(i);
                if dx.abs() < 1e-3 {
                    continue;
                }
                let v = s.two_level();
                let ev = |e: &Expr| e.eval(&v).unwrap();
                let df = ev(&divided_difference_symbolic(f, i, &base).unwrap().expr);
                let dg = ev(&divided_difference_symbolic(g, i, &base).unwrap().expr);
                let (fa, fb) = (ev(&instantiate(f, &base)), ev(&instantiate(f, &raised)));
                let (ga, gb) = (ev(&instantiate(g, &base)), ev(&instantiate(g, &raised)));
                let direct = (fb * gb - fa * ga) / dx;
                let g_high = df * gb + fa * dg;
                let f_high = df * ga + fb * dg;
                let scale = direct.abs().max((fb * gb).abs().max((fa * ga).abs()) / dx.abs());
                acc.prod = worse(acc.prod, (g_high - direct).abs().max((f_high - direct).abs()) / scale);
            }
            acc
        })
        .collect();
    let fold = |sel: fn(&Acc) -> f64| results.iter().map(sel).fold(0.0, f64::max);
    let samples: usize = results.iter().map(|a| a.samples).sum();
    let m = corpus.len();
    vec![
        upper(
            "divdiff",
            format!("telescoping over all permutations ({m} expressions)"),
            samples,
            fold(|a| a.tele),
            limits::TELESCOPING,
        ),
        upper(
            "divdiff",
            format!("symbolic vs quotient ({m} expressions)"),
            m * pairs_per * 4,
            fold(|a| a.symnum),
            limits::SYMBOLIC_NUMERIC,
        ),
        upper(
            "divdiff",
            format!("coincidence limit ({m} expressions)"),
            m * pairs_per * 4,
            fold(|a| a.coinc),
            limits::COINCIDENCE,
        ),
        upper(
            "divdiff",
            format!("symmetrized difference ({m} expressions)"),
            m * pairs_per * 4,
            fold(|a| a.sym),
            limits::SYMMETRIZED,
        ),
        upper(
            "divdiff",
            format!("product rule forms ({m} expressions)"),
            m * pairs_per * 4,
            fold(|a| a.prod),
            limits::PRODUCT_FORMS,
        ),
    ]
}

/// The five bundled systems with their default parameters.
pub fn bundled_systems() -> Vec<SystemSpec> {
    systems::IDS.iter().map(|id| systems::by_id(id, &[]).unwrap()).collect()
}

/// Polynomial test paths `x(t)` and evaluation times per bundled system.
fn euler_paths(id: &str) -> (Vec<&'static str>, Vec<f64>) {
    match id {
        "rigid-body" => (vec!["1 + t", "2*t", "1 - t"], vec![0.3, 0.8]),
        "lv2" => (vec!["1 + t^2", "1 + t"], vec![0.5, 1.2]),
        "lv3" => (vec!["1 + t", "2 - t^2", "3 + 0.5*t"], vec![0.2, 0.6]),
        "pr3bp" => (vec!["0.5 + 0.1*t", "0.3 + 0.2*t^2", "-0.2 + t", "0.7 - 0.3*t"], vec![0.4, 1.0]),
        _ => (vec!["1 + t^2", "t"], vec![0.0, 0.7]),
    }
}

/// Discrete condition residuals of a scheme over random stencils; returns
/// (worst r1/scale1, worst r2/scale2, failures).
fn discrete_sweep(
    sys: &SystemSpec,
    scheme: &crate::scheme::SchemeDefinition,
    count: usize,
    seed: u64,
) -> (f64, f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut w1, mut w2, mut failed) = (0.0f64, 0.0f64, 0usize);
    for _ in 0..count {
        let s = sys.random_step_pair(&mut rng);
        match scheme.check_discrete(&s) {
            Ok(r) => {
                w1 = worse(w1, r.r1 / r.scale1);
                w2 = worse(w2, r.r2 / r.scale2);
            }
            Err(_) => failed += 1,
        }
    }
    (w1, w2, failed)
}

pub fn multiplier_suite(opts: &VerifyOptions) -> Vec<Check> {
    let systems = bundled_systems();
    let mut out = Vec::new();
    for sys in &systems {
        let lam = analytic_multiplier(&sys.psi, sys.n);
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let (mut w1, mut w2) = (0.0f64, 0.0f64);
        for _ in 0..opts.points {
            let p = sys.random_point(&mut rng);
            let r = check_continuous_conditions(&lam, &sys.psi, &sys.f, &p).unwrap();
            w1 = worse(w1, r.r1 / r.scale1);
            w2 = worse(w2, r.r2 / r.scale2);
        }
        out.push(upper(
            "multiplier",
            format!("{}: continuous conditions", sys.id),
            opts.points,
            w1.max(w2),
            limits::CONTINUOUS,
        ));
    }
    // Discrete conditions for the minor-inversion scheme of every permutation.
    let jobs: Vec<(usize, Vec<usize>)> =
        systems.iter().enumerate().flat_map(|(k, s)| all_permutations(s.n).into_iter().map(move |p| (k, p))).collect();
    let sweeps: Vec<(usize, f64, f64, usize)> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, (k, sigma))| {
            let sys = &systems[*k];
            let plan = permutation_stencils(sigma, sys.n).unwrap();
            let opts_s = SchemeOptions { sigma: Some(plan), ..Default::default() };
            let scheme = build_conservative_scheme(sys, &opts_s).unwrap();
            let (a, b, f) = discrete_sweep(sys, &scheme, opts.stencils, opts.seed.wrapping_add(j as u64));
            (*k, a, b, f)
        })
        .collect();
    for (k, sys) in systems.iter().enumerate() {
        let mine: Vec<_> = sweeps.iter().filter(|s| s.0 == k).collect();
        let w1 = mine.iter().map(|s| s.1).fold(0.0, f64::max);
        let w2 = mine.iter().map(|s| s.2).fold(0.0, f64::max);
        let failed: usize = mine.iter().map(|s| s.3).sum();
        let samples = mine.len() * opts.stencils;
        let worst = if failed > 0 { f64::INFINITY } else { w1 };
        out.push(upper(
            "multiplier",
            format!("{}: discrete identity, {} permutations", sys.id, mine.len()),
            samples,
            worst,
            limits::DISCRETE,
        ));
        let worst = if failed > 0 { f64::INFINITY } else { w2 };
        out.push(upper(
            "multiplier",
            format!("{}: discrete conservation, {} permutations", sys.id, mine.len()),
            samples,
            worst,
            limits::DISCRETE,
        ));
    }
    // Coincidence reduction and, for sums of one-variable terms, independence
    // of the permutation.
    for sys in &systems {
        let lam = analytic_multiplier(&sys.psi, sys.n);
        let perms = all_permutations(sys.n);
        let dms: Vec<_> = perms
            .iter()
            .map(|p| discrete_multiplier(&sys.psi, &permutation_stencils(p, sys.n).unwrap()).unwrap())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let (mut coinc, mut spread) = (0.0f64, 0.0f64);
        for _ in 0..opts.points {
            let p = sys.random_point(&mut rng);
            let exact = lam.eval(&p.values()).unwrap();
            let scale = exact.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            let same = StepPair { k: p.clone(), k1: p.clone() };
            for dm in &dms {
                let d = dm.lambda.eval(&same.two_level()).unwrap();
                coinc = worse(coinc, max_diff(d.as_slice(), exact.as_slice()) / scale);
            }
            let s = sys.random_step_pair(&mut rng);
            let first = dms[0].lambda.eval(&s.two_level()).unwrap();
            let scale = first.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for dm in &dms[1..] {
                spread = worse(
                    spread,
                    max_diff(dm.lambda.eval(&s.two_level()).unwrap().as_slice(), first.as_slice()) / scale,
                );
            }
        }
        let samples = opts.points * perms.len();
        out.push(upper(
            "multiplier",
            format!("{}: coincidence reduction, {} permutations", sys.id, perms.len()),
            samples,
            coinc,
            limits::MULTIPLIER_COINCIDENCE,
        ));
        if sys.id == "rigid-body" || sys.id == "lv2" {
            out.push(upper(
                "multiplier",
                format!("{}: independent of the permutation", sys.id),
                samples,
                spread,
                limits::PERMUTATION_INDEPENDENCE,
            ));
        }
    }
    // Euler operator along polynomial paths, with a unit-row negative control.
    for sys in &systems {
        let (paths, times) = euler_paths(&sys.id);
        let path: Vec<Expr> = paths.iter().map(|p| parse(p, VarSpace::State { n: 0 }).unwrap()).collect();
        let lam = analytic_multiplier(&sys.psi, sys.n);
        let mut control_row = vec![Expr::zero(); sys.n];
        control_row[0] = Expr::one();
        let control = MultiplierMatrix { entries: vec![control_row], space: VarSpace::State { n: sys.n } };
        let (mut worst, mut least) = (0.0f64, f64::INFINITY);
        for &t in &times {
            let r = euler_operator_residual(&lam, &sys.f, &path, t).unwrap();
            worst = r.iter().fold(worst, |m, v| worse(m, v.abs()));
            let c = euler_operator_residual(&control, &sys.f, &path, t).unwrap();
            let size = if c.iter().any(|v| v.is_nan()) { 0.0 } else { c.iter().fold(0.0f64, |m, v| m.max(v.abs())) };
            least = least.min(size);
        }
        out.push(upper(
            "multiplier",
            format!("{}: Euler operator of Lambda.F", sys.id),
            times.len(),
            worst,
            limits::EULER,
        ));
        out.push(lower(
            "multiplier",
            format!("{}: Euler operator negative control", sys.id),
            times.len(),
            least,
            limits::EULER_CONTROL,
        ));
    }
    out
}

pub fn scheme_suite(opts: &VerifyOptions) -> Vec<Check> {
    let systems = bundled_systems();
    let mut out = Vec::new();
    // Every closed form that comes from a raising order satisfies the
    // discrete conditions of that order.
    for sys in &systems {
        for form in &sys.closed_forms {
            if form.sigma.is_none() {
                continue;
            }
            let o = SchemeOptions { variant: Some(form.name.clone()), ..Default::default() };
            let scheme = build_closed_form_scheme(sys, &o).unwrap();
            let (w1, w2, failed) = discrete_sweep(sys, &scheme, opts.stencils, opts.seed);
            let worst = if failed > 0 { f64::INFINITY } else { w1.max(w2) };
            out.push(upper(
                "scheme",
                format!("{} closed form {}: discrete conditions", sys.id, form.name),
                opts.stencils,
                worst,
                limits::DISCRETE,
            ));
        }
    }
    // Minor inversion with the transcribed g agrees with the closed form.
    for sys in systems.iter().filter(|s| s.id == "rigid-body" || s.id == "lv3") {
        let o = SchemeOptions { variant: Some("paper".into()), minor: Some(vec![0, 1]), ..Default::default() };
        let inv = build_conservative_scheme(sys, &o).unwrap();
        let closed = build_closed_form_scheme(sys, &SchemeOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut worst = 0.0f64;
        for _ in 0..opts.stencils {
            let s = sys.random_step_pair(&mut rng);
            let a = inv.ftau_at(&s).unwrap();
            let b = closed.ftau_at(&s).unwrap();
            let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            for j in 0..sys.n {
                worst = worse(worst, (a[j] - b[j]).abs() / scale);
            }
        }
        out.push(upper(
            "scheme",
            format!("{}: minor inversion vs closed form", sys.id),
            opts.stencils,
            worst,
            limits::INVERSION_VS_CLOSED,
        ));
    }
    // LV3: the six forms differ from each other.
    let lv3 = systems.iter().find(|s| s.id == "lv3").unwrap();
    let s = StepPair { k: Point::new(0.0, vec![1.0, 2.0, 3.0]), k1: Point::new(0.1, vec![1.1, 1.9, 3.2]) };
    let vals: Vec<Vec<f64>> = lv3.closed_forms.iter().map(|f| f.eval(&s).unwrap()).collect();
    let mut distinct = 0;
    for i in 0..vals.len() {
        for j in i + 1..vals.len() {
            if vals[i] != vals[j] {
                distinct += 1;
            }
        }
    }
    out.push(lower("scheme", "lv3: the six forms are pairwise distinct (pairs)", 15, distinct as f64, 15.0));
    out
}

pub fn systems_suite() -> Vec<Check> {
    systems::IDS
        .iter()
        .map(|id| {
            let ok = systems::by_id(id, &[]).is_ok();
            Check {
                suite: "systems",
                name: format!("{id}: registration gate"),
                samples: systems::REGISTRATION_POINTS,
                worst: if ok { 0.0 } else { 1.0 },
                limit: 0.0,
                pass: ok,
            }
        })
        .collect()
}
