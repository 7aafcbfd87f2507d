//! Implicit step solvers and trajectory integration.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::divdiff::StepPair;
use crate::expr::Point;
use crate::scheme::{Repivot, SchemeDefinition, SchemeError, StepContext};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    FixedPoint,
    Newton,
}

impl FromStr for SolveMethod {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed-point" => Ok(SolveMethod::FixedPoint),
            "newton" => Ok(SolveMethod::Newton),
            _ => Err(format!("unknown solver `{s}` (fixed-point | newton)")),
        }
    }
}

impl fmt::Display for SolveMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveMethod::FixedPoint => "fixed-point",
            SolveMethod::Newton => "newton",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub method: SolveMethod,
    pub abs_tol: f64,
    pub max_iter: usize,
    pub newton_fd_step: f64,
    /// Seed with an explicit Euler predictor instead of `x^k`.
    pub predictor: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            method: SolveMethod::FixedPoint,
            abs_tol: 1e-15,
            max_iter: 100,
            newton_fd_step: 1e-8,
            predictor: false,
        }
    }
}

impl SolverConfig {
    pub fn with_tol(tol: f64) -> Self {
        SolverConfig { abs_tol: tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.abs_tol > 0.0) || self.max_iter == 0 || !(self.newton_fd_step > 0.0) {
            return Err(SolverError::Config(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("step {step}: {source}")]
    Step { step: usize, source: SchemeError },
    #[error("step {step}: singular Newton Jacobian")]
    SingularJacobian { step: usize },
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("time grid must be strictly increasing")]
    Grid,
}

/// Result of one implicit step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Last update size (or scaled residual for Newton).
    pub last_update: f64,
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (p, q)| m.max((p - q).abs()))
}

/// Solves `(x - x^k)/tau = f^tau(t^k, x^k, x)` for `x`.
///
/// Fixed point iterates `x <- x^k + tau f^tau` until the update is at most
/// `abs_tol` in max norm. Newton uses a forward-difference Jacobian of the
/// residual and stops when the update or `tau * |residual|` is at most
/// `abs_tol`. Running out of iterations is not an error: the last iterate is
/// returned with `converged = false`.
pub fn implicit_step(
    scheme: &SchemeDefinition,
    ctx: &StepContext,
    tk: f64,
    xk: &[f64],
    tau: f64,
    cfg: &SolverConfig,
) -> Result<StepOutcome, SchemeError> {
    let k = Point::new(tk, xk.to_vec());
    let mut pair = StepPair { k: k.clone(), k1: Point::new(tk + tau, xk.to_vec()) };
    if cfg.predictor {
        let f = scheme.ftau(ctx, &pair)?;
        pair.k1.x = xk.iter().zip(&f).map(|(x, v)| x + tau * v).collect();
    }
    match cfg.method {
        SolveMethod::FixedPoint => {
            let mut last = f64::INFINITY;
            for it in 1..=cfg.max_iter {
                let f = scheme.ftau(ctx, &pair)?;
                let next: Vec<f64> = xk.iter().zip(&f).map(|(x, v)| x + tau * v).collect();
                last = max_abs_diff(&next, &pair.k1.x);
                pair.k1.x = next;
                if last <= cfg.abs_tol {
                    return Ok(StepOutcome { x: pair.k1.x, iterations: it, converged: true, last_update: last });
                }
            }
            Ok(StepOutcome { x: pair.k1.x, iterations: cfg.max_iter, converged: false, last_update: last })
        }
        SolveMethod::Newton => newton(scheme, ctx, pair, tau, cfg),
    }
}

fn newton(
    scheme: &SchemeDefinition,
    ctx: &StepContext,
    mut pair: StepPair,
    tau: f64,
    cfg: &SolverConfig,
) -> Result<StepOutcome, SchemeError> {
    let n = pair.n();
    if tau == 0.0 {
        return Ok(StepOutcome { x: pair.k1.x, iterations: 1, converged: true, last_update: 0.0 });
    }
    let mut last = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let r = scheme.residual(ctx, &pair)?;
        let rnorm = tau * r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if rnorm <= cfg.abs_tol {
            return Ok(StepOutcome { x: pair.k1.x, iterations: it, converged: true, last_update: rnorm });
        }
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = cfg.newton_fd_step * pair.k1.x[j].abs().max(1.0);
            let mut shifted = pair.clone();
            shifted.k1.x[j] += h;
            let rj = scheme.residual(ctx, &shifted)?;
            for i in 0..n {
                jac[(i, j)] = (rj[i] - r[i]) / h;
            }
        }
        let rhs = DVector::from_iterator(n, r.iter().map(|v| -v));
        let Some(delta) = jac.lu().solve(&rhs) else {
            return Err(SchemeError::SingularMinor { det: 0.0 });
        };
        for j in 0..n {
            pair.k1.x[j] += delta[j];
        }
        last = delta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if last <= cfg.abs_tol {
            return Ok(StepOutcome { x: pair.k1.x, iterations: it, converged: true, last_update: last });
        }
    }
    Ok(StepOutcome { x: pair.k1.x, iterations: cfg.max_iter, converged: false, last_update: last })
}

/// Something noteworthy during integration.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Repivot { step: usize, repivot: Repivot },
    MaxIter { step: usize, last_update: f64 },
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Event::Repivot { step, repivot } => write!(
                f,
                "step {step}: re-pivot {:?} -> {:?} (|det| {:.3e})",
                repivot.from,
                repivot.to,
                repivot.det.abs()
            ),
            Event::MaxIter { step, last_update } => {
                write!(f, "step {step}: iteration cap reached (last update {last_update:.3e})")
            }
        }
    }
}

/// Times, states and per-step iteration counts of an integration.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    /// `iters[k]` is the count for the step ending at index `k`; `iters[0] = 0`.
    pub iters: Vec<usize>,
    pub events: Vec<Event>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn last(&self) -> (f64, &[f64]) {
        (*self.t.last().unwrap(), self.x.last().unwrap())
    }
}

/// `steps` steps of size `tau` from `(t0, x0)`.
pub fn integrate(
    scheme: &SchemeDefinition,
    x0: &[f64],
    t0: f64,
    tau: f64,
    steps: usize,
    cfg: &SolverConfig,
) -> Result<Trajectory, SolverError> {
    let grid: Vec<f64> = (0..=steps).map(|k| t0 + k as f64 * tau).collect();
    integrate_grid(scheme, x0, &grid, cfg)
}

/// Steps across an explicit, strictly increasing time grid.
pub fn integrate_grid(
    scheme: &SchemeDefinition,
    x0: &[f64],
    grid: &[f64],
    cfg: &SolverConfig,
) -> Result<Trajectory, SolverError> {
    cfg.validate()?;
    if grid.is_empty() || grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(SolverError::Grid);
    }
    scheme.check_domain(grid[0], x0).map_err(|source| SolverError::Step { step: 0, source })?;
    let mut traj = Trajectory {
        t: Vec::with_capacity(grid.len()),
        x: Vec::with_capacity(grid.len()),
        iters: Vec::with_capacity(grid.len()),
        events: vec![],
    };
    traj.t.push(grid[0]);
    traj.x.push(x0.to_vec());
    traj.iters.push(0);
    let mut ctx = StepContext::default();
    for k in 1..grid.len() {
        let tk = grid[k - 1];
        let tau = grid[k] - tk;
        let xk = traj.x.last().unwrap().clone();
        let err = |source| SolverError::Step { step: k, source };
        if let Some(repivot) = scheme.prepare_step(&mut ctx, tk, &xk, tau).map_err(err)? {
            traj.events.push(Event::Repivot { step: k, repivot });
        }
        let out = implicit_step(scheme, &ctx, tk, &xk, tau, cfg).map_err(err)?;
        if !out.converged {
            traj.events.push(Event::MaxIter { step: k, last_update: out.last_update });
        }
        traj.t.push(grid[k]);
        traj.x.push(out.x);
        traj.iters.push(out.iterations);
    }
    Ok(traj)
}
