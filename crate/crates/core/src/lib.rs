//! Exactly conservative one-step integrators for first-order ODE systems.
//!
//! Given a system `x' = f(t, x)` with conserved quantities `psi(t, x)`, the
//! crate builds discrete schemes whose update preserves every `psi` up to
//! solver tolerance. The construction differentiates the conservation law
//! multiplier `d psi / dx` with divided differences along a permutation of the
//! variables, then solves the discrete multiplier relation for the increment.
//!
//! Modules, bottom up:
//!
//! - [`expr`]: expression trees, parsing, evaluation and exact derivatives.
//! - [`divdiff`]: stencils, permutation plans and divided differences.
//! - [`multiplier`]: continuous and discrete multipliers plus their identity checks.
//! - [`scheme`]: minor selection, scheme assembly, closed forms and baselines.
//! - [`solver`]: implicit step solvers and trajectory integration.
//! - [`systems`]: the bundled systems and user-defined system files.
//! - [`harness`]: experiments, table reproduction, convergence and CSV output.
//! - [`verify`]: randomized identity suites shared by tests and the CLI.

pub mod divdiff;
pub mod expr;
pub mod harness;
pub mod multiplier;
pub mod scheme;
pub mod solver;
pub mod systems;
pub mod verify;

pub use divdiff::{PermutationPlan, StencilAssignment, StepPair};
pub use expr::{Expr, Point, VarSpace};
pub use scheme::{Method, SchemeDefinition};
pub use solver::{SolverConfig, Trajectory};
pub use systems::SystemSpec;
