use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use conservekit::harness::{self, ExperimentConfig, HarnessError};
use conservekit::scheme::{Method, SchemeOptions};
use conservekit::systems::{self, SystemSpec};
use conservekit::verify::{self, VerifyOptions};

#[derive(Parser)]
#[command(name = "conservekit", version, about = "Conservative one-step schemes from conservation law multipliers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one system and report invariant drift.
    Run(Box<RunArgs>),
    /// Reproduce one or more of the comparison tables (1..6).
    Table {
        #[arg(required = true, value_parser = clap::value_parser!(u8).range(1..=6))]
        ids: Vec<u8>,
    },
    /// Print the discrete multiplier and scheme for a raising order.
    Derive {
        #[command(flatten)]
        system: SystemArgs,
        /// Raising order, e.g. `0,2,1,3` (or `2,1,3` with t first implied).
        #[arg(long)]
        sigma: Option<String>,
        /// Closed-form variant name.
        #[arg(long)]
        variant: Option<String>,
    },
    /// Run the randomized identity suites.
    Verify {
        /// One of expr, divdiff, multiplier, scheme, systems.
        #[arg(long)]
        module: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Random stencils per system and permutation.
        #[arg(long)]
        stencils: Option<usize>,
    },
    /// Observed order of accuracy over tau = 1e-2 .. 1.25e-3 at T = 1.
    Converge {
        #[command(flatten)]
        system: SystemArgs,
        #[arg(long, default_value = "multiplier")]
        method: Method,
        /// Initial state, comma separated.
        #[arg(long)]
        x0: Option<String>,
    },
}

#[derive(Args)]
struct SystemArgs {
    /// Bundled system: rigid-body, lv2, lv3, pr3bp, dho.
    #[arg(long, default_value = "rigid-body")]
    system: String,
    /// System description file (overrides --system).
    #[arg(long)]
    system_file: Option<PathBuf>,
    /// Parameter override, `name=value`; repeatable.
    #[arg(long = "param")]
    params: Vec<String>,
}

impl SystemArgs {
    fn load(&self) -> Result<SystemSpec, HarnessError> {
        if let Some(p) = &self.system_file {
            return Ok(SystemSpec::from_spec_file(p)?);
        }
        let mut overrides = vec![];
        for p in &self.params {
            let (k, v) = split_param(p)?;
            overrides
                .push((k.to_string(), v.parse().map_err(|_| HarnessError::Config(format!("bad value in `{p}`")))?));
        }
        Ok(systems::by_id(&self.system, &overrides)?)
    }
}

fn split_param(p: &str) -> Result<(&str, &str), HarnessError> {
    p.split_once('=').ok_or_else(|| HarnessError::Config(format!("--param expects name=value, got `{p}`")))
}

#[derive(Args)]
struct RunArgs {
    /// `key=value` file; flags given on the command line take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    system_file: Option<PathBuf>,
    /// Parameter override, `name=value`; repeatable.
    #[arg(long = "param")]
    params: Vec<String>,
    /// multiplier, multiplier-closed-form, backward-euler, midpoint, trapezoidal.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long)]
    variant: Option<String>,
    /// Initial state, comma separated.
    #[arg(long, allow_hyphen_values = true)]
    x0: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    t0: Option<String>,
    #[arg(long)]
    tau: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    tol: Option<String>,
    /// fixed-point or newton.
    #[arg(long)]
    solver: Option<String>,
    #[arg(long)]
    max_iter: Option<String>,
    #[arg(long)]
    predictor: bool,
    /// Write the trajectory as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = ExperimentConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| HarnessError::Io { path: path.display().to_string(), message: e.to_string() })?;
            cfg.apply_text(&text)?;
        }
        let pairs = [
            ("system", self.system.clone()),
            ("system-file", self.system_file.as_ref().map(|p| p.display().to_string())),
            ("method", self.method.clone()),
            ("sigma", self.sigma.clone()),
            ("variant", self.variant.clone()),
            ("x0", self.x0.clone()),
            ("t0", self.t0.clone()),
            ("tau", self.tau.clone()),
            ("steps", self.steps.clone()),
            ("tol", self.tol.clone()),
            ("solver", self.solver.clone()),
            ("max-iter", self.max_iter.clone()),
            ("out", self.out.as_ref().map(|p| p.display().to_string())),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, &v)?;
            }
        }
        for p in &self.params {
            let (k, v) = split_param(p)?;
            cfg.set(&format!("param.{k}"), v)?;
        }
        if self.predictor {
            cfg.solver.predictor = true;
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<bool, HarnessError> {
    match cli.command {
        Command::Run(args) => {
            let report = harness::run_experiment(&args.config()?)?;
            print!("{report}");
            Ok(true)
        }
        Command::Table { ids } => {
            let mut ok = true;
            for id in ids {
                let t = harness::reproduce_table(id)?;
                println!("{t}");
                ok &= t.pass();
            }
            Ok(ok)
        }
        Command::Derive { system, sigma, variant } => {
            let sys = system.load()?;
            print!("{}", harness::derive_text(&sys, sigma.as_deref(), variant.as_deref())?);
            Ok(true)
        }
        Command::Verify { module, seed, stencils } => {
            let mut opts = VerifyOptions::default();
            if let Some(s) = seed {
                opts.seed = s;
            }
            if let Some(s) = stencils {
                opts.stencils = s;
            }
            let checks = verify::run(module.as_deref(), &opts).map_err(HarnessError::Config)?;
            for c in &checks {
                println!("{c}");
            }
            let failed = checks.iter().filter(|c| !c.pass).count();
            println!("{} checks, {} failed", checks.len(), failed);
            Ok(failed == 0)
        }
        Command::Converge { system, method, x0 } => {
            let sys = system.load()?;
            let x0 = match x0 {
                Some(s) => harness::parse_list(&s)?,
                None => harness::study_x0(&sys),
            };
            let study = harness::convergence_study(
                &sys,
                method,
                &SchemeOptions::default(),
                &x0,
                &harness::STUDY_TAUS,
                harness::STUDY_T,
            )?;
            print!("{study}");
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
