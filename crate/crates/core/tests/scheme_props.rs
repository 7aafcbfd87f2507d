use conservekit::divdiff::StepPair;
use conservekit::expr::Point;
use conservekit::harness::{self, damped_oscillator_exact, ls_slope, ExperimentConfig};
use conservekit::scheme::{Method, SchemeDefinition, SchemeOptions, StepContext};
use conservekit::solver::{integrate, SolverConfig};
use conservekit::systems::{self, SystemSpec};
use conservekit::verify::{self, VerifyOptions};

const TOL: f64 = 1e-15;

/// Every conservative scheme of a system: the minor inversion at the default
/// order and each closed form that comes from a raising order.
fn conservative_schemes(sys: &SystemSpec) -> Vec<SchemeDefinition> {
    let mut out = vec![SchemeDefinition::build(sys, Method::Multiplier, &SchemeOptions::default()).unwrap()];
    for form in sys.closed_forms.iter().filter(|f| f.sigma.is_some()) {
        let o = SchemeOptions { variant: Some(form.name.clone()), ..Default::default() };
        out.push(SchemeDefinition::build(sys, Method::MultiplierClosedForm, &o).unwrap());
    }
    out
}

fn start(sys: &SystemSpec) -> Vec<f64> {
    harness::study_x0(sys)
}

#[test]
fn every_accepted_step_conserves() {
    for id in systems::IDS {
        let sys = systems::by_id(id, &[]).unwrap();
        for scheme in conservative_schemes(&sys) {
            let traj = integrate(&scheme, &start(&sys), 0.0, 0.01, 300, &SolverConfig::with_tol(TOL)).unwrap();
            let dm = scheme.discrete_multiplier().unwrap();
            for k in 1..traj.len() {
                let s = StepPair {
                    k: Point::new(traj.t[k - 1], traj.x[k - 1].clone()),
                    k1: Point::new(traj.t[k], traj.x[k].clone()),
                };
                let lam = dm.lambda.eval(&s.two_level()).unwrap();
                for (i, p) in sys.psi.iter().enumerate() {
                    let (a, b) = (p.eval(&s.k.values()).unwrap(), p.eval(&s.k1.values()).unwrap());
                    let row: f64 = lam.row(i).iter().map(|v| v.abs()).sum();
                    let bound = 10.0 * (TOL * row + f64::EPSILON * a.abs().max(b.abs()));
                    assert!((b - a).abs() <= bound, "{id} {} step {k}: {} > {bound}", scheme.label, (b - a).abs());
                }
            }
        }
    }
}

fn rk4(sys: &SystemSpec, x0: &[f64], t_end: f64, sub: usize) -> Vec<f64> {
    let h = t_end / sub as f64;
    let mut x = x0.to_vec();
    let axpy = |x: &[f64], k: &[f64], c: f64| -> Vec<f64> { x.iter().zip(k).map(|(a, b)| a + c * b).collect() };
    for i in 0..sub {
        let t = i as f64 * h;
        let k1 = sys.field(t, &x).unwrap();
        let k2 = sys.field(t + h / 2.0, &axpy(&x, &k1, h / 2.0)).unwrap();
        let k3 = sys.field(t + h / 2.0, &axpy(&x, &k2, h / 2.0)).unwrap();
        let k4 = sys.field(t + h, &axpy(&x, &k3, h)).unwrap();
        for j in 0..x.len() {
            x[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    x
}

/// Slope of the scheme residual along the exact solution over tau = 1e-2..1e-4.
fn consistency_slope(sys: &SystemSpec, scheme: &SchemeDefinition) -> f64 {
    let x0 = start(sys);
    let taus = [1e-2, 1e-3, 1e-4];
    let mut logs = vec![];
    for &tau in &taus {
        let x1 = match sys.id.as_str() {
            "dho" => damped_oscillator_exact(4.0, 0.5, 5.0, &x0, tau).unwrap(),
            _ => rk4(sys, &x0, tau, 200),
        };
        let mut ctx = StepContext::default();
        scheme.prepare_step(&mut ctx, 0.0, &x0, tau).unwrap();
        let s = StepPair { k: Point::new(0.0, x0.clone()), k1: Point::new(tau, x1) };
        let r = scheme.residual(&ctx, &s).unwrap();
        logs.push(r.iter().fold(0.0f64, |m, v| m.max(v.abs())).ln());
    }
    ls_slope(&taus.map(f64::ln), &logs)
}

#[test]
fn conservative_schemes_are_consistent() {
    for id in systems::IDS {
        let sys = systems::by_id(id, &[]).unwrap();
        for scheme in conservative_schemes(&sys) {
            let slope = consistency_slope(&sys, &scheme);
            let bound = if id == "rigid-body" { 1.9 } else { 0.9 };
            assert!(slope >= bound, "{id} {}: slope {slope}", scheme.label);
        }
    }
}

#[test]
fn inversion_and_closed_forms_agree() {
    let checks = verify::scheme_suite(&VerifyOptions::default());
    let failed: Vec<String> = checks.iter().filter(|c| !c.pass).map(|c| c.to_string()).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn backward_euler_drifts_on_the_rigid_body() {
    let cfg = ExperimentConfig { method: Method::BackwardEuler, ..Default::default() };
    let r = harness::run_experiment(&cfg).unwrap();
    assert!(r.errors[0] > 1e-3, "{r}");
}

#[test]
fn unknown_variants_and_bad_orders_are_rejected() {
    let sys = systems::by_id("lv3", &[]).unwrap();
    let o = SchemeOptions { variant: Some("7".into()), ..Default::default() };
    assert!(SchemeDefinition::build(&sys, Method::MultiplierClosedForm, &o).is_err());
    let o = SchemeOptions { variant: Some("bogus".into()), ..Default::default() };
    assert!(SchemeDefinition::build(&sys, Method::Multiplier, &o).is_err());
    let o = SchemeOptions { minor: Some(vec![0, 0]), ..Default::default() };
    assert!(SchemeDefinition::build(&sys, Method::Multiplier, &o).is_err());
}
