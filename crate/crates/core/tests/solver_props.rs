use conservekit::harness::{conservation_error, study_x0};
use conservekit::scheme::{Method, SchemeDefinition, SchemeOptions, StepContext};
use conservekit::solver::{implicit_step, integrate, SolveMethod, SolverConfig};
use conservekit::systems;

fn scheme(id: &str, method: Method) -> (systems::SystemSpec, SchemeDefinition) {
    let sys = systems::by_id(id, &[]).unwrap();
    let s = SchemeDefinition::build(&sys, method, &SchemeOptions::default()).unwrap();
    (sys, s)
}

#[test]
fn identical_runs_are_bit_identical() {
    for id in systems::IDS {
        let (sys, s) = scheme(id, Method::Multiplier);
        let cfg = SolverConfig::default();
        let a = integrate(&s, &study_x0(&sys), 0.0, 0.01, 200, &cfg).unwrap();
        let b = integrate(&s, &study_x0(&sys), 0.0, 0.01, 200, &cfg).unwrap();
        let bits = |t: &conservekit::Trajectory| t.x.iter().flatten().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b), "{id}");
    }
}

#[test]
fn tighter_tolerance_does_not_increase_drift() {
    for id in systems::IDS {
        let (sys, s) = scheme(id, Method::Multiplier);
        let drift = |tol: f64| {
            let t = integrate(&s, &study_x0(&sys), 0.0, 0.01, 300, &SolverConfig::with_tol(tol)).unwrap();
            sys.psi.iter().map(|p| conservation_error(&t, p)).fold(0.0, f64::max)
        };
        for tol in [1e-8, 1e-9, 1e-10, 1e-11, 1e-12, 1e-13] {
            let (loose, tight) = (drift(tol), drift(tol / 2.0));
            assert!(tight <= 2.0 * loose + 1e-14, "{id} tol {tol}: {tight} > 2 * {loose}");
        }
    }
}

#[test]
fn fixed_point_and_newton_agree() {
    let tol = 1e-13;
    for id in systems::IDS {
        for method in [Method::Multiplier, Method::MultiplierClosedForm, Method::Midpoint] {
            let (sys, s) = scheme(id, method);
            let fp = SolverConfig::with_tol(tol);
            let nw = SolverConfig { method: SolveMethod::Newton, ..fp };
            let traj = integrate(&s, &study_x0(&sys), 0.0, 0.01, 100, &fp).unwrap();
            for k in 0..traj.len() - 1 {
                let mut ctx = StepContext::default();
                s.prepare_step(&mut ctx, traj.t[k], &traj.x[k], 0.01).unwrap();
                let a = implicit_step(&s, &ctx, traj.t[k], &traj.x[k], 0.01, &fp).unwrap();
                let b = implicit_step(&s, &ctx, traj.t[k], &traj.x[k], 0.01, &nw).unwrap();
                assert!(a.converged && b.converged, "{id} {method} step {k}");
                let d = a.x.iter().zip(&b.x).fold(0.0f64, |m, (p, q)| m.max((p - q).abs()));
                assert!(d <= 10.0 * tol, "{id} {method} step {k}: {d}");
            }
        }
    }
}

#[test]
fn invalid_configurations_are_rejected() {
    let (sys, s) = scheme("lv2", Method::Midpoint);
    let bad = SolverConfig { abs_tol: 0.0, ..Default::default() };
    assert!(integrate(&s, &sys.x0, 0.0, 0.01, 10, &bad).is_err());
    assert!(conservekit::solver::integrate_grid(&s, &sys.x0, &[0.0, 0.1, 0.1], &SolverConfig::default()).is_err());
}

#[test]
fn leaving_the_domain_is_a_step_error() {
    // Backward Euler on the positive quadrant with a huge step overshoots.
    let (_, s) = scheme("lv2", Method::BackwardEuler);
    let r = integrate(&s, &[0.01, 5.0], 0.0, 5.0, 3, &SolverConfig::default());
    assert!(r.is_err() || r.unwrap().events.iter().any(|e| matches!(e, conservekit::solver::Event::MaxIter { .. })));
}
