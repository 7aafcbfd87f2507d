use conservekit::expr::{parse, VarSpace};
use conservekit::harness::{
    conservation_error, read_csv, reproduce_table, run_experiment, write_csv, Expect, ExperimentConfig,
};
use conservekit::scheme::Method;
use conservekit::solver::{SolveMethod, Trajectory};
use proptest::prelude::*;

fn trajectory(rows: Vec<(f64, Vec<f64>, usize)>) -> Trajectory {
    Trajectory {
        t: rows.iter().map(|r| r.0).collect(),
        x: rows.iter().map(|r| r.1.clone()).collect(),
        iters: rows.iter().map(|r| r.2).collect(),
        events: vec![],
    }
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()),
        -10.0..10.0f64,
        Just(0.0),
        Just(-0.0),
        Just(f64::MIN_POSITIVE),
        Just(5e-324),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn csv_round_trip_is_bit_exact(
        rows in proptest::collection::vec((finite(), proptest::collection::vec(finite(), 2), 0usize..50), 1..20)
    ) {
        let traj = trajectory(rows);
        let psi = vec![parse("x1 + x2", VarSpace::State { n: 2 }).unwrap()];
        let mut buf = vec![];
        write_csv(&mut buf, &traj, &psi).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        prop_assert!(!text.contains('\r'));
        let back = read_csv(&buf[..]).unwrap();
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&back.t), bits(&traj.t));
        for (a, b) in back.x.iter().zip(&traj.x) {
            prop_assert_eq!(bits(a), bits(b));
        }
        prop_assert_eq!(back.iters, traj.iters);
    }

    #[test]
    fn drift_over_a_prefix_is_no_larger(
        xs in proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, 2), 2..40),
        cut in any::<prop::sample::Index>(),
    ) {
        let rows: Vec<_> = xs.into_iter().enumerate().map(|(k, x)| (k as f64 * 0.1, x, 0)).collect();
        let full = trajectory(rows.clone());
        let keep = 1 + cut.index(rows.len());
        let prefix = trajectory(rows[..keep].to_vec());
        let psi = parse("t*x1 + x2^2", VarSpace::State { n: 2 }).unwrap();
        prop_assert!(conservation_error(&prefix, &psi) <= conservation_error(&full, &psi));
    }
}

#[test]
fn equilibrium_has_no_drift() {
    let cfg = ExperimentConfig {
        system: "lv2".into(),
        method: Method::MultiplierClosedForm,
        x0: Some(vec![1.0, 1.0]),
        ..Default::default()
    };
    let r = run_experiment(&cfg).unwrap();
    assert_eq!(r.errors, vec![0.0]);
    assert_eq!(r.final_x, vec![1.0, 1.0]);
    // The minor inversion has nothing to invert where grad psi vanishes.
    let generic = ExperimentConfig { method: Method::Multiplier, ..cfg };
    let err = run_experiment(&generic).unwrap_err().to_string();
    assert!(err.contains("rank"), "{err}");
}

#[test]
fn tables_are_deterministic() {
    let a = reproduce_table(2).unwrap();
    let b = reproduce_table(2).unwrap();
    for (ra, rb) in a.rows.iter().zip(&b.rows) {
        let (ea, eb) = (&ra.report.as_ref().unwrap().errors, &rb.report.as_ref().unwrap().errors);
        assert_eq!(
            ea.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            eb.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert_eq!(ra.report.as_ref().unwrap().final_x, rb.report.as_ref().unwrap().final_x);
    }
    assert!(a.pass());
}

#[test]
fn cells_use_factor_two_bands() {
    assert!(Expect::Published(1e-3).accepts(1.9e-3));
    assert!(!Expect::Published(1e-3).accepts(2.1e-3));
    assert!(!Expect::Published(1e-3).accepts(4.9e-4));
    assert!(Expect::RoundOff(1e-12).accepts(1e-12));
    assert!(!Expect::RoundOff(1e-12).accepts(f64::NAN));
}

#[test]
fn config_text_sets_every_key() {
    let text = "\
# comment
system = dho
param.gamma = 0.25
method = trapezoidal
sigma = 0,2,1
variant = exp-secant
x0 = 1, -0.5
t0 = 0.5
tau = 0.02
steps = 50
tol = 1e-12
solver = newton
max-iter = 40
predictor = true
out = /tmp/run.csv
";
    let cfg = ExperimentConfig::from_text(text).unwrap();
    assert_eq!(cfg.system, "dho");
    assert_eq!(cfg.params, vec![("gamma".to_string(), 0.25)]);
    assert_eq!(cfg.method, Method::Trapezoidal);
    assert_eq!(cfg.sigma.as_deref(), Some("0,2,1"));
    assert_eq!(cfg.variant.as_deref(), Some("exp-secant"));
    assert_eq!(cfg.x0, Some(vec![1.0, -0.5]));
    assert_eq!((cfg.t0, cfg.tau, cfg.steps), (0.5, 0.02, 50));
    assert_eq!(cfg.solver.abs_tol, 1e-12);
    assert_eq!(cfg.solver.method, SolveMethod::Newton);
    assert_eq!(cfg.solver.max_iter, 40);
    assert!(cfg.solver.predictor);
    assert!(ExperimentConfig::from_text("bogus = 1").is_err());
    assert!(ExperimentConfig::from_text("tau").is_err());
    assert!(ExperimentConfig::from_text("steps = -3").is_err());
}

#[test]
fn invalid_runs_are_rejected() {
    let bad_tau = ExperimentConfig { tau: 0.0, ..Default::default() };
    assert!(run_experiment(&bad_tau).is_err());
    let bad_steps = ExperimentConfig { steps: 0, ..Default::default() };
    assert!(run_experiment(&bad_steps).is_err());
    let bad_x0 = ExperimentConfig { x0: Some(vec![1.0]), ..Default::default() };
    assert!(run_experiment(&bad_x0).is_err());
    let bad_param = ExperimentConfig { params: vec![("nope".into(), 1.0)], ..Default::default() };
    assert!(run_experiment(&bad_param).is_err());
}

#[test]
fn run_writes_the_csv() {
    let dir = std::env::temp_dir().join(format!("conservekit-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("lv3.csv");
    let cfg = ExperimentConfig {
        system: "lv3".into(),
        method: Method::MultiplierClosedForm,
        steps: 20,
        out: Some(path.clone()),
        ..Default::default()
    };
    let r = run_experiment(&cfg).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("k,t,x1,x2,x3,psi1,psi2,drift1,drift2,iters\n"));
    let back = read_csv(text.as_bytes()).unwrap();
    assert_eq!(back.t.len(), 21);
    assert_eq!(back.x.last().unwrap(), &r.final_x);
    let worst = back.drift.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst <= 1e-12);
    std::fs::remove_dir_all(dir).unwrap();
}
