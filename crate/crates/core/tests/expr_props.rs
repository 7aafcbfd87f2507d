use conservekit::expr::{parse, Expr, Point, VarSpace};
use conservekit::verify::{corpus_point, random_expression, CORPUS_N};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SP: VarSpace = VarSpace::State { n: CORPUS_N };

fn sample(seed: u64, depth: usize) -> (Expr, Point) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = random_expression(&mut rng, CORPUS_N, depth);
    (e, corpus_point(&mut rng, CORPUS_N))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn print_parse_is_a_fixed_point(seed in any::<u64>(), depth in 1usize..5) {
        let (e, _) = sample(seed, depth);
        let once = parse(&e.to_string(), SP).unwrap();
        let twice = parse(&once.to_string(), SP).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.to_string(), twice.to_string());
    }

    #[test]
    fn derivative_matches_central_differences(seed in any::<u64>(), i in 0usize..=CORPUS_N) {
        let (e, p) = sample(seed, 3);
        let v = p.values();
        let d = e.partial_derivative(i).eval(&v).unwrap();
        let h = 1e-6 * v[i].abs().max(1.0);
        let (mut up, mut dn) = (v.clone(), v.clone());
        up[i] += h;
        dn[i] -= h;
        let fd = (e.eval(&up).unwrap() - e.eval(&dn).unwrap()) / (2.0 * h);
        let scale = d.abs().max(e.eval(&v).unwrap().abs()).max(1.0);
        prop_assert!((d - fd).abs() <= 1e-6 * scale, "{e}: d={d} fd={fd}");
    }

    #[test]
    fn evaluation_is_deterministic(seed in any::<u64>()) {
        let (e, p) = sample(seed, 4);
        let a = e.eval_at(&p).unwrap();
        let b = e.clone().eval_at(&p.clone()).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn operators_agree_with_arithmetic(seed in any::<u64>()) {
        let (a, p) = sample(seed, 2);
        let (b, _) = sample(seed.wrapping_add(1), 2);
        let (x, y) = (a.eval_at(&p).unwrap(), b.eval_at(&p).unwrap());
        let close = |u: f64, w: f64| (u - w).abs() <= 1e-13 * u.abs().max(w.abs()).max(1.0);
        prop_assert!(close((a.clone() + b.clone()).eval_at(&p).unwrap(), x + y));
        prop_assert!(close((a.clone() - b.clone()).eval_at(&p).unwrap(), x - y));
        prop_assert!(close((a.clone() * b.clone()).eval_at(&p).unwrap(), x * y));
        prop_assert!(close((-a).eval_at(&p).unwrap(), -x));
    }
}

#[test]
fn parse_examples() {
    let e = parse("x1^2 + 2*x1*x2 - exp(t)/x3", SP).unwrap();
    let v = e.eval(&[0.0, 1.0, 2.0, 4.0]).unwrap();
    assert_eq!(v, 1.0 + 4.0 - 0.25);
    assert!(parse("x1 +", SP).is_err());
    assert!(parse("x7", SP).is_err());
    assert!(parse("x1^(1/2", SP).is_err());
}

#[test]
fn domain_errors_are_reported() {
    let e = parse("log(x1)", SP).unwrap();
    assert!(e.eval(&[0.0, -1.0, 0.0, 0.0]).is_err());
    let e = parse("1/x1", SP).unwrap();
    assert!(e.eval(&[0.0, 0.0, 0.0, 0.0]).is_err());
    let e = parse("x1^(1/2)", SP).unwrap();
    assert!(e.eval(&[0.0, -4.0, 0.0, 0.0]).is_err());
}
