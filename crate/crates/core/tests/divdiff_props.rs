use conservekit::divdiff::{
    all_permutations, divided_difference_numeric, divided_difference_symbolic, forward_difference,
    partial_forward_difference, permutation_stencils, symmetrized_forward_difference, PermutationPlan,
    StencilAssignment, StepPair, DEFAULT_GUARD,
};
use conservekit::expr::{parse, Expr, Point, VarSpace};
use conservekit::verify::{divdiff_corpus, CORPUS_N};
use proptest::prelude::*;
use std::sync::OnceLock;

fn corpus() -> &'static [Expr] {
    static C: OnceLock<Vec<Expr>> = OnceLock::new();
    C.get_or_init(|| divdiff_corpus(7, 60))
}

fn pair() -> impl Strategy<Value = StepPair> {
    (
        0.0..1.0f64,
        1e-3..0.1f64,
        proptest::collection::vec(0.5..2.0f64, CORPUS_N),
        proptest::collection::vec(-0.3..0.3f64, CORPUS_N),
    )
        .prop_map(|(t, dt, x, dx)| {
            let x1 = x.iter().zip(&dx).map(|(a, d)| (a + d).clamp(0.5, 2.0)).collect();
            StepPair { k: Point::new(t, x), k1: Point::new(t + dt, x1) }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn telescoping(idx in 0usize..60, sigma_idx in 0usize..24, s in pair()) {
        let f = &corpus()[idx];
        let sigma = &all_permutations(CORPUS_N)[sigma_idx];
        let plan = permutation_stencils(sigma, CORPUS_N).unwrap();
        let v = s.two_level();
        let (fa, fb) = (f.eval(&s.k.values()).unwrap(), f.eval(&s.k1.values()).unwrap());
        let mut total = 0.0;
        let mut mag = fa.abs().max(fb.abs());
        for i in 0..=CORPUS_N {
            let d = divided_difference_symbolic(f, i, plan.stencil_for(i)).unwrap().expr;
            let term = d.eval(&v).unwrap() * s.delta(i);
            total += term;
            mag = mag.max(term.abs());
        }
        prop_assert!((total - (fb - fa)).abs() <= 1e-12 * mag.max(f64::MIN_POSITIVE), "{f}");
    }

    #[test]
    fn symbolic_matches_quotient(idx in 0usize..60, i in 0usize..=CORPUS_N, s in pair()) {
        prop_assume!(s.delta(i).abs() >= 1e-3);
        let f = &corpus()[idx];
        let base = StencilAssignment::base(CORPUS_N);
        let sym = divided_difference_symbolic(f, i, &base).unwrap().expr.eval(&s.two_level()).unwrap();
        let num = divided_difference_numeric(f, i, &base, &s, DEFAULT_GUARD).unwrap();
        let fa = f.eval(&s.corner(&base)).unwrap();
        let fb = f.eval(&s.corner(&base.raised(i))).unwrap();
        let scale = sym.abs().max((fa.abs() + fb.abs()) / s.delta(i).abs());
        prop_assert!((sym - num).abs() <= 1e-12 * scale, "{f}: {sym} vs {num}");
    }

    #[test]
    fn coincidence_limit(idx in 0usize..60, i in 0usize..=CORPUS_N, s in pair()) {
        let f = &corpus()[idx];
        let base = StencilAssignment::base(CORPUS_N);
        let mut c = s.clone();
        if i == 0 { c.k1.t = c.k.t } else { c.k1.x[i - 1] = c.k.x[i - 1] }
        let lim = divided_difference_symbolic(f, i, &base).unwrap().expr.eval(&c.two_level()).unwrap();
        let exact = f.partial_derivative(i).eval(&c.corner(&base)).unwrap();
        let scale = exact.abs().max(f.eval(&c.corner(&base)).unwrap().abs()).max(1.0);
        prop_assert!((lim - exact).abs() <= 1e-12 * scale, "{f}: {lim} vs {exact}");
    }

    #[test]
    fn symmetrized_sum_is_the_forward_difference(idx in 0usize..60, s in pair()) {
        let f = &corpus()[idx];
        let fd = forward_difference(std::slice::from_ref(f), &s).unwrap()[0];
        let sym = symmetrized_forward_difference(f, &s).unwrap();
        let scale = f.eval(&s.k.values()).unwrap().abs().max(f.eval(&s.k1.values()).unwrap().abs());
        prop_assert!((sym - fd).abs() <= 1e-13 * scale.max(f64::MIN_POSITIVE));
    }
}

fn sp(n: usize) -> VarSpace {
    VarSpace::State { n }
}

#[test]
fn partial_difference_of_product() {
    let f = parse("x1*x2", sp(2)).unwrap();
    let s = StepPair { k: Point::new(0.0, vec![1.0, 2.0]), k1: Point::new(1.0, vec![3.0, 2.0]) };
    let base = StencilAssignment::base(2);
    let d = partial_forward_difference(&f, 1, &base, &s).unwrap();
    assert_eq!(d, 4.0);
}

#[test]
fn reversal_plan_stencils() {
    let plan = permutation_stencils(&[1, 0], 1).unwrap();
    let shown: Vec<String> = plan.stages().iter().map(|s| s.to_string()).collect();
    assert_eq!(shown, ["(k,k)", "(k,k+1)", "(k+1,k+1)"]);
    assert_eq!(plan.stencil_for(1).to_string(), "(k,k)");
    assert_eq!(plan.stencil_for(0).to_string(), "(k,k+1)");
    assert_eq!(PermutationPlan::parse("1,0", 1).unwrap(), plan);
}

#[test]
fn exponential_and_logarithm_examples() {
    let s = StepPair { k: Point::new(0.0, vec![0.0]), k1: Point::new(1.0, vec![1.0]) };
    let base = StencilAssignment::base(1);
    let e = parse("exp(x1)", sp(1)).unwrap();
    let d = divided_difference_symbolic(&e, 1, &base).unwrap().expr.eval(&s.two_level()).unwrap();
    assert!((d - (std::f64::consts::E - 1.0)).abs() < 1e-15);
    let s = StepPair { k: Point::new(0.0, vec![1.0]), k1: Point::new(1.0, vec![std::f64::consts::E]) };
    let l = parse("log(x1)", sp(1)).unwrap();
    let d = divided_difference_symbolic(&l, 1, &base).unwrap().expr.eval(&s.two_level()).unwrap();
    assert!((d - 1.0 / (std::f64::consts::E - 1.0)).abs() < 1e-15);
}

#[test]
fn raising_twice_is_rejected() {
    let f = parse("x1", sp(1)).unwrap();
    let raised = StencilAssignment::base(1).raised(1);
    assert!(divided_difference_symbolic(&f, 1, &raised).is_err());
    assert!(PermutationPlan::parse("0,0", 1).is_err());
}
