use conservekit::divdiff::{all_permutations, permutation_stencils, StepPair};
use conservekit::expr::Point;
use conservekit::multiplier::{
    analytic_multiplier, check_continuous_conditions, check_discrete_conditions, discrete_multiplier,
    discrete_total_derivative,
};
use conservekit::scheme::{build_conservative_scheme, SchemeOptions};
use conservekit::systems::{self, SystemSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn bundled() -> &'static [SystemSpec] {
    static S: OnceLock<Vec<SystemSpec>> = OnceLock::new();
    S.get_or_init(|| systems::IDS.iter().map(|id| systems::by_id(id, &[]).unwrap()).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn discrete_conditions_hold_for_any_order(which in 0usize..5, perm in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let sys = &bundled()[which];
        let perms = all_permutations(sys.n);
        let plan = permutation_stencils(perm.get(&perms), sys.n).unwrap();
        let scheme = build_conservative_scheme(sys, &SchemeOptions { sigma: Some(plan.clone()), ..Default::default() }).unwrap();
        let dm = discrete_multiplier(&sys.psi, &plan).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sys.random_step_pair(&mut rng);
        let f = scheme.ftau_at(&s).unwrap();
        let r = check_discrete_conditions(&dm, &sys.psi, &f, &s).unwrap();
        prop_assert!(r.within(1e-12), "{}: {:?}", sys.id, r);
    }

    #[test]
    fn continuous_conditions_hold(which in 0usize..5, seed in any::<u64>()) {
        let sys = &bundled()[which];
        let lam = analytic_multiplier(&sys.psi, sys.n);
        let p = sys.random_point(&mut ChaCha8Rng::seed_from_u64(seed));
        let r = check_continuous_conditions(&lam, &sys.psi, &sys.f, &p).unwrap();
        prop_assert!(r.within(1e-10), "{}: {:?}", sys.id, r);
    }

    #[test]
    fn zero_total_difference_iff_equal_values(which in 0usize..5, seed in any::<u64>()) {
        let sys = &bundled()[which];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = sys.random_step_pair(&mut rng);
        let d = discrete_total_derivative(&sys.psi, &s).unwrap();
        for (j, p) in sys.psi.iter().enumerate() {
            let same = p.eval(&s.k.values()).unwrap() == p.eval(&s.k1.values()).unwrap();
            prop_assert_eq!(d[j] == 0.0, same);
        }
        // Freezing the state and time makes every difference vanish.
        let frozen = StepPair { k: s.k.clone(), k1: Point::new(s.k.t + s.dt(), s.k.x.clone()) };
        if sys.psi.iter().all(|p| !p.depends_on(0)) {
            prop_assert!(discrete_total_derivative(&sys.psi, &frozen).unwrap().iter().all(|v| *v == 0.0));
        }
    }
}

#[test]
fn rigid_body_multiplier_rows() {
    let sys = systems::by_id("rigid-body", &[]).unwrap();
    let lam = analytic_multiplier(&sys.psi, 3).eval(&[0.0, 1.0, 2.0, 3.0]).unwrap();
    // E = sum x_i^2 / I_i, L = sum x_i^2.
    assert_eq!(lam.row(0).iter().copied().collect::<Vec<_>>(), vec![2.0, 2.0, 2.0]);
    assert_eq!(lam.row(1).iter().copied().collect::<Vec<_>>(), vec![2.0, 4.0, 6.0]);
}

#[test]
fn zero_time_step_is_rejected() {
    let sys = systems::by_id("lv2", &[]).unwrap();
    let p = Point::new(0.0, vec![1.0, 2.0]);
    let s = StepPair { k: p.clone(), k1: p };
    assert!(discrete_total_derivative(&sys.psi, &s).is_err());
}
