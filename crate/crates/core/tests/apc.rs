use num_rational::Ratio;
use proptest::prelude::*;
use smalldomain::grid::{apc_reparameterize, QuadraticApcCoeffs};
use smalldomain::DomainGrid;

type Q = Ratio<i128>;

fn q(n: i64, d: i64) -> Q {
    Ratio::new(n as i128, d as i128)
}

#[test]
fn exact_identity_over_rationals_on_the_default_grid() {
    let c = QuadraticApcCoeffs { alpha: q(3, 2), beta1: q(-7, 3), beta2: q(1, 9), gamma1: q(5, 4), gamma2: q(-2, 7), delta1: q(11, 5), delta2: q(-3, 8) };
    let ap = apc_reparameterize(&c);
    for cell in DomainGrid::hilda().cells() {
        let (a, p, coh) = (q(cell.age as i64, 1), q(cell.year as i64, 1), q(cell.cohort as i64, 1));
        assert_eq!(c.eval(a, p, coh), ap.eval(a, p));
    }
}

#[test]
fn zero_coefficients_stay_zero() {
    let z = QuadraticApcCoeffs { alpha: 0.0, beta1: 0.0, beta2: 0.0, gamma1: 0.0, gamma2: 0.0, delta1: 0.0, delta2: 0.0 };
    let ap = apc_reparameterize(&z);
    assert_eq!([ap.constant, ap.age, ap.period, ap.age2, ap.period2, ap.age_period], [0.0; 6]);
}

fn coeff() -> impl Strategy<Value = f64> {
    -10.0f64..10.0
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn ap_form_matches_apc_form(
        alpha in coeff(), beta1 in coeff(), beta2 in coeff(), gamma1 in coeff(), gamma2 in coeff(), delta1 in coeff(), delta2 in coeff(),
        a in -10.0f64..10.0, p in -10.0f64..10.0,
    ) {
        let c = QuadraticApcCoeffs { alpha, beta1, beta2, gamma1, gamma2, delta1, delta2 };
        let ap = apc_reparameterize(&c);
        prop_assert!((c.eval(a, p, p - a) - ap.eval(a, p)).abs() < 1e-10);
    }
}
