use proptest::prelude::*;
use smalldomain::basis::{bspline_basis, difference_matrix, difference_penalty, tensor_basis, tensor_penalty, wiggle, MarginSpec};

proptest! {
    #[test]
    fn rows_partition_unity(lo in -50.0f64..50.0, width in 0.5f64..100.0, knots in 1usize..12, degree in 0usize..4, u in prop::collection::vec(0.0f64..=1.0, 1..40)) {
        let spec = MarginSpec::new(lo, lo + width, knots).with_degree(degree).with_penalty_order(0);
        let x: Vec<f64> = u.iter().map(|t| lo + t * width).collect();
        let b = bspline_basis(&x, &spec).unwrap();
        for i in 0..b.nrows() {
            prop_assert!((b.row_sum(i) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_null_space(n in 4usize..12, c0 in -5.0f64..5.0, c1 in -5.0f64..5.0, bump in 0.1f64..3.0, at in 0usize..4) {
        for order in [1usize, 2] {
            let k = difference_penalty(n, order, 1.0).unwrap();
            let poly = nalgebra::DVector::from_fn(n, |i, _| c0 + if order == 2 { c1 * i as f64 } else { 0.0 });
            prop_assert!(poly.dot(&(&k * &poly)).abs() < 1e-9);
            let mut bent = poly.clone();
            bent[at.min(n - 1)] += bump;
            let d = difference_matrix::<f64>(n, order).unwrap();
            let form = bent.dot(&(&k * &bent));
            prop_assert!((form - (&d * &bent).norm_squared()).abs() < 1e-9);
            prop_assert!(form > 0.0);
        }
    }
}

#[test]
fn penalty_examples() {
    let k = difference_penalty(4, 2, 1.0f64).unwrap();
    let t = nalgebra::DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
    assert!(t.dot(&(&k * &t)).abs() < 1e-12);
    let k = difference_penalty(3, 2, 1.0f64).unwrap();
    let t = nalgebra::DVector::from_vec(vec![0.0, 1.0, 0.0]);
    assert!((t.dot(&(&k * &t)) - 4.0).abs() < 1e-12);
    assert!(difference_penalty(4, 2, 0.0).unwrap().iter().all(|&v| v == 0.0));
    assert!(difference_penalty(2, 2, 1.0).is_err());
    let kt = tensor_penalty(3, 4, 2, 1.0, 2.0).unwrap();
    assert_eq!(kt.shape(), (12, 12));
    assert!((&kt - kt.transpose()).abs().max() < 1e-15);
}

#[test]
fn tensor_rows_multiply_margins() {
    let a = bspline_basis(&[0.3f64, 0.7], &MarginSpec::new(0.0, 1.0, 2)).unwrap();
    let b = bspline_basis(&[10.0, 14.0], &MarginSpec::new(10.0, 20.0, 3)).unwrap();
    let t = tensor_basis(&a, &b).unwrap();
    assert_eq!(t.ncols(), a.ncols() * b.ncols());
    let (da, db, dt) = (a.to_dense(), b.to_dense(), t.to_dense());
    for r in 0..2 {
        for i in 0..a.ncols() {
            for j in 0..b.ncols() {
                assert!((dt[(r, i * b.ncols() + j)] - da[(r, i)] * db[(r, j)]).abs() < 1e-15);
            }
        }
        assert!((t.row_sum(r) - 1.0).abs() < 1e-12);
    }
    let short = bspline_basis(&[0.5], &MarginSpec::new(0.0, 1.0, 2)).unwrap();
    assert!(tensor_basis(&short, &b).is_err());
}

#[test]
fn rescaled_year_axis_gives_the_same_basis() {
    // With the knots rescaled along with the data the basis, and hence the
    // penalized fit, is unchanged.
    let spec = MarginSpec::new(2001.0, 2016.0, 8);
    let years: Vec<f64> = (2001..=2016).map(f64::from).collect();
    let tenfold: Vec<f64> = years.iter().map(|y| y * 10.0).collect();
    let a = bspline_basis(&years, &spec).unwrap().to_dense();
    let b = bspline_basis(&tenfold, &spec.scaled(10.0)).unwrap().to_dense();
    assert!((a - b).abs().max() < 1e-8);
}

#[test]
fn wiggle_examples() {
    let line: Vec<f64> = (0..50).map(|i| 3.0 * i as f64 * 0.1 + 2.0).collect();
    assert!(wiggle(&line, 0.1).unwrap().abs() < 1e-9);
    let n = 2001;
    let h = 1.0 / (n - 1) as f64;
    let parabola: Vec<f64> = (0..n).map(|i| (i as f64 * h).powi(2)).collect();
    assert!((wiggle(&parabola, h).unwrap() - 2.0).abs() < 0.04);
    assert!(wiggle(&[1.0, 2.0], 1.0).is_err());
}
