mod common;

use common::preset_exit;
use proptest::prelude::*;
use smalldomain::basis::SmoothSpec;
use smalldomain::cv::{
    bernoulli_elpd, compare, cross_validate_binomial, delta, elpd, gaussian_elpd, heterogeneity_diagnostics, make_folds, within_sample_binomial,
    write_table_csv, CvSettings, FoldDesign, FoldPlan, TableRow,
};
use smalldomain::fit::{fit_complete, fit_direct, fit_estimator, fit_partial, fit_tensor, EstimatorKind, FitOptions};
use smalldomain::panel::aggregate;
use smalldomain::{CellCounts, DomainCell, DomainGrid, TransitionRecord};

fn cell_records(n: usize) -> Vec<DomainCell> {
    vec![DomainCell::new(40, 2005); n]
}

#[test]
fn stratified_fold_examples() {
    let mut sizes = make_folds(&cell_records(6), FoldDesign::StratifiedByCell, 5, 1).unwrap().fold_sizes();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    assert_eq!(sizes, [2, 1, 1, 1, 1]);
    assert_eq!(make_folds(&cell_records(10), FoldDesign::StratifiedByCell, 5, 1).unwrap().fold_sizes(), [2; 5]);
    assert!(make_folds(&cell_records(10), FoldDesign::StratifiedByCell, 1, 1).is_err());
}

#[test]
fn leave_year_out_examples() {
    let recs: Vec<DomainCell> = (2001..=2005).flat_map(|t| (30..35).map(move |a| DomainCell::new(a, t))).collect();
    let plan = make_folds(&recs, FoldDesign::LeaveYearOut, 5, 2).unwrap();
    for f in 0..5 {
        let mut years: Vec<i32> = plan.test_indices(f).iter().map(|&i| recs[i].year).collect();
        years.dedup();
        assert_eq!(years.len(), 1, "fold {f} holds {years:?}");
    }
    assert!(make_folds(&recs, FoldDesign::LeaveYearOut, 6, 2).is_err());
    let ages = make_folds(&recs, FoldDesign::LeaveAgeOut, 5, 2).unwrap();
    assert_eq!(ages.fold_sizes(), [5; 5]);
}

#[test]
fn single_stratum_fold_law_over_many_strata() {
    for s in 0..10_000u64 {
        let n = 1 + (s as usize * 7919) % 37;
        let sizes = make_folds(&cell_records(n), FoldDesign::StratifiedByCell, 5, s).unwrap().fold_sizes();
        let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
        assert!(hi - lo <= 1, "stratum of {n}: {sizes:?}");
    }
}

fn arb_cells() -> impl Strategy<Value = Vec<DomainCell>> {
    prop::collection::vec((25i32..30, 2001i32..2008), 1..300).prop_map(|v| v.into_iter().map(|(a, t)| DomainCell::new(a, t)).collect())
}

proptest! {
    #[test]
    fn folds_partition_records(cells in arb_cells(), k in 2usize..7, seed in 0u64..1000) {
        let plan = make_folds(&cells, FoldDesign::StratifiedByCell, k, seed).unwrap();
        prop_assert_eq!(plan.assignment.len(), cells.len());
        prop_assert!(plan.assignment.iter().all(|&f| f < k));
        let mut seen = vec![0; cells.len()];
        for f in 0..k {
            for i in plan.test_indices(f) {
                seen[i] += 1;
            }
            prop_assert_eq!(plan.test_indices(f).len() + plan.train_indices(f).len(), cells.len());
        }
        prop_assert!(seen.iter().all(|&c| c == 1));

        // Within every stratum the fold sizes differ by at most one.
        let mut strata = std::collections::BTreeMap::<(i32, i32), Vec<usize>>::new();
        for (i, c) in cells.iter().enumerate() {
            strata.entry((c.age, c.year)).or_insert_with(|| vec![0; k])[plan.assignment[i]] += 1;
        }
        for sizes in strata.values() {
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        }
    }

    #[test]
    fn leave_out_keeps_levels_together(cells in arb_cells(), seed in 0u64..1000) {
        let years = cells.iter().map(|c| c.year).collect::<std::collections::BTreeSet<_>>().len();
        match make_folds(&cells, FoldDesign::LeaveYearOut, 3, seed) {
            Ok(plan) => {
                for (i, a) in cells.iter().enumerate() {
                    for (j, b) in cells.iter().enumerate() {
                        if a.year == b.year {
                            prop_assert_eq!(plan.assignment[i], plan.assignment[j]);
                        }
                    }
                }
                let sizes: Vec<usize> = (0..3).map(|f| {
                    plan.test_indices(f).iter().map(|&i| cells[i].year).collect::<std::collections::BTreeSet<_>>().len()
                }).collect();
                prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            }
            Err(_) => prop_assert!(years < 3),
        }
    }
}

#[test]
fn closed_form_elpd_values() {
    assert!((bernoulli_elpd(0.0f64, true) - 0.5f64.ln()).abs() < 1e-15);
    assert!((bernoulli_elpd(0.0f64, false) + 0.6931).abs() < 1e-4);
    assert!((gaussian_elpd(3.0f64, &[3.0], &[0.0]) + 0.9189).abs() < 1e-4);
}

#[test]
fn heterogeneity_examples() {
    let g = DomainGrid::new(30, 31, 2005, 2005).unwrap();
    let counts = CellCounts::from_pairs(g, &[(10, 2), (10, 8)]).unwrap();
    let h = heterogeneity_diagnostics(&fit_direct::<f64>(&counts), &counts).unwrap();
    assert!((h.v_of_e - 1.3863f64.powi(2)).abs() < 1e-3, "{}", h.v_of_e);
    let h = heterogeneity_diagnostics(&fit_complete::<f64>(&counts).unwrap(), &counts).unwrap();
    assert_eq!(h.v_of_e, 0.0);
}

#[test]
fn comparison_is_antisymmetric() {
    let (recs, counts) = preset_exit("white_noise", 1);
    let direct = within_sample_binomial(&fit_direct::<f64>(&counts), &recs, 200, 1).unwrap();
    let pooled = within_sample_binomial(&fit_complete::<f64>(&counts).unwrap(), &recs, 200, 1).unwrap();
    let reports = [direct.clone(), pooled.clone()];
    let table = compare(&reports, "complete").unwrap();
    assert_eq!(table[1].delta, 0.0);
    assert_eq!(table[1].se, 0.0);
    let ab = delta(&direct, &pooled).unwrap();
    let ba = delta(&pooled, &direct).unwrap();
    assert!((ab.delta + ba.delta).abs() < 1e-9);
    assert!((ab.se - ba.se).abs() < 1e-12 * ab.se);
    assert!((direct.total - direct.pointwise.iter().sum::<f64>()).abs() < 1e-6);

    let shorter = within_sample_binomial(&fit_direct::<f64>(&counts), &recs[1..], 200, 1).unwrap();
    assert!(delta(&shorter, &pooled).is_err());
}

#[test]
fn complete_pooling_within_sample_matches_cv() {
    let (recs, _) = preset_exit("smooth_gradient", 2);
    let counts = aggregate(&recs, &smalldomain::simulate::preset("smooth_gradient", 2).unwrap().grid);
    let within = within_sample_binomial(&fit_complete::<f64>(&counts).unwrap(), &recs, 2000, 1).unwrap();
    let plan = make_folds(&recs, FoldDesign::StratifiedByCell, 5, 1).unwrap();
    let cv = cross_validate_binomial::<f64>(&recs, &counts.grid, &EstimatorKind::CompletePool, &plan, &CvSettings::default()).unwrap();
    assert!((within.total - cv.total).abs() < 1e-3 * within.total.abs(), "{} vs {}", within.total, cv.total);
}

#[test]
fn elpd_is_invariant_to_record_order() {
    let (recs, counts) = preset_exit("white_noise", 3);
    let plan = make_folds(&recs, FoldDesign::StratifiedByCell, 5, 4).unwrap();
    let settings = CvSettings { n_draws: 300, ..CvSettings::default() };
    let a = cross_validate_binomial::<f64>(&recs, &counts.grid, &EstimatorKind::PartialPool, &plan, &settings).unwrap();

    let order: Vec<usize> = (0..recs.len()).rev().collect();
    let permuted: Vec<TransitionRecord> = order.iter().map(|&i| recs[i]).collect();
    let plan_p = FoldPlan { assignment: order.iter().map(|&i| plan.assignment[i]).collect(), ..plan.clone() };
    let b = cross_validate_binomial::<f64>(&permuted, &counts.grid, &EstimatorKind::PartialPool, &plan_p, &settings).unwrap();
    assert_eq!(a.total, b.total);
    for (j, &i) in order.iter().enumerate() {
        assert_eq!(a.pointwise[i], b.pointwise[j]);
    }
}

#[test]
fn benchmark_patterns() {
    let (recs, counts) = preset_exit("smooth_gradient", 1);
    let grid = counts.grid;
    let opts = FitOptions::default();
    let tensor_kind = EstimatorKind::TensorSpline(SmoothSpec::tensor(&grid, 8));
    let kinds = [EstimatorKind::Direct, EstimatorKind::CompletePool, EstimatorKind::PartialPool, tensor_kind];

    let plan = make_folds(&recs, FoldDesign::StratifiedByCell, 5, 1).unwrap();
    let settings = CvSettings::default();
    let mut cv = Vec::new();
    let mut within = Vec::new();
    let mut v_of_e = Vec::new();
    for kind in &kinds {
        let est = fit_estimator::<f64>(kind, &counts, &opts).unwrap();
        within.push(within_sample_binomial(&est, &recs, 2000, 1).unwrap().total);
        v_of_e.push(heterogeneity_diagnostics(&est, &counts).unwrap().v_of_e);
        cv.push(cross_validate_binomial::<f64>(&recs, &grid, kind, &plan, &settings).unwrap().total);
    }
    let [direct, complete, partial, tensor] = [0, 1, 2, 3];
    assert!(cv[tensor] > cv[partial] && cv[partial] > cv[complete], "{cv:?}");
    assert!(cv.iter().all(|&c| c >= cv[direct]), "{cv:?}");
    assert!(within.iter().all(|&w| w <= within[direct]), "{within:?}");
    assert!(v_of_e[direct] > v_of_e[tensor] && v_of_e[tensor] > v_of_e[partial] && v_of_e[partial] > 0.0, "{v_of_e:?}");
    assert_eq!(v_of_e[complete], 0.0);

    let rows: Vec<TableRow<f64>> = kinds
        .iter()
        .enumerate()
        .map(|(i, k)| TableRow {
            estimator: k.label().into(),
            elpd_within: Some(within[i]),
            delta_within: Some(within[i] - within[tensor]),
            v_of_e: Some(v_of_e[i]),
            e_of_v: None,
            elpd_cv: cv[i],
            sd: 0.0,
            delta_cv: cv[i] - cv[tensor],
            delta_sd: 0.0,
        })
        .collect();
    let mut buf = Vec::new();
    write_table_csv(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("estimator,elpd_within,delta_within,V_of_E_x1000,E_of_V_x1000,elpd_cv,sd,delta_cv,delta_sd\n"));
    assert_eq!(text.lines().count(), 5);
}

#[test]
fn leave_year_out_partial_pooling_falls_back_to_the_pooled_rate() {
    let (recs, counts) = preset_exit("smooth_gradient", 5);
    let grid = counts.grid;
    let plan = make_folds(&recs, FoldDesign::LeaveYearOut, 5, 1).unwrap();
    let opts = FitOptions::default();
    let spec = SmoothSpec::tensor(&grid, 8);
    let (mut d_partial, mut d_tensor, mut cells) = (0.0, 0.0, 0usize);
    for f in 0..plan.n_folds {
        let train: Vec<TransitionRecord> = plan.train_indices(f).into_iter().map(|i| recs[i]).collect();
        let tc = aggregate(&train, &grid);
        let complete = fit_complete::<f64>(&tc).unwrap();
        let partial = fit_partial::<f64>(&tc, &opts).unwrap();
        let tensor = fit_tensor::<f64>(&tc, &spec, &opts).unwrap();
        let mut held: Vec<usize> = plan.test_indices(f).iter().map(|&i| grid.index_of(recs[i].cell.age, recs[i].cell.year).unwrap()).collect();
        held.sort_unstable();
        held.dedup();
        for i in held {
            let c = complete.point[i].unwrap();
            d_partial += (partial.point[i].unwrap() - c).abs();
            d_tensor += (tensor.point[i].unwrap() - c).abs();
            cells += 1;
        }
    }
    assert!(cells > 0);
    assert!(d_partial < 0.25 * d_tensor, "{d_partial} vs {d_tensor}");

    let settings = CvSettings::default();
    let p = cross_validate_binomial::<f64>(&recs, &grid, &EstimatorKind::PartialPool, &plan, &settings).unwrap();
    let c = cross_validate_binomial::<f64>(&recs, &grid, &EstimatorKind::CompletePool, &plan, &settings).unwrap();
    let d = delta(&p, &c).unwrap();
    assert!(d.delta.abs() <= 2.0 * d.se, "{} ± {}", d.delta, d.se);
}

#[test]
fn weighted_estimator_cannot_be_scored() {
    let (recs, counts) = preset_exit("homogeneous", 1);
    let plan = make_folds(&recs, FoldDesign::StratifiedByCell, 5, 1).unwrap();
    let kind = EstimatorKind::Weighted(vec![0.5; counts.grid.len()]);
    assert!(cross_validate_binomial::<f64>(&recs, &counts.grid, &kind, &plan, &CvSettings::default()).is_err());
    let fits: Vec<_> = (0..5).map(|_| smalldomain::fit::fit_weighted::<f64>(&counts, &[1.0; 640]).unwrap()).collect();
    assert!(elpd(&fits, &plan, &recs, 10, 1).is_err());
}
