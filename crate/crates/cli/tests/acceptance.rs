//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. Runs as a plain binary (`harness = false`) so the report is
//! always printed.

use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smalldomain::basis::SmoothSpec;
use smalldomain::cv::{
    cross_validate_binomial, delta, heterogeneity_diagnostics, make_folds, within_sample_binomial, CvSettings, FoldDesign,
};
use smalldomain::fit::{
    fit_binomial, fit_complete, fit_direct, fit_estimator, fit_mh, fit_partial, fit_tensor, mh_sampler, stabilized_logit, BinomialStructure,
    EstimatorKind, FitOptions, MhForm, MhModelSpec, Pooling,
};
use smalldomain::gcomp::{effect_surface, equilibrium_shift, CounterfactualQuery, YPrevPolicy};
use smalldomain::grid::{apc_reparameterize, QuadraticApcCoeffs};
use smalldomain::panel::aggregate;
use smalldomain::scalar::sigmoid;
use smalldomain::simulate::{generate, preset};
use smalldomain::{CellCounts, Direction, DomainCell, DomainGrid, ElpdReport, TransitionRecord};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Adds a runtime limit to an outcome.
fn within(o: Outcome, elapsed: Duration, limit: Duration) -> Outcome {
    let fast = elapsed <= limit;
    outcome(o.pass && fast, format!("{}; {:.1} s (limit {} s)", o.detail, elapsed.as_secs_f64(), limit.as_secs()))
}

fn exit_data(name: &str, seed: u64) -> (Vec<TransitionRecord>, CellCounts) {
    let spec = preset(name, seed).unwrap();
    let recs = generate(&spec).unwrap().panel.extract_transitions(Direction::Exit, &spec.grid);
    let counts = aggregate(&recs, &spec.grid);
    (recs, counts)
}

fn ladder(grid: &DomainGrid) -> [EstimatorKind<f64>; 4] {
    [EstimatorKind::Direct, EstimatorKind::CompletePool, EstimatorKind::PartialPool, EstimatorKind::TensorSpline(SmoothSpec::tensor(grid, 8))]
}
const DIRECT: usize = 0;
const COMPLETE: usize = 1;
const PARTIAL: usize = 2;
const TENSOR: usize = 3;

fn cv_reports(recs: &[TransitionRecord], grid: &DomainGrid, design: FoldDesign, seed: u64) -> Vec<ElpdReport> {
    let plan = make_folds(recs, design, 5, seed).unwrap();
    let settings = CvSettings { n_draws: 2000, seed, fit: FitOptions::default() };
    ladder(grid).iter().map(|k| cross_validate_binomial::<f64>(recs, grid, k, &plan, &settings).unwrap()).collect()
}

/// Exact posterior of a binomial proportion under a flat logit prior, by
/// trapezoid quadrature on the logit scale: `(mean, q025, q975)`.
fn quadrature(k: u64, n: u64) -> (f64, f64, f64) {
    let (kf, nf) = (k as f64, n as f64);
    let p = kf / nf;
    let mode = (p / (1.0 - p)).ln();
    let sd = 1.0 / (nf * p * (1.0 - p)).sqrt();
    let m = 40_000;
    let (lo, h) = (mode - 15.0 * sd, 30.0 * sd / m as f64);
    let log_post = |e: f64| kf * e - nf * e.exp().ln_1p();
    let peak = log_post(mode);
    let etas: Vec<f64> = (0..=m).map(|i| lo + h * i as f64).collect();
    let dens: Vec<f64> = etas.iter().map(|&e| (log_post(e) - peak).exp()).collect();
    let mut cdf = vec![0.0; m + 1];
    let mut mean = 0.0;
    for i in 1..=m {
        cdf[i] = cdf[i - 1] + 0.5 * h * (dens[i] + dens[i - 1]);
        mean += 0.5 * h * (dens[i] * sigmoid(etas[i]) + dens[i - 1] * sigmoid(etas[i - 1]));
    }
    let z = cdf[m];
    let quantile = |q: f64| {
        let i = cdf.partition_point(|&c| c < q * z).clamp(1, m);
        let t = (q * z - cdf[i - 1]) / (cdf[i] - cdf[i - 1]);
        sigmoid(etas[i - 1] + t * h)
    };
    (mean / z, quantile(0.025), quantile(0.975))
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let grid = DomainGrid::new(30, 39, 2001, 2010).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pairs: Vec<(u64, u64)> = (0..grid.len())
        .map(|_| {
            let n = rng.random_range(1..=60u64);
            let p = rng.random_range(0.15..0.85);
            let k = (0..n).filter(|_| rng.random_bool(p)).count() as u64;
            (n, k)
        })
        .collect();
    let counts = CellCounts::from_pairs(grid, &pairs).unwrap();
    let spline = fit_tensor::<f64>(&counts, &SmoothSpec::saturated(&grid), &FitOptions::default()).unwrap();
    let direct = fit_direct::<f64>(&counts);
    let worst = (0..grid.len()).map(|i| (spline.point[i].unwrap() - direct.point[i].unwrap()).abs()).fold(0.0, f64::max);
    let boundary = pairs.iter().filter(|(n, k)| *k == 0 || k == n).count();
    within(
        outcome(worst < 1e-8, format!("max |p_spline - p_direct| = {worst:.2e} over 100 cells ({boundary} with k in {{0, n}})")),
        start.elapsed(),
        Duration::from_secs(5),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let grid = DomainGrid::new(40, 40, 2005, 2005).unwrap();
    let mut worst: f64 = 0.0;
    let mut worst_sampler: f64 = 0.0;
    for n in [20u64, 200, 2000] {
        let k = (0.46 * n as f64).round() as u64;
        let counts = CellCounts::from_pairs(grid, &[(n, k)]).unwrap();
        let (mean, q025, q975) = quadrature(k, n);
        let post = fit_complete::<f64>(&counts).unwrap().logit[0].unwrap();
        let (lo, hi) = post.interval(1.959963984540054);
        worst = worst.max((post.probability_mean() - mean).abs()).max((lo - q025).abs()).max((hi - q975).abs());

        let model = fit_binomial::<f64>(&counts, &BinomialStructure::Complete, &FitOptions::default()).unwrap();
        let out = mh_sampler(&model, 60_000, n).unwrap();
        let sampled = out.draws.row(0).iter().map(|&e| sigmoid(e)).sum::<f64>() / out.draws.ncols() as f64;
        worst_sampler = worst_sampler.max((sampled - mean).abs());
    }
    within(
        outcome(
            worst < 0.01 && worst_sampler < 0.01,
            format!("n in {{20, 200, 2000}}, k = round(0.46 n): Laplace max error {worst:.4}, sampler mean max error {worst_sampler:.4}"),
        ),
        start.elapsed(),
        Duration::from_secs(30),
    )
}

fn criterion_3() -> Outcome {
    let mut cells = 0usize;
    let mut violations = 0usize;
    for seed in 1..=20 {
        let (_, counts) = exit_data("white_noise", seed);
        let est = fit_partial::<f64>(&counts, &FitOptions::default()).unwrap();
        let pooled = est.fitted_model().unwrap().mode()[0];
        for i in counts.populated() {
            let direct = stabilized_logit::<f64>(counts.k[i], counts.n[i]).mean;
            let partial = est.logit[i].unwrap().mean;
            let (lo, hi) = (direct.min(pooled), direct.max(pooled));
            cells += 1;
            if partial < lo - 1e-6 || partial > hi + 1e-6 {
                violations += 1;
            }
        }
    }
    outcome(violations == 0, format!("{violations} violations in {cells} populated cells over 20 white_noise panels"))
}

fn criterion_4() -> Outcome {
    let start = Instant::now();
    let (mut cv_ok, mut ve_ok, mut within_ok) = (0, 0, 0);
    for seed in 1..=10 {
        let (recs, counts) = exit_data("smooth_gradient", seed);
        let grid = counts.grid;
        let cv: Vec<f64> = cv_reports(&recs, &grid, FoldDesign::StratifiedByCell, seed).iter().map(|r| r.total).collect();
        let fits: Vec<_> = ladder(&grid).iter().map(|k| fit_estimator::<f64>(k, &counts, &FitOptions::default()).unwrap()).collect();
        let ve: Vec<f64> = fits.iter().map(|f| heterogeneity_diagnostics(f, &counts).unwrap().v_of_e).collect();
        let ws: Vec<f64> = fits.iter().map(|f| within_sample_binomial(f, &recs, 2000, seed).unwrap().total).collect();
        if cv[TENSOR] > cv[PARTIAL] && cv[PARTIAL] > cv[COMPLETE] && cv[COMPLETE] > cv[DIRECT] {
            cv_ok += 1;
        }
        if ve[DIRECT] > ve[TENSOR] && ve[TENSOR] > ve[PARTIAL] && ve[PARTIAL] > ve[COMPLETE] && ve[COMPLETE] == 0.0 {
            ve_ok += 1;
        }
        if ws.iter().all(|&w| w <= ws[DIRECT]) {
            within_ok += 1;
        }
    }
    within(
        outcome(
            cv_ok >= 8 && ve_ok >= 8 && within_ok == 10,
            format!("CV ordering {cv_ok}/10, V_of_E ordering {ve_ok}/10, direct best within-sample {within_ok}/10"),
        ),
        start.elapsed(),
        Duration::from_secs(600),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (mut partial_tied, mut tensor_better) = (0, 0);
    for seed in 1..=10 {
        let (recs, counts) = exit_data("smooth_gradient", seed);
        let r = cv_reports(&recs, &counts.grid, FoldDesign::LeaveYearOut, seed);
        let p = delta(&r[PARTIAL], &r[COMPLETE]).unwrap();
        let t = delta(&r[TENSOR], &r[COMPLETE]).unwrap();
        if p.delta.abs() <= 2.0 * p.se {
            partial_tied += 1;
        }
        if t.delta > 2.0 * t.se {
            tensor_better += 1;
        }
    }
    within(
        outcome(
            partial_tied >= 8 && tensor_better >= 8,
            format!("|delta(partial, complete)| <= 2 SE in {partial_tied}/10, delta(tensor, complete) > 2 SE in {tensor_better}/10"),
        ),
        start.elapsed(),
        Duration::from_secs(600),
    )
}

fn criterion_6() -> Outcome {
    let mut ok = 0;
    for seed in 1..=10 {
        let (recs, counts) = exit_data("homogeneous", seed);
        let r = cv_reports(&recs, &counts.grid, FoldDesign::StratifiedByCell, seed);
        let top = (0..r.len()).fold(0, |b, i| if r[i].total > r[b].total { i } else { b });
        let d = delta(&r[COMPLETE], &r[top]).unwrap();
        if top == COMPLETE || d.delta.abs() <= 2.0 * d.se {
            ok += 1;
        }
    }
    outcome(ok >= 8, format!("complete pooling best or within 2 SE of the best in {ok}/10"))
}

fn criterion_7() -> Outcome {
    let shift = equilibrium_shift(-0.33f64, -2.39).unwrap();
    let exact = format!("{shift:.3}") == "-7.242";
    let mut ok = 0;
    let mut worst = (0.0f64, 0.0f64);
    for seed in 1..=10 {
        let spec = preset("has_effect_modified", seed).unwrap();
        let sim = generate(&spec).unwrap();
        let diffs = sim.panel.extract_diffs(&spec.grid);
        let m = fit_mh::<f64>(&diffs, &spec.grid, &MhModelSpec::new(MhForm::HasModified, Pooling::Tensor), &FitOptions::default()).unwrap();
        let s = effect_surface(&CounterfactualQuery::new(&m, YPrevPolicy::Fixed(75.0)).with_draws(200, seed)).unwrap();
        let avg_err = (s.average.mean - sim.truth.average_effect()).abs();
        let rmse = s.rmse(&sim.truth.effect).unwrap();
        worst = (worst.0.max(avg_err), worst.1.max(rmse));
        if avg_err < 0.5 && rmse < 0.5 {
            ok += 1;
        }
    }
    outcome(
        exact && ok >= 8,
        format!("equilibrium_shift(-0.33, -2.39) = {shift:.3}; recovery in {ok}/10 (worst average error {:.3}, worst RMSE {:.3})", worst.0, worst.1),
    )
}

fn criterion_8() -> Outcome {
    let spec = preset("has_effect_modified", 3).unwrap();
    let diffs = generate(&spec).unwrap().panel.extract_diffs(&spec.grid);
    let mut widest: f64 = 0.0;
    let mut identical = true;
    for pooling in [Pooling::Complete, Pooling::Partial, Pooling::Tensor] {
        let m = fit_mh::<f64>(&diffs, &spec.grid, &MhModelSpec::new(MhForm::HasMain, pooling), &FitOptions::default()).unwrap();
        let a = effect_surface(&CounterfactualQuery::new(&m, YPrevPolicy::Fixed(75.0)).with_draws(500, 1)).unwrap();
        let b = effect_surface(&CounterfactualQuery::new(&m, YPrevPolicy::Fixed(50.0)).with_draws(500, 1)).unwrap();
        let (lo, hi) = a.range();
        widest = widest.max(hi - lo);
        identical &= a.cells == b.cells && a.average == b.average;
    }
    let m = fit_mh::<f64>(&diffs, &spec.grid, &MhModelSpec::new(MhForm::HasModified, Pooling::Tensor), &FitOptions::default()).unwrap();
    let a = effect_surface(&CounterfactualQuery::new(&m, YPrevPolicy::Fixed(75.0)).with_draws(500, 1)).unwrap();
    let b = effect_surface(&CounterfactualQuery::new(&m, YPrevPolicy::Fixed(50.0)).with_draws(500, 1)).unwrap();
    identical &= a.cells == b.cells;
    outcome(
        widest < 1e-8 && identical,
        format!("has_main max - min = {widest:.1e} over three poolings; fixed(75) vs fixed(50) bit-identical: {identical}"),
    )
}

fn criterion_9() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    let mut exact = true;
    for _ in 0..10_000 {
        let mut c = || rng.random_range(-10.0f64..10.0);
        let coeffs = QuadraticApcCoeffs { alpha: c(), beta1: c(), beta2: c(), gamma1: c(), gamma2: c(), delta1: c(), delta2: c() };
        let (a, p) = (c(), c());
        worst = worst.max((coeffs.eval(a, p, p - a) - apc_reparameterize(&coeffs).eval(a, p)).abs());

        let mut r = || Ratio::new(rng.random_range(-1000i128..=1000), rng.random_range(1i128..=50));
        let q = QuadraticApcCoeffs { alpha: r(), beta1: r(), beta2: r(), gamma1: r(), gamma2: r(), delta1: r(), delta2: r() };
        let age = Ratio::from_integer(rng.random_range(25i128..=64));
        let year = Ratio::from_integer(rng.random_range(2001i128..=2016));
        exact &= q.eval(age, year, year - age) == apc_reparameterize(&q).eval(age, year);
    }
    outcome(worst < 1e-10 && exact, format!("10^4 pairs: max float discrepancy {worst:.1e}; exact over rationals on the default grid: {exact}"))
}

fn run_cli(args: &[&str], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_smalldomain")).args(args).arg("--out-dir").arg(out).output().map(|o| o.status.success()).unwrap_or(false)
}

fn criterion_10() -> Outcome {
    let dir = tempfile::TempDir::new().unwrap();
    let panel = dir.path().join("sim/panel.csv");
    let panel_arg = panel.to_str().unwrap().to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["simulate", "--preset", "has_effect_modified", "--seed", "21"],
        vec!["ingest", "--input", &panel_arg],
        vec!["fit", "--input", &panel_arg, "--seed", "21", "--estimators", "direct,complete,weighted,kernel,partial,tensor"],
        vec!["cv", "--input", &panel_arg, "--seed", "21"],
        vec!["gcomp", "--input", &panel_arg, "--seed", "21"],
        vec!["forecast", "--input", &panel_arg, "--seed", "21", "--horizon", "4"],
    ];
    if !run_cli(&commands[0], &dir.path().join("sim")) {
        return outcome(false, "simulate failed");
    }
    let mut compared = 0;
    for (i, args) in commands.iter().enumerate() {
        let (a, b) = (dir.path().join(format!("{i}a")), dir.path().join(format!("{i}b")));
        if !run_cli(args, &a) || !run_cli(args, &b) {
            return outcome(false, format!("{} failed", args[0]));
        }
        let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name().to_string_lossy().into_owned()).collect();
        names.retain(|n| n.ends_with(".csv") || n.ends_with(".svg"));
        for name in names {
            if std::fs::read(a.join(&name)).unwrap() != std::fs::read(b.join(&name)).unwrap() {
                return outcome(false, format!("{} output {name} differs between reruns", args[0]));
            }
            compared += 1;
        }
    }
    outcome(compared > 0, format!("{compared} CSV and SVG outputs of six commands byte-identical on rerun"))
}

fn criterion_11() -> Outcome {
    let stratum = |n: usize, age: i32| vec![DomainCell::new(age, 2005); n];
    let mut sizes = make_folds(&stratum(6, 40), FoldDesign::StratifiedByCell, 5, 1).unwrap().fold_sizes();
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    let example = sizes == [2, 1, 1, 1, 1];

    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut bad = 0;
    for trial in 0..10_000u64 {
        let n_strata = rng.random_range(1..=4);
        let records: Vec<DomainCell> = (0..n_strata).flat_map(|s| stratum(rng.random_range(1..=60), 30 + s)).collect();
        let plan = make_folds(&records, FoldDesign::StratifiedByCell, 5, trial).unwrap();
        for s in 0..n_strata {
            let mut per_fold = [0usize; 5];
            for (r, &f) in records.iter().zip(&plan.assignment) {
                if r.age == 30 + s {
                    per_fold[f] += 1;
                }
            }
            if per_fold.iter().max().unwrap() - per_fold.iter().min().unwrap() > 1 {
                bad += 1;
            }
        }
    }
    outcome(example && bad == 0, format!("6-record stratum gives {sizes:?}; {bad} unbalanced strata in 10^4 random allocations"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("saturated spline equals direct", criterion_1),
        ("closed-form oracles", criterion_2),
        ("shrinkage ordering", criterion_3),
        ("stratified CV pattern on smooth_gradient", criterion_4),
        ("leave-year-out pattern on smooth_gradient", criterion_5),
        ("homogeneous preset favours complete pooling", criterion_6),
        ("equilibrium shift and effect recovery", criterion_7),
        ("effect constancy and policy invariance", criterion_8),
        ("APC identity", criterion_9),
        ("CLI determinism", criterion_10),
        ("fold law", criterion_11),
    ];
    let filter: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        if filter.is_some_and(|k| k != i + 1) {
            continue;
        }
        let start = Instant::now();
        let o = f();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} ({}) [{:.1} s]",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            name,
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
