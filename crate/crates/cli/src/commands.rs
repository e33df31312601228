//! The six batch commands.

use crate::args::{Command, CvArgs, DataArgs, FitArgs, ForecastArgs, GcompArgs, IngestArgs, SimulateArgs};
use crate::error::{CliError, Result};
use crate::output::{Artifact, Outputs};
use crate::svg;
use smalldomain::basis::SmoothSpec;
use smalldomain::cv::{
    cross_validate_binomial, delta, heterogeneity_diagnostics, make_folds, within_sample_binomial, write_table_csv, CvSettings, FoldDesign, TableRow,
};
use smalldomain::fit::{estimates_from_model, fit_binomial, fit_estimator, fit_mh, BinomialStructure, CellEstimates, EstimatorKind, FitOptions, MhForm, MhModelSpec, Pooling};
use smalldomain::gcomp::{counterfactual_predict, effect_surface, CounterfactualQuery, Summary, YPrevPolicy};
use smalldomain::panel::{aggregate, Thresholds};
use smalldomain::simulate::{generate, preset};
use smalldomain::{CellCounts, Direction, DomainGrid, Panel};
use std::path::Path;

/// Header line stamped on every forecast output.
pub const FORECAST_CAVEAT: &str =
    "caveat: these smoothing models are not designed for forecasting; intervals widen quickly with the horizon and the extrapolated trend is an assumption";

/// Ages drawn in age-slice and fan plots.
pub const SLICE_AGES: [i32; 4] = [30, 40, 50, 60];

pub fn run(command: &Command) -> Result<Vec<Artifact>> {
    match command {
        Command::Simulate(a) => simulate(a),
        Command::Ingest(a) => ingest(a),
        Command::Fit(a) => fit(a),
        Command::Cv(a) => cv(a),
        Command::Gcomp(a) => gcomp(a),
        Command::Forecast(a) => forecast(a),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })
}

/// Grid spanning the observed years and the ages at which transitions are
/// observed (the later record of consecutive-year pairs).
fn infer_grid(panel: &Panel) -> Result<DomainGrid> {
    let recs = panel.records();
    let later_ages: Vec<i32> = recs.windows(2).filter(|w| w[0].person_id == w[1].person_id && w[1].year == w[0].year + 1).map(|w| w[1].age).collect();
    let (Some(&a0), Some(&a1)) = (later_ages.iter().min(), later_ages.iter().max()) else {
        return Err(smalldomain::Error::EmptyData("the panel has no consecutive-year record pairs".into()).into());
    };
    let y0 = recs.iter().map(|r| r.year).min().expect("records exist");
    let y1 = recs.iter().map(|r| r.year).max().expect("records exist");
    Ok(DomainGrid::new(a0, a1, y0, y1)?)
}

fn read_panel(input: &Path, thresholds: Option<&Path>) -> Result<(Panel, smalldomain::panel::IngestReport)> {
    let t = match thresholds {
        Some(p) => Some(Thresholds::read_csv(read_file(p)?.as_slice())?),
        None => None,
    };
    Ok(Panel::read_csv(read_file(input)?.as_slice(), t.as_ref())?)
}

fn load(data: &DataArgs) -> Result<(Panel, DomainGrid)> {
    match (&data.input, &data.preset) {
        (Some(input), None) => {
            let (panel, _) = read_panel(input, data.thresholds.as_deref())?;
            let grid = infer_grid(&panel)?;
            Ok((panel, grid))
        }
        (None, Some(name)) => {
            let spec = preset(name, data.seed)?;
            Ok((generate(&spec)?.panel, spec.grid))
        }
        (Some(_), Some(_)) => Err(CliError::Config("give either --input or --preset, not both".into())),
        (None, None) => Err(CliError::Config("a panel is needed: pass --input or --preset".into())),
    }
}

fn direction(s: &str) -> Result<Direction> {
    Direction::parse(s).ok_or_else(|| CliError::Config(format!("unknown direction {s:?}; expected entry or exit")))
}

fn check_draws(draws: usize) -> Result<()> {
    if draws == 0 {
        return Err(CliError::Config("--draws must be positive".into()));
    }
    Ok(())
}

/// Shrinkage weight of each cell on the pooled estimate, `n̄ / (n̄ + n)`,
/// with `n̄` the mean at-risk count of populated cells.
fn size_weights(counts: &CellCounts) -> Vec<f64> {
    let populated: Vec<u64> = counts.n.iter().copied().filter(|&n| n > 0).collect();
    let nbar = populated.iter().sum::<u64>() as f64 / populated.len().max(1) as f64;
    counts.n.iter().map(|&n| if n == 0 { 1.0 } else { nbar / (nbar + n as f64) }).collect()
}

/// Parses a comma-separated estimator list.
pub fn parse_estimators(list: &str, counts: &CellCounts, knots: usize) -> Result<Vec<EstimatorKind<f64>>> {
    let kinds: Vec<EstimatorKind<f64>> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|name| match name {
            "direct" => Ok(EstimatorKind::Direct),
            "complete" => Ok(EstimatorKind::CompletePool),
            "weighted" => Ok(EstimatorKind::Weighted(size_weights(counts))),
            "kernel" => Ok(EstimatorKind::NaiveKernel { half_width: 1 }),
            "partial" => Ok(EstimatorKind::PartialPool),
            "tensor" => Ok(EstimatorKind::TensorSpline(SmoothSpec::tensor(&counts.grid, knots))),
            other => Err(CliError::Config(format!("unknown estimator {other:?}"))),
        })
        .collect::<Result<_>>()?;
    if kinds.is_empty() {
        return Err(CliError::Config("no estimators given".into()));
    }
    Ok(kinds)
}

fn write_counts_csv(counts: &CellCounts, out: &mut Vec<u8>) -> smalldomain::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["age", "year", "n", "k"])?;
    for (i, c) in counts.grid.cells().iter().enumerate() {
        w.write_record([c.age.to_string(), c.year.to_string(), counts.n[i].to_string(), counts.k[i].to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn at_risk_heatmap(counts: &CellCounts, what: &str) -> String {
    let values: Vec<Option<f64>> = counts.n.iter().map(|&n| (n > 0).then_some(n as f64)).collect();
    svg::heatmap(&counts.grid, &values, &format!("At-risk records for {what}"), "records")
}

fn simulate(a: &SimulateArgs) -> Result<Vec<Artifact>> {
    let spec = preset(&a.preset, a.seed)?;
    let sim = generate(&spec)?;
    let mut out = Outputs::create(&a.out_dir)?;
    out.write_with("panel.csv", |b| sim.panel.write_csv(b))?;
    out.write_with("truth_transitions.csv", |b| sim.truth.write_transitions_csv(b))?;
    out.write_with("truth_effects.csv", |b| sim.truth.write_effects_csv(b))?;
    let counts = aggregate(&sim.panel.extract_transitions(Direction::Exit, &spec.grid), &spec.grid);
    out.write("at_risk_exit.svg", at_risk_heatmap(&counts, "exit from HAS"))?;
    out.finish("simulate", a, Some(a.seed))
}

fn ingest(a: &IngestArgs) -> Result<Vec<Artifact>> {
    let (panel, mut report) = read_panel(&a.input, a.thresholds.as_deref())?;
    let grid = infer_grid(&panel)?;
    panel.summarize(&grid, &mut report);
    let mut out = Outputs::create(&a.out_dir)?;
    out.write_with("ingest_report.csv", |b| report.write_csv(b))?;
    for (dir, name) in [(Direction::Exit, "exit"), (Direction::Entry, "entry")] {
        let counts = aggregate(&panel.extract_transitions(dir, &grid), &grid);
        out.write_with(&format!("counts_{name}.csv"), |b| write_counts_csv(&counts, b))?;
        out.write(&format!("at_risk_{name}.svg"), at_risk_heatmap(&counts, &format!("{name} transitions")))?;
    }
    out.finish("ingest", a, None)
}

fn slice_series(est: &CellEstimates<f64>, summaries: &[Option<smalldomain::fit::CellSummary<f64>>]) -> Vec<svg::Series> {
    let grid = est.grid;
    SLICE_AGES
        .iter()
        .filter(|&&age| (grid.age_min..=grid.age_max).contains(&age))
        .map(|&age| svg::Series {
            label: format!("age {age}"),
            points: grid
                .years()
                .filter_map(|year| {
                    let s = summaries[grid.index_of(age, year)?]?;
                    Some((year as f64, s.mean, s.q025.zip(s.q975)))
                })
                .collect(),
        })
        .collect()
}

fn fit(a: &FitArgs) -> Result<Vec<Artifact>> {
    check_draws(a.draws)?;
    let dir = direction(&a.direction)?;
    let (panel, grid) = load(&a.data)?;
    let counts = aggregate(&panel.extract_transitions(dir, &grid), &grid);
    let mut kinds = parse_estimators(&a.estimators, &counts, a.knots)?;
    let mut seen = std::collections::HashSet::new();
    kinds.retain(|k| seen.insert(k.label()));
    let seed = a.data.seed;
    let mut out = Outputs::create(&a.data.out_dir)?;
    for kind in &kinds {
        let est = fit_estimator(kind, &counts, &FitOptions::default())?;
        let label = kind.label();
        out.write_with(&format!("estimates_{label}.csv"), |b| est.write_csv(b, a.draws, seed))?;
        let summaries = est.summaries(a.draws, seed);
        let means: Vec<Option<f64>> = summaries.iter().map(|s| s.map(|s| s.mean)).collect();
        let title = format!("Probability of {} ({label})", a.direction);
        out.write(&format!("heatmap_{label}.svg"), svg::heatmap(&grid, &means, &title, "probability"))?;
        let plot = svg::interval_plot(&slice_series(&est, &summaries), &format!("{title} by year, selected ages"), "year", "probability", None);
        out.write(&format!("age_slices_{label}.svg"), plot)?;
    }
    out.finish("fit", a, Some(seed))
}

fn cv(a: &CvArgs) -> Result<Vec<Artifact>> {
    check_draws(a.draws)?;
    let dir = direction(&a.direction)?;
    let design = FoldDesign::parse(&a.fold_design).ok_or_else(|| CliError::Config(format!("unknown fold design {:?}", a.fold_design)))?;
    let (panel, grid) = load(&a.data)?;
    let records = panel.extract_transitions(dir, &grid);
    let counts = aggregate(&records, &grid);
    let kinds = parse_estimators(&a.estimators, &counts, a.knots)?;
    if kinds.len() < 2 {
        return Err(CliError::Config("cross-validation compares at least two estimators".into()));
    }
    if let Some(k) = kinds.iter().find(|k| matches!(k, EstimatorKind::Weighted(_))) {
        return Err(CliError::Config(format!("the {} estimator has no posterior and cannot be scored", k.label())));
    }
    let seed = a.data.seed;
    let plan = make_folds(&records, design, a.folds, seed)?;
    let settings = CvSettings { n_draws: a.draws, seed, fit: FitOptions::default() };

    let mut within = Vec::new();
    let mut held_out = Vec::new();
    let mut hetero = Vec::new();
    for kind in &kinds {
        let est = fit_estimator(kind, &counts, &settings.fit)?;
        within.push(within_sample_binomial(&est, &records, a.draws, seed)?);
        hetero.push(heterogeneity_diagnostics(&est, &counts).ok());
        held_out.push(cross_validate_binomial(&records, &grid, kind, &plan, &settings)?);
    }
    let best = |reports: &[smalldomain::ElpdReport]| {
        (0..reports.len()).fold(0, |b, i| if reports[i].total > reports[b].total { i } else { b })
    };
    let (best_cv, best_within) = (best(&held_out), best(&within));
    let rows = kinds
        .iter()
        .enumerate()
        .map(|(i, kind)| {
            let d_cv = delta(&held_out[i], &held_out[best_cv])?;
            let d_within = delta(&within[i], &within[best_within])?;
            Ok(TableRow {
                estimator: kind.label().to_string(),
                elpd_within: Some(within[i].total),
                delta_within: Some(d_within.delta),
                v_of_e: hetero[i].map(|h| h.v_of_e),
                e_of_v: hetero[i].map(|h| h.e_of_v),
                elpd_cv: held_out[i].total,
                sd: held_out[i].se,
                delta_cv: d_cv.delta,
                delta_sd: d_cv.se,
            })
        })
        .collect::<smalldomain::Result<Vec<_>>>()?;
    let mut out = Outputs::create(&a.data.out_dir)?;
    out.write_with("cv_table.csv", |b| write_table_csv(&rows, b))?;
    out.finish("cv", a, Some(seed))
}

fn write_summary_csv(grid: &DomainGrid, cells: &[Summary<f64>], header: &str, out: &mut Vec<u8>) -> smalldomain::Result<()> {
    use std::io::Write;
    for line in header.lines() {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["age", "year", "mean", "q025", "q975"])?;
    for (i, c) in cells.iter().enumerate() {
        let cell = grid.cell(i);
        w.write_record([
            cell.age.to_string(),
            cell.year.to_string(),
            format!("{:.6}", c.mean),
            format!("{:.6}", c.q025),
            format!("{:.6}", c.q975),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn gcomp(a: &GcompArgs) -> Result<Vec<Artifact>> {
    check_draws(a.draws)?;
    let pooling = match a.estimators.trim() {
        "complete" => Pooling::Complete,
        "partial" => Pooling::Partial,
        "tensor" => Pooling::Tensor,
        other => return Err(CliError::Config(format!("g-computation takes one of complete, partial, tensor; got {other:?}"))),
    };
    let form = match a.form.as_str() {
        "baseline" => MhForm::Baseline,
        "has_main" => MhForm::HasMain,
        "has_modified" => MhForm::HasModified,
        other => return Err(CliError::Config(format!("unknown model form {other:?}"))),
    };
    if form == MhForm::Baseline {
        return Err(CliError::Config("the baseline model has no HAS term, so it has no effect to compute".into()));
    }
    let (panel, grid) = load(&a.data)?;
    let diffs = panel.extract_diffs(&grid);
    let spec = MhModelSpec { knots: a.knots, ..MhModelSpec::new(form, pooling) };
    spec.validate()?;
    let model = fit_mh::<f64>(&diffs, &grid, &spec, &FitOptions::default())?;
    let seed = a.data.seed;
    let q = CounterfactualQuery::new(&model, YPrevPolicy::Fixed(a.y_prev)).with_records(&diffs).with_draws(a.draws, seed);
    let effect = effect_surface(&q)?;
    let arms = counterfactual_predict(&q)?;

    let mut out = Outputs::create(&a.data.out_dir)?;
    out.write_with("effect.csv", |b| effect.write_csv(b))?;
    out.write_with("exposed.csv", |b| write_summary_csv(&grid, &arms.exposed, &effect.manifest, b))?;
    out.write_with("unexposed.csv", |b| write_summary_csv(&grid, &arms.unexposed, &effect.manifest, b))?;
    let means = |cells: &[Summary<f64>]| cells.iter().map(|c| Some(c.mean)).collect::<Vec<_>>();
    let prev = format!("previous MH {}", a.y_prev);
    out.write("exposed.svg", svg::heatmap(&grid, &means(&arms.exposed), &format!("Predicted MH change in HAS, {prev}"), "MH points"))?;
    out.write("unexposed.svg", svg::heatmap(&grid, &means(&arms.unexposed), &format!("Predicted MH change not in HAS, {prev}"), "MH points"))?;
    out.write("effect.svg", svg::heatmap(&grid, &means(&effect.cells), &format!("Effect of HAS on MH change, {prev}"), "MH points"))?;
    let items = [
        ("average effect".to_string(), effect.average.mean, effect.average.q025, effect.average.q975),
        ("equilibrium shift".to_string(), effect.equilibrium.mean, effect.equilibrium.q025, effect.equilibrium.q975),
    ];
    out.write("equilibrium.svg", svg::whisker_panel(&items, "Average effect and equilibrium shift", "MH points"))?;
    out.finish("gcomp", a, Some(seed))
}

/// Tensor fit with the year knot range stretched by `horizon`, summarized on
/// the extended grid. Horizon 0 reproduces the `fit` estimates.
pub fn forecast_estimates(counts: &CellCounts, knots: usize, horizon: i32) -> Result<CellEstimates<f64>> {
    if horizon < 0 {
        return Err(CliError::Config(format!("forecast horizon must not be negative, got {horizon}")));
    }
    let grid = counts.grid;
    let mut spec = SmoothSpec::tensor(&grid, knots);
    spec.margins[1].hi += horizon as f64;
    let model = fit_binomial(counts, &BinomialStructure::Tensor(spec), &FitOptions::default())?;
    let ext = DomainGrid::new(grid.age_min, grid.age_max, grid.year_min, grid.year_max + horizon)?;
    let mut ext_counts = CellCounts::zeros(ext);
    for (i, c) in grid.cells().iter().enumerate() {
        let j = ext.index_of(c.age, c.year).expect("extended grid covers the data grid");
        ext_counts.n[j] = counts.n[i];
        ext_counts.k[j] = counts.k[i];
    }
    Ok(estimates_from_model(&ext_counts, "tensor", model)?)
}

fn forecast(a: &ForecastArgs) -> Result<Vec<Artifact>> {
    check_draws(a.draws)?;
    if a.estimators.trim() != "tensor" {
        return Err(CliError::Config(format!("only the tensor estimator can forecast, got {:?}", a.estimators)));
    }
    if a.horizon < 0 {
        return Err(CliError::Config(format!("forecast horizon must not be negative, got {}", a.horizon)));
    }
    let dir = direction(&a.direction)?;
    let (panel, grid) = load(&a.data)?;
    let counts = aggregate(&panel.extract_transitions(dir, &grid), &grid);
    let est = forecast_estimates(&counts, a.knots, a.horizon)?;
    let seed = a.data.seed;

    let mut body = Vec::new();
    est.write_csv(&mut body, a.draws, seed)?;
    let mut csv = format!("# {FORECAST_CAVEAT}\n# last observed year {}, horizon {}\n", grid.year_max, a.horizon).into_bytes();
    csv.extend_from_slice(&body);

    let summaries = est.summaries(a.draws, seed);
    let title = format!("Forecast probability of {}, {} year horizon", a.direction, a.horizon);
    let fan = svg::interval_plot(&slice_series(&est, &summaries), &title, "year", "probability", Some(grid.year_max as f64));

    let mut out = Outputs::create(&a.data.out_dir)?;
    out.write("forecast.csv", csv)?;
    out.write("forecast_fan.svg", fan)?;
    out.finish("forecast", a, Some(seed))
}
