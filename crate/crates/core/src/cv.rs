//! Fold construction, expected log predictive density, pairwise model
//! comparison and heterogeneity diagnostics.

use crate::error::{Error, Result};
use crate::fit::{fit_estimator, fit_mh, CellEstimates, Covariates, EstimatorKind, FitOptions, FittedModel, MhModelSpec};
use crate::grid::{DomainCell, DomainGrid};
use crate::panel::{aggregate, CellCounts, DiffRecord, TransitionRecord};
use crate::rng::stream_rng;
use crate::scalar::{log_mean_exp, sigmoid, sort_scalars, Scalar};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::io::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FoldDesign {
    StratifiedByCell,
    LeaveYearOut,
    LeaveAgeOut,
    LeaveCohortOut,
}

impl FoldDesign {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stratified" | "stratified_by_cell" => Some(FoldDesign::StratifiedByCell),
            "leave_year_out" => Some(FoldDesign::LeaveYearOut),
            "leave_age_out" => Some(FoldDesign::LeaveAgeOut),
            "leave_cohort_out" => Some(FoldDesign::LeaveCohortOut),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FoldDesign::StratifiedByCell => "stratified_by_cell",
            FoldDesign::LeaveYearOut => "leave_year_out",
            FoldDesign::LeaveAgeOut => "leave_age_out",
            FoldDesign::LeaveCohortOut => "leave_cohort_out",
        }
    }
}

/// Records that can be dealt into folds.
pub trait FoldRecord {
    fn cell(&self) -> DomainCell;
    /// Extra stratification beyond the cell (exposure for MH records).
    fn substratum(&self) -> u8 {
        0
    }
}

impl FoldRecord for TransitionRecord {
    fn cell(&self) -> DomainCell {
        self.cell
    }
}

impl FoldRecord for DiffRecord {
    fn cell(&self) -> DomainCell {
        self.cell
    }
    fn substratum(&self) -> u8 {
        self.exposed as u8
    }
}

impl FoldRecord for DomainCell {
    fn cell(&self) -> DomainCell {
        *self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub design: FoldDesign,
    pub n_folds: usize,
    pub seed: u64,
    /// Fold id of each record.
    pub assignment: Vec<usize>,
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_folds];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| self.assignment[i] != fold).collect()
    }
}

/// Assigns records to folds. Stratified plans shuffle within each stratum
/// and deal round-robin, continuing the rotation from one stratum to the
/// next; leave-X-out plans shuffle the distinct levels and deal those.
pub fn make_folds<R: FoldRecord>(records: &[R], design: FoldDesign, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(Error::InfeasibleFolds(format!("need at least 2 folds, got {n_folds}")));
    }
    let mut rng = stream_rng(seed, 0);
    let mut assignment = vec![0; records.len()];
    match design {
        FoldDesign::StratifiedByCell => {
            let mut strata: BTreeMap<(i32, i32, u8), Vec<usize>> = BTreeMap::new();
            for (i, r) in records.iter().enumerate() {
                let c = r.cell();
                strata.entry((c.age, c.year, r.substratum())).or_default().push(i);
            }
            let mut offset = 0;
            for idx in strata.values_mut() {
                idx.shuffle(&mut rng);
                for (j, &i) in idx.iter().enumerate() {
                    assignment[i] = (offset + j) % n_folds;
                }
                offset = (offset + idx.len()) % n_folds;
            }
        }
        _ => {
            let level = |c: DomainCell| match design {
                FoldDesign::LeaveYearOut => c.year,
                FoldDesign::LeaveAgeOut => c.age,
                _ => c.cohort,
            };
            let mut levels: Vec<i32> = records.iter().map(|r| level(r.cell())).collect();
            levels.sort_unstable();
            levels.dedup();
            if levels.len() < n_folds {
                return Err(Error::InfeasibleFolds(format!(
                    "{} distinct {} levels for {} folds",
                    levels.len(),
                    design.name(),
                    n_folds
                )));
            }
            levels.shuffle(&mut rng);
            let fold_of: HashMap<i32, usize> = levels.iter().enumerate().map(|(j, &l)| (l, j % n_folds)).collect();
            for (i, r) in records.iter().enumerate() {
                assignment[i] = fold_of[&level(r.cell())];
            }
        }
    }
    Ok(FoldPlan { design, n_folds, seed, assignment })
}

/// Pointwise expected log predictive densities for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ElpdReport<T> {
    pub model: String,
    pub pointwise: Vec<T>,
    pub total: T,
    /// `√(N · var(elpd_i))`.
    pub se: T,
    /// Records scored with the `log ½` fallback (no estimate for their cell).
    pub fallback_records: usize,
    /// Identifies the scored records and their folds.
    pub fingerprint: u64,
}

fn sorted_sum<T: Scalar>(v: &[T]) -> T {
    let mut s = v.to_vec();
    sort_scalars(&mut s);
    s.into_iter().sum()
}

fn pointwise_se<T: Scalar>(v: &[T]) -> T {
    let n = v.len();
    if n < 2 {
        return T::zero();
    }
    let mean = sorted_sum(v) / T::from_count(n);
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / T::from_count(n - 1);
    (T::from_count(n) * var).sqrt()
}

impl<T: Scalar> ElpdReport<T> {
    pub fn new(model: impl Into<String>, pointwise: Vec<T>, fallback_records: usize, fingerprint: u64) -> Self {
        let total = sorted_sum(&pointwise);
        let se = pointwise_se(&pointwise);
        Self { model: model.into(), pointwise, total, se, fallback_records, fingerprint }
    }
}

fn fnv(hash: &mut u64, x: i64) {
    for b in x.to_le_bytes() {
        *hash ^= b as u64;
        *hash = hash.wrapping_mul(0x100000001b3);
    }
}

fn fingerprint<R: FoldRecord>(records: &[R], outcome: impl Fn(&R) -> i64, assignment: Option<&[usize]>) -> u64 {
    let mut h = 0xcbf29ce484222325;
    for (i, r) in records.iter().enumerate() {
        let c = r.cell();
        fnv(&mut h, c.age as i64);
        fnv(&mut h, c.year as i64);
        fnv(&mut h, outcome(r));
        fnv(&mut h, assignment.map_or(-1, |a| a[i] as i64));
    }
    h
}

/// Seed for fold `f` (and `0` for within-sample scoring).
pub fn derived_seed(seed: u64, f: u64) -> u64 {
    let mut z = seed ^ f.wrapping_add(1).wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Bernoulli elpd of records under per-cell logit draws; cells without draws
/// score `log ½`.
fn score_binomial<T: Scalar>(draws: &[Option<Vec<T>>], grid: &DomainGrid, records: &[&TransitionRecord], out: &mut [T], fallback: &mut usize) {
    let mut cache: HashMap<(usize, bool), Option<T>> = HashMap::new();
    for (slot, r) in out.iter_mut().zip(records) {
        let idx = grid.index_of(r.cell.age, r.cell.year);
        let y = r.event();
        let v = idx.and_then(|i| {
            *cache.entry((i, y)).or_insert_with(|| {
                draws[i].as_ref().map(|d| {
                    let logs: Vec<T> = d.iter().map(|&e| if y { -crate::scalar::log1p_exp(-e) } else { -crate::scalar::log1p_exp(e) }).collect();
                    log_mean_exp(&logs)
                })
            })
        });
        match v {
            Some(v) => *slot = v,
            None => {
                *slot = T::lit(0.5f64.ln());
                *fallback += 1;
            }
        }
    }
}

/// Scores held-out transition records: `fits[f]` was trained without fold `f`.
pub fn elpd<T: Scalar>(fits: &[CellEstimates<T>], plan: &FoldPlan, records: &[TransitionRecord], n_draws: usize, seed: u64) -> Result<ElpdReport<T>> {
    if fits.len() != plan.n_folds || plan.assignment.len() != records.len() {
        return Err(Error::DimensionMismatch(format!("{} fits and {} assignments for {} folds and {} records", fits.len(), plan.assignment.len(), plan.n_folds, records.len())));
    }
    let label = fits.first().map(|f| f.label.clone()).unwrap_or_default();
    if fits.iter().any(|f| !f.has_posterior()) {
        return Err(Error::InvalidSpec(format!("estimator {label} has no posterior to score")));
    }
    let scored: Vec<(Vec<usize>, Vec<T>, usize)> = (0..plan.n_folds)
        .into_par_iter()
        .map(|f| {
            let idx = plan.test_indices(f);
            let recs: Vec<&TransitionRecord> = idx.iter().map(|&i| &records[i]).collect();
            let draws = fits[f].logit_draws(n_draws, derived_seed(seed, f as u64 + 1));
            let mut out = vec![T::zero(); idx.len()];
            let mut fb = 0;
            score_binomial(&draws, &fits[f].grid, &recs, &mut out, &mut fb);
            (idx, out, fb)
        })
        .collect();
    let mut pointwise = vec![T::zero(); records.len()];
    let mut fallback = 0;
    for (idx, vals, fb) in scored {
        for (i, v) in idx.into_iter().zip(vals) {
            pointwise[i] = v;
        }
        fallback += fb;
    }
    let fp = fingerprint(records, |r| r.event() as i64, Some(&plan.assignment));
    Ok(ElpdReport::new(label, pointwise, fallback, fp))
}

/// Draw count, seed and fit tuning shared by the CV drivers.
#[derive(Debug, Clone)]
pub struct CvSettings {
    pub n_draws: usize,
    pub seed: u64,
    pub fit: FitOptions,
}

impl Default for CvSettings {
    fn default() -> Self {
        Self { n_draws: 2000, seed: 1, fit: FitOptions::default() }
    }
}

fn subset_counts(records: &[TransitionRecord], keep: impl Fn(usize) -> bool, grid: &DomainGrid) -> CellCounts {
    let recs: Vec<TransitionRecord> = records.iter().enumerate().filter(|(i, _)| keep(*i)).map(|(_, r)| *r).collect();
    aggregate(&recs, grid)
}

/// Fits `kind` on each fold's complement and scores the held-out records.
pub fn cross_validate_binomial<T: Scalar>(
    records: &[TransitionRecord],
    grid: &DomainGrid,
    kind: &EstimatorKind<T>,
    plan: &FoldPlan,
    settings: &CvSettings,
) -> Result<ElpdReport<T>> {
    if matches!(kind, EstimatorKind::Weighted(_)) {
        return Err(Error::InvalidSpec("the weighted estimator has no posterior and cannot be cross-validated".into()));
    }
    let fits: Vec<CellEstimates<T>> = (0..plan.n_folds)
        .into_par_iter()
        .map(|f| fit_estimator(kind, &subset_counts(records, |i| plan.assignment[i] != f, grid), &settings.fit))
        .collect::<Result<_>>()?;
    elpd(&fits, plan, records, settings.n_draws, settings.seed)
}

/// Scores every record under the fit to all records.
pub fn within_sample_binomial<T: Scalar>(est: &CellEstimates<T>, records: &[TransitionRecord], n_draws: usize, seed: u64) -> Result<ElpdReport<T>> {
    if !est.has_posterior() {
        return Err(Error::InvalidSpec(format!("estimator {} has no posterior to score", est.label)));
    }
    let draws = est.logit_draws(n_draws, derived_seed(seed, 0));
    let recs: Vec<&TransitionRecord> = records.iter().collect();
    let mut out = vec![T::zero(); records.len()];
    let mut fb = 0;
    score_binomial(&draws, &est.grid, &recs, &mut out, &mut fb);
    Ok(ElpdReport::new(est.label.clone(), out, fb, fingerprint(records, |r| r.event() as i64, None)))
}

fn score_gaussian<T: Scalar>(model: &FittedModel<T>, records: &[DiffRecord], idx: &[usize], n_draws: usize, seed: u64) -> Result<Vec<T>> {
    let draws = model.draws(n_draws, seed);
    let vm = model.variance_model().ok_or_else(|| Error::InvalidSpec("Gaussian scoring needs a variance model".into()))?;
    idx.par_iter()
        .map(|&i| {
            let r = &records[i];
            let cov = Covariates { age: r.cell.age, year: r.cell.year, y_prev: T::lit(r.y_prev), exposed: r.exposed };
            let (c, v) = model.mapper().row(&cov)?;
            let mu = draws.eta(&c, &v);
            let (first, hv) = vm.row(cov.y_prev)?;
            let ls = draws.log_sigma(first, &hv).expect("variance draws present");
            Ok(gaussian_elpd(T::lit(r.dy), &mu, &ls))
        })
        .collect()
}

/// `log S⁻¹ Σ_s N(y | μ⁽ˢ⁾, σ⁽ˢ⁾)` over paired draws of the mean and log-σ.
pub fn gaussian_elpd<T: Scalar>(y: T, mu: &[T], log_sigma: &[T]) -> T {
    let half_log_2pi = T::lit(0.5 * (2.0 * std::f64::consts::PI).ln());
    let logs: Vec<T> = mu
        .iter()
        .zip(log_sigma)
        .map(|(&m, &l)| {
            let z = (y - m) / l.exp();
            -half_log_2pi - l - z * z * T::lit(0.5)
        })
        .collect();
    log_mean_exp(&logs)
}

fn diff_outcome(r: &DiffRecord) -> i64 {
    (r.dy * 1e6).round() as i64 ^ ((r.y_prev * 1e6).round() as i64).rotate_left(17) ^ r.exposed as i64
}

/// Cross-validated Gaussian elpd for an MH model.
pub fn cross_validate_mh<T: Scalar>(records: &[DiffRecord], grid: &DomainGrid, spec: &MhModelSpec, plan: &FoldPlan, settings: &CvSettings) -> Result<ElpdReport<T>> {
    let mut pointwise = vec![T::zero(); records.len()];
    for f in 0..plan.n_folds {
        let train: Vec<DiffRecord> = plan.train_indices(f).into_iter().map(|i| records[i]).collect();
        let model = fit_mh::<T>(&train, grid, spec, &settings.fit)?;
        let test = plan.test_indices(f);
        let vals = score_gaussian(&model, records, &test, settings.n_draws, derived_seed(settings.seed, f as u64 + 1))?;
        for (i, v) in test.into_iter().zip(vals) {
            pointwise[i] = v;
        }
    }
    Ok(ElpdReport::new(mh_label(spec), pointwise, 0, fingerprint(records, diff_outcome, Some(&plan.assignment))))
}

pub fn within_sample_mh<T: Scalar>(model: &FittedModel<T>, records: &[DiffRecord], label: &str, n_draws: usize, seed: u64) -> Result<ElpdReport<T>> {
    let idx: Vec<usize> = (0..records.len()).collect();
    let vals = score_gaussian(model, records, &idx, n_draws, derived_seed(seed, 0))?;
    Ok(ElpdReport::new(label, vals, 0, fingerprint(records, diff_outcome, None)))
}

pub fn mh_label(spec: &MhModelSpec) -> String {
    let form = match spec.form {
        crate::fit::MhForm::Baseline => "baseline",
        crate::fit::MhForm::HasMain => "has_main",
        crate::fit::MhForm::HasModified => "has_modified",
    };
    let pooling = match spec.pooling {
        crate::fit::Pooling::Complete => "complete",
        crate::fit::Pooling::Partial => "partial",
        crate::fit::Pooling::Tensor => "tensor",
    };
    format!("{form}_{pooling}")
}

/// `Δelpd` of `model` against `reference` with its standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison<T> {
    pub model: String,
    pub reference: String,
    pub delta: T,
    pub se: T,
}

pub fn delta<T: Scalar>(model: &ElpdReport<T>, reference: &ElpdReport<T>) -> Result<Comparison<T>> {
    if model.pointwise.len() != reference.pointwise.len() || model.fingerprint != reference.fingerprint {
        return Err(Error::MismatchedRecords(format!("{} and {} were scored on different records or folds", model.model, reference.model)));
    }
    let d: Vec<T> = model.pointwise.iter().zip(&reference.pointwise).map(|(&a, &b)| a - b).collect();
    Ok(Comparison { model: model.model.clone(), reference: reference.model.clone(), delta: sorted_sum(&d), se: pointwise_se(&d) })
}

/// Differences of every report against the one named `reference`.
pub fn compare<T: Scalar>(reports: &[ElpdReport<T>], reference: &str) -> Result<Vec<Comparison<T>>> {
    let r = reports
        .iter()
        .find(|r| r.model == reference)
        .ok_or_else(|| Error::InvalidSpec(format!("reference model {reference} not among the reports")))?;
    reports.iter().map(|m| delta(m, r)).collect()
}

/// Spread of posterior-mean logits across cells and their average posterior variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Heterogeneity<T> {
    pub v_of_e: T,
    pub e_of_v: T,
}

/// Computed over cells with at-risk records in `counts`. The grand mean is
/// weighted by records, as a mean over observations.
pub fn heterogeneity_diagnostics<T: Scalar>(est: &CellEstimates<T>, counts: &CellCounts) -> Result<Heterogeneity<T>> {
    let cells: Vec<(T, T, T)> = counts
        .populated()
        .filter_map(|i| est.logit[i].map(|l| (T::lit(counts.n[i] as f64), l.mean, l.var)))
        .collect();
    if cells.is_empty() {
        return Err(Error::InvalidSpec(format!("estimator {} has no logit posterior on populated cells", est.label)));
    }
    let total_n: T = cells.iter().map(|c| c.0).sum();
    // Centred on the first cell so identical logits give exactly zero spread.
    let anchor = cells[0].1;
    let grand = anchor + cells.iter().map(|c| c.0 * (c.1 - anchor)).sum::<T>() / total_n;
    let m = T::from_count(cells.len());
    let v_of_e = cells.iter().map(|c| (c.1 - grand) * (c.1 - grand)).sum::<T>() / m;
    let e_of_v = cells.iter().map(|c| c.2).sum::<T>() / m;
    Ok(Heterogeneity { v_of_e, e_of_v })
}

/// One row of the comparison table.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow<T> {
    pub estimator: String,
    pub elpd_within: Option<T>,
    pub delta_within: Option<T>,
    pub v_of_e: Option<T>,
    pub e_of_v: Option<T>,
    pub elpd_cv: T,
    pub sd: T,
    pub delta_cv: T,
    pub delta_sd: T,
}

pub fn write_table_csv<T: Scalar, W: Write>(rows: &[TableRow<T>], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "elpd_within", "delta_within", "V_of_E_x1000", "E_of_V_x1000", "elpd_cv", "sd", "delta_cv", "delta_sd"])?;
    let f = |v: Option<T>| v.map(|x| format!("{:.4}", x.as_f64())).unwrap_or_default();
    let k = T::lit(1000.0);
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            f(r.elpd_within),
            f(r.delta_within),
            f(r.v_of_e.map(|v| v * k)),
            f(r.e_of_v.map(|v| v * k)),
            f(Some(r.elpd_cv)),
            f(Some(r.sd)),
            f(Some(r.delta_cv)),
            f(Some(r.delta_sd)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-record held-out predictive probability under a single logit, handy
/// for closed-form checks.
pub fn bernoulli_elpd<T: Scalar>(logit: T, y: bool) -> T {
    let p = sigmoid(logit);
    if y {
        p.ln()
    } else {
        (T::one() - p).ln()
    }
}
