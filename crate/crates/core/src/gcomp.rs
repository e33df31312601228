//! G-computation over fitted MH models: counterfactual predictions under
//! exposure and non-exposure, per-cell effect surfaces, average effects and
//! equilibrium shifts.

use crate::error::{Error, Result};
use crate::fit::{Covariates, DesignMapper, FittedModel, MhDesign, PosteriorDraws};
use crate::grid::DomainGrid;
use crate::panel::DiffRecord;
use crate::scalar::{quantile_sorted, sort_scalars, Scalar};
use rayon::prelude::*;
use std::io::Write;

/// Previous-MH value plugged into predictions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum YPrevPolicy<T> {
    /// The same value for every cell.
    Fixed(T),
    /// Each cell's mean observed previous MH (the overall mean for cells
    /// without records).
    Observed,
}

impl<T: Scalar> Default for YPrevPolicy<T> {
    fn default() -> Self {
        YPrevPolicy::Fixed(T::lit(75.0))
    }
}

/// What to predict and how many posterior draws to summarize with.
#[derive(Debug, Clone)]
pub struct CounterfactualQuery<'a, T: Scalar> {
    pub model: &'a FittedModel<T>,
    pub policy: YPrevPolicy<T>,
    /// Records defining the observed covariate distribution; needed for
    /// [`YPrevPolicy::Observed`] and for record-weighted averages.
    pub records: &'a [DiffRecord],
    pub n_draws: usize,
    pub seed: u64,
}

impl<'a, T: Scalar> CounterfactualQuery<'a, T> {
    pub fn new(model: &'a FittedModel<T>, policy: YPrevPolicy<T>) -> Self {
        Self { model, policy, records: &[], n_draws: 2000, seed: 1 }
    }

    pub fn with_records(mut self, records: &'a [DiffRecord]) -> Self {
        self.records = records;
        self
    }

    pub fn with_draws(mut self, n_draws: usize, seed: u64) -> Self {
        self.n_draws = n_draws;
        self.seed = seed;
        self
    }

    fn design(&self) -> Result<&'a MhDesign<T>> {
        match self.model.mapper() {
            DesignMapper::Mh(d) => Ok(d),
            _ => Err(Error::InvalidSpec("g-computation needs a fitted MH model".into())),
        }
    }

    fn validate(&self) -> Result<()> {
        if let YPrevPolicy::Fixed(y) = self.policy {
            if !(y >= T::zero() && y <= T::lit(100.0)) {
                return Err(Error::OutOfRange { value: y.as_f64(), lo: 0.0, hi: 100.0 });
            }
        }
        if self.policy == YPrevPolicy::Observed && self.records.is_empty() {
            return Err(Error::EmptyData("the observed previous-MH policy needs records".into()));
        }
        Ok(())
    }

    /// Previous MH used at each grid cell.
    fn y_prev_by_cell(&self, grid: &DomainGrid) -> Vec<T> {
        match self.policy {
            YPrevPolicy::Fixed(y) => vec![y; grid.len()],
            YPrevPolicy::Observed => {
                let mut sum = vec![0.0; grid.len()];
                let mut n = vec![0usize; grid.len()];
                for r in self.records {
                    if let Some(i) = grid.index_of(r.cell.age, r.cell.year) {
                        sum[i] += r.y_prev;
                        n[i] += 1;
                    }
                }
                let overall = self.records.iter().map(|r| r.y_prev).sum::<f64>() / self.records.len() as f64;
                (0..grid.len()).map(|i| T::lit(if n[i] > 0 { sum[i] / n[i] as f64 } else { overall })).collect()
            }
        }
    }

    /// Record count per cell, used as averaging weights.
    fn record_weights(&self, grid: &DomainGrid) -> Vec<f64> {
        let mut w = vec![0.0; grid.len()];
        for r in self.records {
            if let Some(i) = grid.index_of(r.cell.age, r.cell.year) {
                w[i] += 1.0;
            }
        }
        w
    }
}

/// Posterior mean and central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary<T> {
    pub mean: T,
    pub q025: T,
    pub q975: T,
}

fn summarize<T: Scalar>(mean: T, mut draws: Vec<T>) -> Summary<T> {
    sort_scalars(&mut draws);
    Summary { mean, q025: quantile_sorted(&draws, 0.025), q975: quantile_sorted(&draws, 0.975) }
}

/// Sparse `a − b`, dropping entries that cancel exactly.
fn sparse_diff<T: Scalar>(a: (Vec<usize>, Vec<T>), b: (Vec<usize>, Vec<T>)) -> (Vec<usize>, Vec<T>) {
    let mut acc: std::collections::BTreeMap<usize, T> = std::collections::BTreeMap::new();
    for (c, v) in a.0.into_iter().zip(a.1) {
        *acc.entry(c).or_insert(T::zero()) += v;
    }
    for (c, v) in b.0.into_iter().zip(b.1) {
        *acc.entry(c).or_insert(T::zero()) -= v;
    }
    acc.into_iter().filter(|(_, v)| *v != T::zero()).unzip()
}

/// Predicted mean change under both exposures, per grid cell.
#[derive(Debug, Clone)]
pub struct CounterfactualSurface<T> {
    pub grid: DomainGrid,
    pub exposed: Vec<Summary<T>>,
    pub unexposed: Vec<Summary<T>>,
}

fn arm_summaries<T: Scalar>(q: &CounterfactualQuery<'_, T>, draws: &PosteriorDraws<T>, exposed: bool) -> Result<Vec<Summary<T>>> {
    let d = q.design()?;
    let ys = q.y_prev_by_cell(&d.grid);
    (0..d.grid.len())
        .into_par_iter()
        .map(|i| {
            let c = d.grid.cell(i);
            let (cols, vals) = d.row(&Covariates { age: c.age, year: c.year, y_prev: ys[i], exposed })?;
            let mean = q.model.row_moments(&cols, &vals).0;
            Ok(summarize(mean, draws.eta(&cols, &vals)))
        })
        .collect()
}

/// Predicted `E[ΔY]` with exposure unset, for any MH model including the
/// baseline one.
pub fn unexposed_surface<T: Scalar>(q: &CounterfactualQuery<'_, T>) -> Result<Vec<Summary<T>>> {
    q.validate()?;
    arm_summaries(q, &q.model.draws(q.n_draws, q.seed), false)
}

/// Predicted `E[ΔY]` at every grid cell under `M = 1` and `M = 0`.
pub fn counterfactual_predict<T: Scalar>(q: &CounterfactualQuery<'_, T>) -> Result<CounterfactualSurface<T>> {
    q.validate()?;
    let d = q.design()?;
    if d.exposure_column().is_none() {
        return Err(Error::MissingExposure("the baseline model has no HAS term".into()));
    }
    let draws = q.model.draws(q.n_draws, q.seed);
    Ok(CounterfactualSurface { grid: d.grid, exposed: arm_summaries(q, &draws, true)?, unexposed: arm_summaries(q, &draws, false)? })
}

/// How the overall average effect was formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AverageKind {
    /// Mean over observed covariate rows.
    RecordWeighted,
    /// Unweighted mean over grid cells.
    CellMean,
}

/// Exposed-minus-unexposed expected change per grid cell.
#[derive(Debug, Clone)]
pub struct EffectSurface<T> {
    pub grid: DomainGrid,
    pub cells: Vec<Summary<T>>,
    pub average: Summary<T>,
    pub average_kind: AverageKind,
    /// `−effect/β₁` per draw, using the overall average effect.
    pub equilibrium: Summary<T>,
    pub manifest: String,
}

impl<T: Scalar> EffectSurface<T> {
    pub fn means(&self) -> Vec<T> {
        self.cells.iter().map(|s| s.mean).collect()
    }

    /// `(min, max)` of the posterior-mean surface.
    pub fn range(&self) -> (T, T) {
        let m = self.means();
        let lo = m.iter().copied().fold(m[0], |a, b| a.min(b));
        let hi = m.iter().copied().fold(m[0], |a, b| a.max(b));
        (lo, hi)
    }

    /// One-line range report, e.g. `effect range -3.8 to -1.1 (difference 2.7)`.
    pub fn range_summary(&self) -> String {
        let (lo, hi) = self.range();
        format!("effect range {:.1} to {:.1} (difference {:.1})", lo.as_f64(), hi.as_f64(), (hi - lo).as_f64())
    }

    /// Root mean squared difference from a reference surface in grid order.
    pub fn rmse(&self, truth: &[T]) -> Result<T> {
        if truth.len() != self.cells.len() {
            return Err(Error::DimensionMismatch(format!("{} truth cells for {} surface cells", truth.len(), self.cells.len())));
        }
        let ss: T = self.cells.iter().zip(truth).map(|(s, &t)| (s.mean - t) * (s.mean - t)).sum();
        Ok((ss / T::from_count(truth.len())).sqrt())
    }

    /// CSV `age,year,mean,q025,q975` headed by the assumptions manifest and
    /// the average and equilibrium summaries as `#` comments.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        for line in self.manifest.lines() {
            writeln!(writer, "# {line}")?;
        }
        let kind = match self.average_kind {
            AverageKind::RecordWeighted => "record-weighted",
            AverageKind::CellMean => "unweighted cell mean",
        };
        let s = |x: &Summary<T>| format!("{:.4} [{:.4}; {:.4}]", x.mean.as_f64(), x.q025.as_f64(), x.q975.as_f64());
        writeln!(writer, "# average effect ({kind}): {}", s(&self.average))?;
        writeln!(writer, "# equilibrium shift: {}", s(&self.equilibrium))?;
        writeln!(writer, "# {}", self.range_summary())?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["age", "year", "mean", "q025", "q975"])?;
        for (i, c) in self.cells.iter().enumerate() {
            let cell = self.grid.cell(i);
            w.write_record([
                cell.age.to_string(),
                cell.year.to_string(),
                format!("{:.6}", c.mean.as_f64()),
                format!("{:.6}", c.q025.as_f64()),
                format!("{:.6}", c.q975.as_f64()),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per-cell contrasts of expected change under `M = 1` versus `M = 0`.
/// Cell means are analytic contrasts of the posterior mode; intervals come
/// from posterior draws. The average is record-weighted under the observed
/// policy and an unweighted cell mean under a fixed one.
pub fn effect_surface<T: Scalar>(q: &CounterfactualQuery<'_, T>) -> Result<EffectSurface<T>> {
    q.validate()?;
    let d = q.design()?;
    if d.exposure_column().is_none() {
        return Err(Error::MissingExposure("the baseline model has no HAS term".into()));
    }
    let grid = d.grid;
    let ys = q.y_prev_by_cell(&grid);
    let draws = q.model.draws(q.n_draws, q.seed);
    let per_cell: Vec<(T, Vec<T>)> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let c = grid.cell(i);
            let on = d.row(&Covariates { age: c.age, year: c.year, y_prev: ys[i], exposed: true })?;
            let off = d.row(&Covariates { age: c.age, year: c.year, y_prev: ys[i], exposed: false })?;
            let (cols, vals) = sparse_diff(on, off);
            Ok((q.model.row_moments(&cols, &vals).0, draws.eta(&cols, &vals)))
        })
        .collect::<Result<_>>()?;

    let (weights, average_kind) = match q.policy {
        YPrevPolicy::Fixed(_) => (vec![1.0; grid.len()], AverageKind::CellMean),
        YPrevPolicy::Observed => (q.record_weights(&grid), AverageKind::RecordWeighted),
    };
    let wsum: f64 = weights.iter().sum();
    if wsum <= 0.0 {
        return Err(Error::EmptyData("no records fall on the model grid".into()));
    }
    let w: Vec<T> = weights.iter().map(|&x| T::lit(x / wsum)).collect();
    let avg_mean: T = per_cell.iter().zip(&w).map(|((m, _), &wi)| *m * wi).sum();
    let s = draws.n_draws();
    let avg_draws: Vec<T> = (0..s).map(|k| per_cell.iter().zip(&w).map(|((_, dr), &wi)| dr[k] * wi).sum()).collect();

    let beta1_hat = q.model.mode_full()[1];
    let eq_mean = equilibrium_shift(beta1_hat, avg_mean)?;
    let eq_draws: Vec<T> = (0..s)
        .map(|k| equilibrium_shift(draws.theta[(1, k)], avg_draws[k]))
        .collect::<Result<_>>()?;

    let cells = per_cell.into_iter().map(|(m, dr)| summarize(m, dr)).collect();
    Ok(EffectSurface {
        grid,
        cells,
        average: summarize(avg_mean, avg_draws),
        average_kind,
        equilibrium: summarize(eq_mean, eq_draws),
        manifest: assumptions_manifest(q)?,
    })
}

/// Previous-MH shift at which an exposure effect `β₂` is offset by the
/// autoregressive term: `−β₂/β₁`.
pub fn equilibrium_shift<T: Scalar>(beta1: T, beta2: T) -> Result<T> {
    if beta1.abs() < T::lit(1e-12) {
        return Err(Error::InvalidSpec(format!("equilibrium shift undefined for beta1 = {beta1}")));
    }
    Ok(-beta2 / beta1)
}

/// Names of the causal assumptions every effect output is conditional on.
pub const ASSUMPTIONS: [&str; 3] = [
    "exchangeability: no unmeasured confounding of HAS and MH change given the adjustment set",
    "manipulability: HAS status is a well-defined intervention that could be set",
    "SUTVA: one person's HAS status does not affect another's outcome, with a single version of exposure",
];

/// Text block listing the assumptions, the model's adjustment set and the
/// previous-MH policy. Effects are not causal estimates without these.
pub fn assumptions_manifest<T: Scalar>(q: &CounterfactualQuery<'_, T>) -> Result<String> {
    let d = q.design()?;
    let mut s = String::from("Effects are contrasts of model predictions and are causal only under these assumptions:\n");
    for (i, a) in ASSUMPTIONS.iter().enumerate() {
        s.push_str(&format!("assumption {}: {a}\n", i + 1));
    }
    s.push_str(&format!("adjustment set: {}\n", d.spec.adjustment_set().join(", ")));
    let policy = match q.policy {
        YPrevPolicy::Fixed(y) => format!("fixed at {}", y.as_f64()),
        YPrevPolicy::Observed => "observed cell means".into(),
    };
    s.push_str(&format!("previous MH: {policy}\n"));
    Ok(s)
}
