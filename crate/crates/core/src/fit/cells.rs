//! Per-cell estimates for the binomial estimator ladder, with closed-form
//! direct, pooled, weighted and kernel estimators.

use super::binomial::{fit_binomial, BinomialStructure};
use super::engine::FitOptions;
use super::model::{Covariates, FittedModel};
use crate::basis::SmoothSpec;
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::panel::CellCounts;
use crate::rng::{standard_normal, stream_rng};
use crate::scalar::{logit, quantile_sorted, sigmoid, sort_scalars, Scalar};
use std::io::Write;

/// Gaussian posterior for one cell's logit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogitNormal<T> {
    pub mean: T,
    pub var: T,
}

impl<T: Scalar> LogitNormal<T> {
    /// `E[sigmoid(η)]` by composite Simpson quadrature over ±10 sd.
    pub fn probability_mean(&self) -> T {
        let sd = self.var.max(T::zero()).sqrt();
        if sd == T::zero() {
            return sigmoid(self.mean);
        }
        let m = 800;
        let h = 20.0 / m as f64;
        let mut acc = T::zero();
        for i in 0..=m {
            let z = -10.0 + h * i as f64;
            let w = if i == 0 || i == m { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            let phi = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
            acc += T::lit(w * phi) * sigmoid(self.mean + sd * T::lit(z));
        }
        acc * T::lit(h / 3.0)
    }

    /// Equal-tailed interval on the probability scale for normal quantile `z`.
    pub fn interval(&self, z: T) -> (T, T) {
        let sd = self.var.sqrt();
        (sigmoid(self.mean - z * sd), sigmoid(self.mean + z * sd))
    }
}

/// Logit posterior of a direct estimate: the maximum-likelihood logit when
/// `0 < k < n`, otherwise the Jeffreys-adjusted mode `(k + ½)/(n + 1)`.
pub fn stabilized_logit<T: Scalar>(k: u64, n: u64) -> LogitNormal<T> {
    if n > 0 && k > 0 && k < n {
        let p = k as f64 / n as f64;
        LogitNormal { mean: T::lit(logit(p)), var: T::lit(1.0 / (n as f64 * p * (1.0 - p))) }
    } else {
        let p = (k as f64 + 0.5) / (n as f64 + 1.0);
        LogitNormal { mean: T::lit(logit(p)), var: T::lit(1.0 / ((n as f64 + 1.0) * p * (1.0 - p))) }
    }
}

/// The estimator ladder.
#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorKind<T> {
    Direct,
    CompletePool,
    /// Per-cell weight on the pooled estimate, in grid order.
    Weighted(Vec<T>),
    NaiveKernel { half_width: i32 },
    PartialPool,
    TensorSpline(SmoothSpec<T>),
}

impl<T> EstimatorKind<T> {
    pub fn label(&self) -> &'static str {
        match self {
            EstimatorKind::Direct => "direct",
            EstimatorKind::CompletePool => "complete",
            EstimatorKind::Weighted(_) => "weighted",
            EstimatorKind::NaiveKernel { .. } => "kernel",
            EstimatorKind::PartialPool => "partial",
            EstimatorKind::TensorSpline(_) => "tensor",
        }
    }
}

#[derive(Debug, Clone)]
enum DrawSource<T: Scalar> {
    PointOnly,
    /// Cells are independent given the data.
    Independent,
    /// All cells share one logit.
    Shared,
    Model(Box<FittedModel<T>>),
}

/// Per-cell summary on the probability scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary<T> {
    pub mean: T,
    pub q025: Option<T>,
    pub q500: Option<T>,
    pub q975: Option<T>,
}

/// Fitted cell probabilities with their logit-scale posteriors. Cells without
/// an estimate hold `None`.
#[derive(Debug, Clone)]
pub struct CellEstimates<T: Scalar> {
    pub grid: DomainGrid,
    pub label: String,
    /// Training at-risk counts.
    pub n: Vec<u64>,
    pub point: Vec<Option<T>>,
    pub logit: Vec<Option<LogitNormal<T>>>,
    source: DrawSource<T>,
}

impl<T: Scalar> CellEstimates<T> {
    pub fn fitted_model(&self) -> Option<&FittedModel<T>> {
        match &self.source {
            DrawSource::Model(m) => Some(m),
            _ => None,
        }
    }

    pub fn has_posterior(&self) -> bool {
        !matches!(self.source, DrawSource::PointOnly)
    }

    pub fn point_at(&self, age: i32, year: i32) -> Option<T> {
        self.grid.index_of(age, year).and_then(|i| self.point[i])
    }

    /// Logit draws per cell, `None` for cells without an estimate.
    pub fn logit_draws(&self, n_draws: usize, seed: u64) -> Vec<Option<Vec<T>>> {
        let cells = self.grid.len();
        match &self.source {
            DrawSource::PointOnly => vec![None; cells],
            DrawSource::Independent => {
                let mut rng = stream_rng(seed, 0);
                self.logit
                    .iter()
                    .map(|ln| {
                        ln.map(|ln| {
                            let sd = ln.var.sqrt();
                            (0..n_draws).map(|_| ln.mean + sd * standard_normal::<T, _>(&mut rng)).collect()
                        })
                    })
                    .collect()
            }
            DrawSource::Shared => {
                let mut rng = stream_rng(seed, 0);
                let z: Vec<T> = (0..n_draws).map(|_| standard_normal::<T, _>(&mut rng)).collect();
                self.logit.iter().map(|ln| ln.map(|ln| z.iter().map(|&z| ln.mean + ln.var.sqrt() * z).collect())).collect()
            }
            DrawSource::Model(m) => {
                let draws = m.draws(n_draws, seed);
                self.grid
                    .cells()
                    .iter()
                    .map(|c| m.mapper().row(&Covariates::cell(c.age, c.year)).ok().map(|(cols, vals)| draws.eta(&cols, &vals)))
                    .collect()
            }
        }
    }

    /// Posterior mean and percentiles on the probability scale.
    pub fn summaries(&self, n_draws: usize, seed: u64) -> Vec<Option<CellSummary<T>>> {
        if !self.has_posterior() {
            return self.point.iter().map(|p| p.map(|mean| CellSummary { mean, q025: None, q500: None, q975: None })).collect();
        }
        self.logit_draws(n_draws, seed)
            .into_iter()
            .map(|d| {
                let mut probs: Vec<T> = d?.into_iter().map(sigmoid).collect();
                if probs.is_empty() {
                    return None;
                }
                let mean = probs.iter().copied().sum::<T>() / T::from_count(probs.len());
                sort_scalars(&mut probs);
                Some(CellSummary {
                    mean,
                    q025: Some(quantile_sorted(&probs, 0.025)),
                    q500: Some(quantile_sorted(&probs, 0.5)),
                    q975: Some(quantile_sorted(&probs, 0.975)),
                })
            })
            .collect()
    }

    /// Writes `age,year,mean,q025,q500,q975,n`; empty fields where undefined.
    pub fn write_csv<W: Write>(&self, writer: W, n_draws: usize, seed: u64) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["age", "year", "mean", "q025", "q500", "q975", "n"])?;
        let fmt = |v: Option<T>| v.map(|x| x.to_string()).unwrap_or_default();
        for (i, (cell, s)) in self.grid.cells().iter().zip(self.summaries(n_draws, seed)).enumerate() {
            w.write_record([
                cell.age.to_string(),
                cell.year.to_string(),
                fmt(s.map(|s| s.mean)),
                fmt(s.and_then(|s| s.q025)),
                fmt(s.and_then(|s| s.q500)),
                fmt(s.and_then(|s| s.q975)),
                self.n[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Within-cell proportions `k/n`; empty cells have no estimate.
pub fn fit_direct<T: Scalar>(counts: &CellCounts) -> CellEstimates<T> {
    let point = counts.n.iter().zip(&counts.k).map(|(&n, &k)| (n > 0).then(|| T::lit(k as f64 / n as f64))).collect();
    let logit = counts.n.iter().zip(&counts.k).map(|(&n, &k)| (n > 0).then(|| stabilized_logit(k, n))).collect();
    CellEstimates { grid: counts.grid, label: "direct".into(), n: counts.n.clone(), point, logit, source: DrawSource::Independent }
}

/// One pooled proportion for every cell.
pub fn fit_complete<T: Scalar>(counts: &CellCounts) -> Result<CellEstimates<T>> {
    let (n, k) = (counts.total_n(), counts.total_k());
    if n == 0 {
        return Err(Error::EmptyData("complete pooling needs at least one at-risk record".into()));
    }
    let p = T::lit(k as f64 / n as f64);
    let ln = stabilized_logit(k, n);
    let cells = counts.grid.len();
    Ok(CellEstimates {
        grid: counts.grid,
        label: "complete".into(),
        n: counts.n.clone(),
        point: vec![Some(p); cells],
        logit: vec![Some(ln); cells],
        source: DrawSource::Shared,
    })
}

/// `w·p̂ᶜ + (1 − w)·p̂ᵈ` per cell on the probability scale.
pub fn fit_weighted<T: Scalar>(counts: &CellCounts, w: &[T]) -> Result<CellEstimates<T>> {
    if w.len() != counts.grid.len() {
        return Err(Error::DimensionMismatch(format!("{} weights for {} cells", w.len(), counts.grid.len())));
    }
    if w.iter().any(|&x| !(x >= T::zero() && x <= T::one())) {
        return Err(Error::InvalidSpec("weights must lie in [0, 1]".into()));
    }
    let complete = fit_complete::<T>(counts)?;
    let direct = fit_direct::<T>(counts);
    let mut point = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        let pc = complete.point[i].expect("pooled estimate covers every cell");
        point.push(Some(match direct.point[i] {
            Some(pd) => w[i] * pc + (T::one() - w[i]) * pd,
            None if w[i] == T::one() => pc,
            None => {
                let c = counts.grid.cell(i);
                return Err(Error::InvalidSpec(format!("cell ({}, {}) has no data and weight below 1", c.age, c.year)));
            }
        }));
    }
    Ok(CellEstimates {
        grid: counts.grid,
        label: "weighted".into(),
        n: counts.n.clone(),
        point,
        logit: vec![None; w.len()],
        source: DrawSource::PointOnly,
    })
}

/// Pooled ratio over the window `|A − a| < hw`, `|T − t| < hw` around each cell.
pub fn fit_naive_kernel<T: Scalar>(counts: &CellCounts, half_width: i32) -> Result<CellEstimates<T>> {
    if half_width < 1 {
        return Err(Error::InvalidSpec(format!("kernel half width must be at least 1, got {half_width}")));
    }
    let g = counts.grid;
    let mut point = Vec::with_capacity(g.len());
    let mut logit = Vec::with_capacity(g.len());
    for c in g.cells() {
        let (mut n, mut k) = (0u64, 0u64);
        for a in (c.age - half_width + 1)..=(c.age + half_width - 1) {
            for t in (c.year - half_width + 1)..=(c.year + half_width - 1) {
                if let Some((cn, ck)) = counts.get(a, t) {
                    n += cn;
                    k += ck;
                }
            }
        }
        point.push((n > 0).then(|| T::lit(k as f64 / n as f64)));
        logit.push((n > 0).then(|| stabilized_logit(k, n)));
    }
    Ok(CellEstimates { grid: g, label: "kernel".into(), n: counts.n.clone(), point, logit, source: DrawSource::Independent })
}

fn from_model<T: Scalar>(counts: &CellCounts, label: &str, model: FittedModel<T>) -> Result<CellEstimates<T>> {
    let mut point = Vec::with_capacity(counts.grid.len());
    let mut logit = Vec::with_capacity(counts.grid.len());
    for c in counts.grid.cells() {
        let (mean, var) = model.predictor_moments(&Covariates::cell(c.age, c.year))?;
        point.push(Some(sigmoid(mean)));
        logit.push(Some(LogitNormal { mean, var }));
    }
    Ok(CellEstimates { grid: counts.grid, label: label.into(), n: counts.n.clone(), point, logit, source: DrawSource::Model(Box::new(model)) })
}

pub fn fit_partial<T: Scalar>(counts: &CellCounts, opts: &FitOptions) -> Result<CellEstimates<T>> {
    let m = fit_binomial(counts, &BinomialStructure::PartialPool { sigma: None }, opts)?;
    from_model(counts, "partial", m)
}

pub fn fit_tensor<T: Scalar>(counts: &CellCounts, spec: &SmoothSpec<T>, opts: &FitOptions) -> Result<CellEstimates<T>> {
    let m = fit_binomial(counts, &BinomialStructure::Tensor(spec.clone()), opts)?;
    from_model(counts, "tensor", m)
}

/// Wraps an already fitted binomial model.
pub fn estimates_from_model<T: Scalar>(counts: &CellCounts, label: &str, model: FittedModel<T>) -> Result<CellEstimates<T>> {
    from_model(counts, label, model)
}

pub fn fit_estimator<T: Scalar>(kind: &EstimatorKind<T>, counts: &CellCounts, opts: &FitOptions) -> Result<CellEstimates<T>> {
    match kind {
        EstimatorKind::Direct => Ok(fit_direct(counts)),
        EstimatorKind::CompletePool => fit_complete(counts),
        EstimatorKind::Weighted(w) => fit_weighted(counts, w),
        EstimatorKind::NaiveKernel { half_width } => fit_naive_kernel(counts, *half_width),
        EstimatorKind::PartialPool => fit_partial(counts, opts),
        EstimatorKind::TensorSpline(spec) => fit_tensor(counts, spec, opts),
    }
}
