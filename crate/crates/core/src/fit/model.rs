//! Fitted penalized models: mode, Laplace posterior, design mapping and draws.

use super::gaussian::MhDesign;
use crate::basis::{MarginSpec, SmoothSpec};
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::linalg::PrecisionFactor;
use crate::rng::{standard_normal, stream_rng};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

/// Covariates of one prediction. Binomial models read only the cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Covariates<T> {
    pub age: i32,
    pub year: i32,
    pub y_prev: T,
    pub exposed: bool,
}

impl<T: Scalar> Covariates<T> {
    pub fn cell(age: i32, year: i32) -> Self {
        Self { age, year, y_prev: T::zero(), exposed: false }
    }
}

/// Maps covariates to a sparse design row in full-basis coordinates.
#[derive(Debug, Clone)]
pub enum DesignMapper<T: Scalar> {
    /// A single common logit.
    Intercept,
    /// Grand mean plus one random effect per grid cell.
    CellLevels { grid: DomainGrid },
    /// Tensor-product spline over (age, year) with no separate intercept.
    Tensor(SmoothSpec<T>),
    /// Gaussian model for MH differences.
    Mh(MhDesign<T>),
}

impl<T: Scalar> DesignMapper<T> {
    pub fn n_full(&self) -> usize {
        match self {
            DesignMapper::Intercept => 1,
            DesignMapper::CellLevels { grid } => 1 + grid.len(),
            DesignMapper::Tensor(s) => s.n_basis(),
            DesignMapper::Mh(d) => d.n_full(),
        }
    }

    pub fn row(&self, cov: &Covariates<T>) -> Result<(Vec<usize>, Vec<T>)> {
        match self {
            DesignMapper::Intercept => Ok((vec![0], vec![T::one()])),
            DesignMapper::CellLevels { grid } => {
                let idx = grid.index_of(cov.age, cov.year).ok_or_else(|| cell_out_of_range(grid, cov))?;
                Ok((vec![0, 1 + idx], vec![T::one(), T::one()]))
            }
            DesignMapper::Tensor(s) => s.row(&[T::lit(cov.age as f64), T::lit(cov.year as f64)]),
            DesignMapper::Mh(d) => d.row(cov),
        }
    }
}

pub(crate) fn cell_out_of_range<T: Scalar>(grid: &DomainGrid, cov: &Covariates<T>) -> Error {
    Error::OutOfRange {
        value: if (grid.age_min..=grid.age_max).contains(&cov.age) { cov.year as f64 } else { cov.age as f64 },
        lo: if (grid.age_min..=grid.age_max).contains(&cov.age) { grid.year_min as f64 } else { grid.age_min as f64 },
        hi: if (grid.age_min..=grid.age_max).contains(&cov.age) { grid.year_max as f64 } else { grid.age_max as f64 },
    }
}

/// Log-linear model for the residual scale: `log σ = h(y_prev)ᵀ γ`.
#[derive(Debug, Clone)]
pub struct VarianceModel<T: Scalar> {
    pub spec: MarginSpec<T>,
    pub gamma: DVector<T>,
    pub factor: PrecisionFactor<T>,
}

impl<T: Scalar> VarianceModel<T> {
    pub fn log_sigma(&self, y_prev: T) -> Result<T> {
        let (first, vals) = self.spec.eval_nonzero(y_prev, &self.spec.knots())?;
        Ok(vals.iter().enumerate().map(|(i, &v)| v * self.gamma[first + i]).sum())
    }

    pub fn row(&self, y_prev: T) -> Result<(usize, Vec<T>)> {
        self.spec.eval_nonzero(y_prev, &self.spec.knots())
    }
}

/// Unnormalized log posterior in free coordinates, used by the sampler.
#[derive(Clone)]
pub struct LogPosterior<T>(pub Arc<dyn Fn(&DVector<T>) -> T + Send + Sync>);

impl<T> fmt::Debug for LogPosterior<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("LogPosterior(..)")
    }
}

/// A selected smoothing or variance parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothingParam<T> {
    pub name: String,
    pub value: T,
}

/// Penalized-likelihood fit with its Laplace posterior `N(θ̂, (H + K)⁻¹)`.
#[derive(Debug, Clone)]
pub struct FittedModel<T: Scalar> {
    pub(crate) mapper: DesignMapper<T>,
    /// Maps free coordinates to full-basis coordinates; `None` is the identity.
    pub(crate) transform: Option<DMatrix<T>>,
    pub(crate) mode: DVector<T>,
    pub(crate) factor: PrecisionFactor<T>,
    pub(crate) smoothing: Vec<SmoothingParam<T>>,
    pub(crate) log_marginal: T,
    pub(crate) iterations: usize,
    pub(crate) variance: Option<VarianceModel<T>>,
    pub(crate) log_posterior: Option<LogPosterior<T>>,
}

impl<T: Scalar> FittedModel<T> {
    pub fn mapper(&self) -> &DesignMapper<T> {
        &self.mapper
    }

    /// Posterior mode in free coordinates.
    pub fn mode(&self) -> &DVector<T> {
        &self.mode
    }

    /// Posterior mode in full-basis coordinates.
    pub fn mode_full(&self) -> DVector<T> {
        self.to_full(&self.mode)
    }

    pub fn to_full(&self, free: &DVector<T>) -> DVector<T> {
        match &self.transform {
            Some(t) => t * free,
            None => free.clone(),
        }
    }

    pub fn factor(&self) -> &PrecisionFactor<T> {
        &self.factor
    }

    pub fn smoothing(&self) -> &[SmoothingParam<T>] {
        &self.smoothing
    }

    pub fn smoothing_value(&self, name: &str) -> Option<T> {
        self.smoothing.iter().find(|s| s.name == name).map(|s| s.value)
    }

    pub fn log_marginal(&self) -> T {
        self.log_marginal
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn variance_model(&self) -> Option<&VarianceModel<T>> {
        self.variance.as_ref()
    }

    pub fn log_posterior(&self) -> Option<&LogPosterior<T>> {
        self.log_posterior.as_ref()
    }

    /// Dense posterior covariance in free coordinates.
    pub fn covariance(&self) -> DMatrix<T> {
        let p = self.mode.len();
        let mut cov = DMatrix::zeros(p, p);
        for j in 0..p {
            let mut e = DVector::zeros(p);
            e[j] = T::one();
            cov.set_column(j, &self.factor.solve(&e));
        }
        cov
    }

    /// Posterior mean and variance of `xᵀθ_full` for a sparse full-basis row.
    pub fn row_moments(&self, cols: &[usize], vals: &[T]) -> (T, T) {
        let full = self.mode_full();
        let mean = cols.iter().zip(vals).map(|(&c, &v)| full[c] * v).sum();
        let var = match &self.transform {
            None => self.factor.inverse_quad_sparse(cols, vals),
            Some(t) => {
                let mut v = DVector::zeros(t.ncols());
                for (&c, &x) in cols.iter().zip(vals) {
                    v += t.row(c).transpose() * x;
                }
                self.factor.inverse_quad(&v)
            }
        };
        (mean, var)
    }

    pub fn linear_predictor(&self, cov: &Covariates<T>) -> Result<T> {
        let (c, v) = self.mapper.row(cov)?;
        Ok(self.row_moments(&c, &v).0)
    }

    /// Posterior mean and variance of the linear predictor.
    pub fn predictor_moments(&self, cov: &Covariates<T>) -> Result<(T, T)> {
        let (c, v) = self.mapper.row(cov)?;
        Ok(self.row_moments(&c, &v))
    }

    /// Fitted residual standard deviation (Gaussian models).
    pub fn sigma(&self, y_prev: T) -> Result<T> {
        let vm = self.variance.as_ref().ok_or_else(|| Error::InvalidSpec("model has no variance component".into()))?;
        Ok(vm.log_sigma(y_prev)?.exp())
    }

    /// Draws `θ ~ N(θ̂, Σ̂)` (and the variance coefficients, when present).
    pub fn draws(&self, n_draws: usize, seed: u64) -> PosteriorDraws<T> {
        posterior_draws(self, n_draws, seed)
    }
}

/// Posterior draws in full-basis coordinates, one column per draw.
#[derive(Debug, Clone)]
pub struct PosteriorDraws<T: Scalar> {
    pub theta: DMatrix<T>,
    pub gamma: Option<DMatrix<T>>,
}

impl<T: Scalar> PosteriorDraws<T> {
    pub fn n_draws(&self) -> usize {
        self.theta.ncols()
    }

    /// `xᵀθ⁽ˢ⁾` for every draw.
    pub fn eta(&self, cols: &[usize], vals: &[T]) -> Vec<T> {
        (0..self.n_draws())
            .map(|s| cols.iter().zip(vals).map(|(&c, &v)| self.theta[(c, s)] * v).sum())
            .collect()
    }

    /// `log σ⁽ˢ⁾` for a variance-basis row starting at `first`.
    pub fn log_sigma(&self, first: usize, vals: &[T]) -> Option<Vec<T>> {
        let g = self.gamma.as_ref()?;
        Some((0..g.ncols()).map(|s| vals.iter().enumerate().map(|(i, &v)| g[(first + i, s)] * v).sum()).collect())
    }
}

/// Samples the Laplace posterior. Draw `s` uses normals drawn in sequence
/// from one seeded stream, so results depend only on `seed`.
pub fn posterior_draws<T: Scalar>(m: &FittedModel<T>, n_draws: usize, seed: u64) -> PosteriorDraws<T> {
    let p = m.mode.len();
    let pf = m.mapper.n_full();
    let mut theta = DMatrix::zeros(pf, n_draws);
    let mut rng = stream_rng(seed, 0);
    for s in 0..n_draws {
        let z = DVector::from_fn(p, |_, _| standard_normal::<T, _>(&mut rng));
        let free = &m.mode + m.factor.sample(&z);
        theta.set_column(s, &m.to_full(&free));
    }
    let gamma = m.variance.as_ref().map(|vm| {
        let mut rng = stream_rng(seed, 1);
        let q = vm.gamma.len();
        let mut g = DMatrix::zeros(q, n_draws);
        for s in 0..n_draws {
            let z = DVector::from_fn(q, |_, _| standard_normal::<T, _>(&mut rng));
            g.set_column(s, &(&vm.gamma + vm.factor.sample(&z)));
        }
        g
    });
    PosteriorDraws { theta, gamma }
}
