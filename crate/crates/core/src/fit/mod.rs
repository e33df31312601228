//! Estimators: closed-form cell estimators and penalized-likelihood models
//! with Laplace posteriors.

mod binomial;
mod cells;
mod engine;
mod gaussian;
mod model;
mod sampler;

pub use binomial::{fit_binomial, BinomialStructure};
pub use cells::{
    estimates_from_model, fit_complete, fit_direct, fit_estimator, fit_naive_kernel, fit_partial, fit_tensor, fit_weighted,
    stabilized_logit, CellEstimates, CellSummary, EstimatorKind, LogitNormal,
};
pub use engine::{penalized_mode, select_smoothing, FitOptions, Likelihood, ModeFit, ParamKind, PenaltySpec, Structure};
pub use gaussian::{fit_mh, standardized_residuals, MhDesign, MhForm, MhModelSpec, Pooling};
pub use model::{posterior_draws, Covariates, DesignMapper, FittedModel, PosteriorDraws, SmoothingParam, VarianceModel};
pub use sampler::{mh_sampler, SamplerOutput};
