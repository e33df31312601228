//! Small-domain estimation on age × calendar-year panels.
//!
//! The estimator ladder runs from within-cell proportions through complete
//! and partial pooling to tensor-product P-splines, all fitted by penalized
//! likelihood with Laplace posteriors. Models are compared by
//! cross-validated expected log predictive density, and fitted MH models
//! feed g-computation effect surfaces. A simulator produces panels with known
//! truth for every claim.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix `f64`.

pub mod basis;
pub mod cv;
pub mod error;
pub mod fit;
pub mod gcomp;
pub mod grid;
pub mod linalg;
pub mod panel;
pub mod rng;
pub mod scalar;
pub mod simulate;

pub use error::{Error, Result};
pub use grid::{DomainCell, DomainGrid};
pub use panel::{CellCounts, DiffRecord, Direction, Panel, PersonYear, TransitionRecord};
pub use scalar::Scalar;

pub type SmoothSpec = basis::SmoothSpec<f64>;
pub type MarginSpec = basis::MarginSpec<f64>;
pub type BasisMatrix = basis::BasisMatrix<f64>;
pub type FittedModel = fit::FittedModel<f64>;
pub type CellEstimates = fit::CellEstimates<f64>;
pub type EstimatorKind = fit::EstimatorKind<f64>;
pub type ElpdReport = cv::ElpdReport<f64>;
pub type EffectSurface = gcomp::EffectSurface<f64>;
