//! Random-walk Metropolis sampler used to check the Laplace approximation.

use super::model::FittedModel;
use crate::error::{Error, Result};
use crate::rng::{standard_normal, stream_rng};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Debug, Clone)]
pub struct SamplerOutput<T: Scalar> {
    /// Post-burn-in draws in free coordinates, one column per iteration.
    pub draws: DMatrix<T>,
    /// Acceptance rate after burn-in.
    pub acceptance: f64,
    /// Set when the acceptance rate falls outside [0.05, 0.7].
    pub warning: bool,
}

impl<T: Scalar> SamplerOutput<T> {
    pub fn mean(&self) -> DVector<T> {
        let n = T::from_count(self.draws.ncols().max(1));
        self.draws.column_sum() / n
    }
}

/// Adaptive random-walk Metropolis started at the mode with proposal
/// covariance `c² Σ̂`. The scale `c` adapts toward 23.4% acceptance during the
/// first half (burn-in) and is frozen afterwards.
pub fn mh_sampler<T: Scalar>(m: &FittedModel<T>, n_iter: usize, seed: u64) -> Result<SamplerOutput<T>> {
    let target = m.log_posterior().ok_or_else(|| Error::InvalidSpec("model carries no log posterior".into()))?;
    let d = m.mode().len();
    let burn = n_iter / 2;
    let mut rng = stream_rng(seed, 0);
    let mut x = m.mode().clone();
    let mut lx = (target.0)(&x);
    let mut log_c = (2.38 / (d as f64).sqrt()).ln();
    let mut kept = DMatrix::zeros(d, n_iter - burn);
    let mut accepted = 0usize;
    for it in 0..n_iter {
        let z = DVector::from_fn(d, |_, _| standard_normal::<T, _>(&mut rng));
        let prop = &x + m.factor().sample(&z) * T::lit(log_c.exp());
        let lp = (target.0)(&prop);
        let u: f64 = rng.random();
        let accept = lp.is_finite() && u.ln() < (lp - lx).as_f64();
        if accept {
            x = prop;
            lx = lp;
        }
        if it < burn {
            let rate = if accept { 1.0 } else { 0.0 };
            log_c += (rate - 0.234) / ((it + 1) as f64).sqrt();
        } else {
            accepted += accept as usize;
            kept.set_column(it - burn, &x);
        }
    }
    let acceptance = if n_iter > burn { accepted as f64 / (n_iter - burn) as f64 } else { 0.0 };
    Ok(SamplerOutput { draws: kept, acceptance, warning: !(0.05..=0.7).contains(&acceptance) })
}
