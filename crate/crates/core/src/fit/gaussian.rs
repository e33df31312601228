//! Heteroskedastic Gaussian models for first differences in MH scores.

use super::engine::{
    penalized_mode, select_smoothing, weighted_gram, FitOptions, Likelihood, ParamKind, PenaltySpec, RidgePenalty, SmoothPenalty, Structure,
};
use super::model::{cell_out_of_range, Covariates, DesignMapper, FittedModel, LogPosterior, SmoothingParam, VarianceModel};
use crate::basis::{null_space_of_vector, BasisMatrix, MarginPenalty, MarginSpec, SmoothSpec};
use crate::error::{Error, Result};
use crate::grid::DomainGrid;
use crate::linalg::Precision;
use crate::panel::DiffRecord;
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Mean structure of the MH difference model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MhForm {
    /// `α + β₁ y_prev + s₁(a, t)`.
    Baseline,
    /// Adds `β₂ M`.
    HasMain,
    /// `α + β₁ y_prev + (1 − M) s₁(a, t) + β₂ M + M s₂★(a, t)`.
    HasModified,
}

/// How the age × year terms are estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pooling {
    /// No age × year term.
    Complete,
    /// One random effect per cell (per cell and exposure arm when modified).
    Partial,
    /// Zero-mean tensor-product P-splines.
    Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhModelSpec {
    pub form: MhForm,
    pub pooling: Pooling,
    /// Interior knots per margin of the tensor smooths.
    pub knots: usize,
    /// Basis size of the log-σ spline in previous MH.
    pub variance_df: usize,
}

impl MhModelSpec {
    pub fn new(form: MhForm, pooling: Pooling) -> Self {
        Self { form, pooling, knots: 8, variance_df: 5 }
    }

    pub fn has_exposure(&self) -> bool {
        !matches!(self.form, MhForm::Baseline)
    }

    /// Variables the mean model adjusts for.
    pub fn adjustment_set(&self) -> Vec<&'static str> {
        match self.pooling {
            Pooling::Complete => vec!["previous MH"],
            _ => vec!["age", "calendar year", "previous MH"],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.form == MhForm::HasModified && self.pooling == Pooling::Complete {
            return Err(Error::InvalidSpec("effect modification needs partial pooling or tensor smooths".into()));
        }
        if self.variance_df < 4 {
            return Err(Error::InvalidSpec(format!("the cubic log-σ spline needs at least 4 basis functions, got {}", self.variance_df)));
        }
        Ok(())
    }
}

/// Column layout `[α, β₁, (β₂), term blocks...]` of the MH mean model.
#[derive(Debug, Clone)]
pub struct MhDesign<T: Scalar> {
    pub spec: MhModelSpec,
    pub grid: DomainGrid,
    pub smooth: Option<SmoothSpec<T>>,
}

impl<T: Scalar> MhDesign<T> {
    pub fn new(spec: &MhModelSpec, grid: &DomainGrid) -> Self {
        let smooth = (spec.pooling == Pooling::Tensor).then(|| SmoothSpec::tensor(grid, spec.knots));
        Self { spec: spec.clone(), grid: *grid, smooth }
    }

    pub fn n_fixed(&self) -> usize {
        2 + self.spec.has_exposure() as usize
    }

    pub fn n_terms(&self) -> usize {
        match (self.spec.pooling, self.spec.form) {
            (Pooling::Complete, _) => 0,
            (_, MhForm::HasModified) => 2,
            _ => 1,
        }
    }

    pub fn term_len(&self) -> usize {
        match self.spec.pooling {
            Pooling::Complete => 0,
            Pooling::Partial => self.grid.len(),
            Pooling::Tensor => self.smooth.as_ref().map_or(0, |s| s.n_basis()),
        }
    }

    pub fn n_full(&self) -> usize {
        self.n_fixed() + self.n_terms() * self.term_len()
    }

    /// Column of `β₂`, when the model has one.
    pub fn exposure_column(&self) -> Option<usize> {
        self.spec.has_exposure().then_some(2)
    }

    /// Which term block a row uses.
    fn arm(&self, exposed: bool) -> usize {
        if self.n_terms() == 2 && exposed {
            1
        } else {
            0
        }
    }

    pub fn row(&self, cov: &Covariates<T>) -> Result<(Vec<usize>, Vec<T>)> {
        let mut cols = vec![0, 1];
        let mut vals = vec![T::one(), cov.y_prev];
        if self.spec.has_exposure() {
            cols.push(2);
            vals.push(if cov.exposed { T::one() } else { T::zero() });
        }
        if self.n_terms() == 0 {
            return Ok((cols, vals));
        }
        let start = self.n_fixed() + self.arm(cov.exposed) * self.term_len();
        match self.spec.pooling {
            Pooling::Partial => {
                let idx = self.grid.index_of(cov.age, cov.year).ok_or_else(|| cell_out_of_range(&self.grid, cov))?;
                cols.push(start + idx);
                vals.push(T::one());
            }
            Pooling::Tensor => {
                let s = self.smooth.as_ref().expect("tensor design has a smooth");
                let (c, v) = s.row(&[T::lit(cov.age as f64), T::lit(cov.year as f64)])?;
                cols.extend(c.into_iter().map(|c| c + start));
                vals.extend(v);
            }
            Pooling::Complete => {}
        }
        Ok((cols, vals))
    }
}

/// Gaussian likelihood with fixed weights, held as sufficient statistics.
struct GaussianLik<T: Scalar> {
    a: Precision<T>,
    b: DVector<T>,
    ywy: T,
    scale: T,
    structure: Structure,
}

impl<T: Scalar> Likelihood<T> for GaussianLik<T> {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn structure(&self) -> Structure {
        self.structure
    }

    fn log_lik(&self, theta: &DVector<T>) -> T {
        -(self.ywy - self.b.dot(theta) * T::lit(2.0) + self.a.mul_vec(theta).dot(theta)) * T::lit(0.5)
    }

    fn derivatives(&self, theta: &DVector<T>) -> (T, DVector<T>, Precision<T>) {
        (self.log_lik(theta), &self.b - self.a.mul_vec(theta), self.a.clone())
    }

    fn scale(&self) -> T {
        self.scale
    }

    fn is_quadratic(&self) -> bool {
        true
    }
}

fn variance_spec<T: Scalar>(df: usize) -> MarginSpec<T> {
    MarginSpec::new(T::zero(), T::lit(100.0), df - 4)
}

/// Fits an MH difference model by alternating a penalized weighted
/// least-squares solve for the mean with Fisher scoring for `log σ`.
/// Smoothing parameters are reselected with the weights held fixed until
/// they settle, then frozen.
pub fn fit_mh<T: Scalar>(records: &[DiffRecord], grid: &DomainGrid, spec: &MhModelSpec, opts: &FitOptions) -> Result<FittedModel<T>> {
    spec.validate()?;
    if records.is_empty() {
        return Err(Error::EmptyData("no MH difference records".into()));
    }
    if spec.has_exposure() {
        let exposed = records.iter().filter(|r| r.exposed).count();
        if exposed == 0 || exposed == records.len() {
            return Err(Error::InvalidSpec("exposure effects need both exposed and unexposed records".into()));
        }
    }
    let design = MhDesign::<T>::new(spec, grid);
    let p_full = design.n_full();
    let n_fixed = design.n_fixed();
    let mut rows = BasisMatrix::with_columns(p_full);
    let mut y = Vec::with_capacity(records.len());
    let vspec = variance_spec::<T>(spec.variance_df);
    let vknots = vspec.knots();
    let mut h_rows = Vec::with_capacity(records.len());
    for r in records {
        let cov = Covariates { age: r.cell.age, year: r.cell.year, y_prev: T::lit(r.y_prev), exposed: r.exposed };
        let (c, v) = design.row(&cov)?;
        rows.push_row(&c, &v);
        y.push(T::lit(r.dy));
        h_rows.push(vspec.eval_nonzero(cov.y_prev, &vknots)?);
    }

    // Zero-mean constraints for the tensor smooths over the rows each one covers.
    let term_len = design.term_len();
    let n_terms = design.n_terms();
    let transform = if spec.pooling == Pooling::Tensor {
        let mut blocks = Vec::new();
        for arm in 0..n_terms {
            let start = n_fixed + arm * term_len;
            let mut means = DVector::<T>::zeros(term_len);
            let mut count = 0usize;
            for i in 0..rows.nrows() {
                let (c, v) = rows.row(i);
                let mut touched = false;
                for (&j, &x) in c.iter().zip(v) {
                    if j >= start && j < start + term_len {
                        means[j - start] += x;
                        touched = true;
                    }
                }
                count += touched as usize;
            }
            if count == 0 {
                return Err(Error::EmptyData("a smooth term has no rows".into()));
            }
            means /= T::from_count(count);
            blocks.push(null_space_of_vector(&means));
        }
        let p_free = n_fixed + blocks.iter().map(|z| z.ncols()).sum::<usize>();
        let mut t = DMatrix::<T>::zeros(p_full, p_free);
        for i in 0..n_fixed {
            t[(i, i)] = T::one();
        }
        let mut col = n_fixed;
        for (arm, z) in blocks.iter().enumerate() {
            t.view_mut((n_fixed + arm * term_len, col), (z.nrows(), z.ncols())).copy_from(z);
            col += z.ncols();
        }
        Some(t)
    } else {
        None
    };
    let p_free = transform.as_ref().map_or(p_full, |t| t.ncols());

    let structure = match spec.pooling {
        Pooling::Partial => Structure::Arrow { n_fixed },
        _ => Structure::Dense,
    };
    let mut pen = PenaltySpec::<T>::default();
    match spec.pooling {
        Pooling::Complete => {}
        Pooling::Partial => {
            for arm in 0..n_terms {
                let name = match (n_terms, arm) {
                    (1, _) => "sigma",
                    (_, 0) => "sigma_unexposed",
                    _ => "sigma_exposed",
                };
                let s = pen.add_param(ParamKind::Sigma, name);
                pen.ridges.push(RidgePenalty { start: n_fixed + arm * term_len, len: term_len, param: s });
            }
        }
        Pooling::Tensor => {
            let smooth = design.smooth.as_ref().expect("tensor design");
            let (ma, mb) = (&smooth.margins[0], &smooth.margins[1]);
            let (na, nb) = (ma.n_basis(), mb.n_basis());
            let pa = MarginPenalty::<T>::new(na, ma.penalty_order)?;
            let pb = MarginPenalty::<T>::new(nb, mb.penalty_order)?;
            let ca = pa.s.kronecker(&DMatrix::<T>::identity(nb, nb));
            let cb = DMatrix::<T>::identity(na, na).kronecker(&pb.s);
            let t = transform.as_ref().expect("tensor transform");
            let mut col = n_fixed;
            for arm in 0..n_terms {
                let z = t.view((n_fixed + arm * term_len, col), (term_len, term_len - 1)).into_owned();
                let suffix = if arm == 0 { "s1" } else { "s2" };
                let ia = pen.add_param(ParamKind::Lambda, format!("lambda_age_{suffix}"));
                let ib = pen.add_param(ParamKind::Lambda, format!("lambda_year_{suffix}"));
                pen.smooths.push(SmoothPenalty {
                    start: col,
                    components: vec![z.transpose() * &ca * &z, z.transpose() * &cb * &z],
                    margins: vec![pa.clone(), pb.clone()],
                    params: vec![ia, ib],
                });
                col += term_len - 1;
            }
        }
    }

    let n = records.len();
    let mean_y = y.iter().copied().sum::<T>() / T::from_count(n);
    let var_y = y.iter().map(|&v| (v - mean_y) * (v - mean_y)).sum::<T>() / T::from_count(n);
    let q = vspec.n_basis();
    let mut gamma = DVector::from_element(q, (var_y.max(T::eps())).sqrt().ln());
    let log_sigma = |gamma: &DVector<T>, i: usize| -> T {
        let (f, v) = &h_rows[i];
        v.iter().enumerate().map(|(j, &x)| x * gamma[f + j]).sum()
    };

    let tol_gamma = T::lit(opts.grad_tol).max(T::lit(64.0) * T::eps() * T::from_count(n));
    let mut theta = DVector::<T>::zeros(p_free);
    let mut rho: Option<Vec<f64>> = None;
    let mut values: Vec<T> = Vec::new();
    let mut frozen = pen.n_params() == 0;
    let mut selections = 0;
    let mut final_fit = None;
    let mut gamma_settled = false;

    for outer in 0..opts.max_iter {
        let w: Vec<T> = (0..n).map(|i| (-(log_sigma(&gamma, i) * T::lit(2.0))).exp()).collect();
        let (a_full, b_full, ywy) = weighted_gram(&rows, &w, &y, structure);
        let (a, b) = match (&transform, a_full) {
            (Some(t), Precision::Dense(af)) => (Precision::Dense(t.transpose() * af * t), t.transpose() * b_full),
            (_, af) => (af, b_full),
        };
        let scale = (0..n).map(|i| w[i] * (T::one() + y[i].abs()) * (T::one() + T::lit(records[i].y_prev).abs())).sum::<T>();
        let lik = GaussianLik { a, b, ywy, scale, structure };
        let tol_mean = T::lit(opts.grad_tol).max(T::lit(64.0) * T::eps() * scale);

        if !frozen {
            let sel = select_smoothing(&lik, &pen, &theta, rho.as_deref(), opts)?;
            let new_rho: Vec<f64> = sel.values.iter().map(|v| v.as_f64().log10()).collect();
            let settled = rho.as_ref().is_some_and(|r| r.iter().zip(&new_rho).all(|(a, b)| (a - b).abs() < 2.0 * opts.refine_tol));
            selections += 1;
            frozen = settled || selections >= 4;
            rho = Some(new_rho);
            values = sel.values;
        } else if gamma_settled && final_fit.is_some() {
            let grad = lik.derivatives(&theta).1 - pen.apply(&values, &theta);
            if grad.amax() <= tol_mean {
                break;
            }
        }
        let fit = penalized_mode(&lik, &pen, &values, &theta, opts)?;
        theta = fit.theta.clone();
        let log_post = {
            let (a, b, ywy) = (lik.a.clone(), lik.b.clone(), lik.ywy);
            let (pen, vals) = (pen.clone(), values.clone());
            LogPosterior(Arc::new(move |th: &DVector<T>| {
                -(ywy - b.dot(th) * T::lit(2.0) + a.mul_vec(th).dot(th)) * T::lit(0.5) - pen.apply(&vals, th).dot(th) * T::lit(0.5)
            }))
        };
        final_fit = Some((fit, log_post));

        // Fisher scoring for the log-σ coefficients given the residuals.
        let full = match &transform {
            Some(t) => t * &theta,
            None => theta.clone(),
        };
        let fitted = rows.mul_vec(&full);
        let r2: Vec<T> = (0..n).map(|i| (y[i] - fitted[i]) * (y[i] - fitted[i])).collect();
        gamma_settled = false;
        for inner in 0..opts.max_iter {
            let mut g = DVector::<T>::zeros(q);
            let mut info = DMatrix::<T>::zeros(q, q);
            for i in 0..n {
                let (f, v) = &h_rows[i];
                let e = r2[i] * (-(log_sigma(&gamma, i) * T::lit(2.0))).exp() - T::one();
                for (j, &x) in v.iter().enumerate() {
                    g[f + j] += x * e;
                    for (k, &z) in v.iter().enumerate() {
                        info[(f + j, f + k)] += x * z * T::lit(2.0);
                    }
                }
            }
            if g.amax() <= tol_gamma {
                gamma_settled = inner == 0;
                break;
            }
            let step = Precision::Dense(info).factor("factorizing the variance-model information")?.solve(&g);
            gamma += step;
            if inner + 1 == opts.max_iter {
                return Err(Error::NonConvergence { iterations: inner + 1, gradient: g.amax().as_f64() });
            }
        }
        if outer + 1 == opts.max_iter {
            return Err(Error::NonConvergence { iterations: outer + 1, gradient: f64::NAN });
        }
    }

    let (fit, log_post) = final_fit.expect("at least one mean-model solve");
    let mut info = DMatrix::<T>::zeros(q, q);
    for (f, v) in &h_rows {
        for (j, &x) in v.iter().enumerate() {
            for (k, &z) in v.iter().enumerate() {
                info[(f + j, f + k)] += x * z * T::lit(2.0);
            }
        }
    }
    let vfactor = Precision::Dense(info).factor("factorizing the variance-model information")?;
    let smoothing = pen.names.iter().zip(&values).map(|(n, &v)| SmoothingParam { name: n.clone(), value: v }).collect();
    Ok(FittedModel {
        mapper: DesignMapper::Mh(design),
        transform,
        mode: fit.theta,
        factor: fit.factor,
        smoothing,
        log_marginal: fit.laml,
        iterations: fit.iterations,
        variance: Some(VarianceModel { spec: vspec, gamma, factor: vfactor }),
        log_posterior: Some(log_post),
    })
}

/// Residuals of `records` standardized by the fitted mean and scale.
pub fn standardized_residuals<T: Scalar>(model: &FittedModel<T>, records: &[DiffRecord]) -> Result<Vec<T>> {
    records
        .iter()
        .map(|r| {
            let cov = Covariates { age: r.cell.age, year: r.cell.year, y_prev: T::lit(r.y_prev), exposed: r.exposed };
            let mu = model.linear_predictor(&cov)?;
            Ok((T::lit(r.dy) - mu) / model.sigma(cov.y_prev)?)
        })
        .collect()
}
