//! Penalized logistic models on cell-aggregated binomial counts.

use super::engine::{penalized_mode, select_smoothing, FitOptions, Likelihood, ParamKind, PenaltySpec, RidgePenalty, SmoothPenalty, Structure};
use super::model::{Covariates, DesignMapper, FittedModel, LogPosterior, SmoothingParam};
use crate::basis::{BasisMatrix, MarginPenalty, SmoothSpec};
use crate::error::{Error, Result};
use crate::linalg::Precision;
use crate::panel::CellCounts;
use crate::scalar::{log1p_exp, logit, sigmoid, Scalar};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// Structure of the logit surface.
#[derive(Debug, Clone, PartialEq)]
pub enum BinomialStructure<T> {
    /// One logit shared by all cells.
    Complete,
    /// `logit p = π₀ + u_at`, `u_at ~ N(0, σ²)`; `sigma` fixes σ instead of selecting it.
    PartialPool { sigma: Option<T> },
    /// `logit p = s(a, t)` as a tensor-product P-spline.
    Tensor(SmoothSpec<T>),
}

#[derive(Debug, Clone)]
pub(crate) struct BinomialLik<T: Scalar> {
    rows: BasisMatrix<T>,
    n: Vec<T>,
    k: Vec<T>,
    structure: Structure,
}

impl<T: Scalar> BinomialLik<T> {
    fn eta(&self, theta: &DVector<T>) -> Vec<T> {
        self.rows.mul_vec(theta)
    }
}

impl<T: Scalar> Likelihood<T> for BinomialLik<T> {
    fn dim(&self) -> usize {
        self.rows.ncols()
    }

    fn structure(&self) -> Structure {
        self.structure
    }

    fn log_lik(&self, theta: &DVector<T>) -> T {
        self.eta(theta).iter().zip(&self.n).zip(&self.k).map(|((&e, &n), &k)| k * e - n * log1p_exp(e)).sum()
    }

    fn derivatives(&self, theta: &DVector<T>) -> (T, DVector<T>, Precision<T>) {
        let p = self.dim();
        let mut grad = DVector::zeros(p);
        let mut h = self.structure.zeros::<T>(p);
        let mut ll = T::zero();
        for (i, e) in self.eta(theta).into_iter().enumerate() {
            let (n, k) = (self.n[i], self.k[i]);
            let pr = sigmoid(e);
            ll += k * e - n * log1p_exp(e);
            let (c, v) = self.rows.row(i);
            let r = k - n * pr;
            for (&j, &x) in c.iter().zip(v) {
                grad[j] += x * r;
            }
            super::engine::accumulate_outer(&mut h, c, v, n * pr * (T::one() - pr));
        }
        super::engine::finish_outer(&mut h);
        (ll, grad, h)
    }

    fn scale(&self) -> T {
        self.n.iter().copied().sum::<T>().max(T::one())
    }
}

fn tensor_penalty_spec<T: Scalar>(spec: &SmoothSpec<T>, start: usize, pen: &mut PenaltySpec<T>) -> Result<()> {
    let (ma, mb) = (&spec.margins[0], &spec.margins[1]);
    let (na, nb) = (ma.n_basis(), mb.n_basis());
    let pa = MarginPenalty::<T>::new(na, ma.penalty_order)?;
    let pb = MarginPenalty::<T>::new(nb, mb.penalty_order)?;
    let ca = pa.s.kronecker(&DMatrix::<T>::identity(nb, nb));
    let cb = DMatrix::<T>::identity(na, na).kronecker(&pb.s);
    let ia = pen.add_param(ParamKind::Lambda, "lambda_age");
    let ib = pen.add_param(ParamKind::Lambda, "lambda_year");
    pen.smooths.push(SmoothPenalty { start, components: vec![ca, cb], margins: vec![pa, pb], params: vec![ia, ib] });
    Ok(())
}

/// Fits a penalized logistic model to `counts` and returns its Laplace posterior.
pub fn fit_binomial<T: Scalar>(counts: &CellCounts, structure: &BinomialStructure<T>, opts: &FitOptions) -> Result<FittedModel<T>> {
    let grid = counts.grid;
    if counts.total_n() == 0 {
        return Err(Error::EmptyData("no at-risk records to fit".into()));
    }
    let mapper = match structure {
        BinomialStructure::Complete => DesignMapper::Intercept,
        BinomialStructure::PartialPool { .. } => DesignMapper::CellLevels { grid },
        BinomialStructure::Tensor(spec) => {
            spec.validate()?;
            if spec.dimension() != 2 {
                return Err(Error::InvalidSpec("a binomial surface needs an age and a year margin".into()));
            }
            if spec.constraint != crate::basis::Constraint::None {
                return Err(Error::InvalidSpec("the logit surface has no separate intercept; use an unconstrained smooth".into()));
            }
            DesignMapper::Tensor(spec.clone())
        }
    };
    let p = mapper.n_full();
    let mut rows = BasisMatrix::with_columns(p);
    let (mut ns, mut ks) = (Vec::new(), Vec::new());
    for i in counts.populated() {
        let cell = grid.cell(i);
        let (c, v) = mapper.row(&Covariates::cell(cell.age, cell.year))?;
        rows.push_row(&c, &v);
        ns.push(T::lit(counts.n[i] as f64));
        ks.push(T::lit(counts.k[i] as f64));
    }
    let layout = match structure {
        BinomialStructure::PartialPool { .. } => Structure::Arrow { n_fixed: 1 },
        _ => Structure::Dense,
    };
    let lik = Arc::new(BinomialLik { rows, n: ns, k: ks, structure: layout });

    let mut pen = PenaltySpec::default();
    let mut fixed: Option<Vec<T>> = None;
    match structure {
        BinomialStructure::Complete => fixed = Some(Vec::new()),
        BinomialStructure::PartialPool { sigma } => {
            let s = pen.add_param(ParamKind::Sigma, "sigma");
            pen.ridges.push(RidgePenalty { start: 1, len: grid.len(), param: s });
            if let Some(s) = sigma {
                if !(*s > T::zero()) {
                    return Err(Error::InvalidSpec("random-effect scale must be positive".into()));
                }
                fixed = Some(vec![*s]);
            }
        }
        BinomialStructure::Tensor(spec) => {
            tensor_penalty_spec(spec, 0, &mut pen)?;
            fixed = spec.penalty_weights.clone();
        }
    }

    // Start from the pooled logit, which every structure can represent.
    let (tn, tk) = (counts.total_n() as f64, counts.total_k() as f64);
    let p0 = T::lit(logit((tk + 0.5) / (tn + 1.0)));
    let start = match structure {
        BinomialStructure::Tensor(_) => DVector::from_element(p, p0),
        _ => {
            let mut s = DVector::zeros(p);
            s[0] = p0;
            s
        }
    };

    let (values, fit) = match fixed {
        Some(v) => {
            let fit = penalized_mode(lik.as_ref(), &pen, &v, &start, opts)?;
            (v, fit)
        }
        None => {
            let sel = select_smoothing(lik.as_ref(), &pen, &start, None, opts)?;
            (sel.values, sel.fit)
        }
    };

    let smoothing = pen.names.iter().zip(&values).map(|(n, &v)| SmoothingParam { name: n.clone(), value: v }).collect();
    let post_lik = Arc::clone(&lik);
    let post_pen = pen.clone();
    let post_vals = values.clone();
    let log_posterior = LogPosterior(Arc::new(move |th: &DVector<T>| {
        post_lik.log_lik(th) - post_pen.apply(&post_vals, th).dot(th) * T::lit(0.5)
    }));
    Ok(FittedModel {
        mapper,
        transform: None,
        mode: fit.theta,
        factor: fit.factor,
        smoothing,
        log_marginal: fit.laml,
        iterations: fit.iterations,
        variance: None,
        log_posterior: Some(log_posterior),
    })
}
