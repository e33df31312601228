//! Penalized Newton iterations, the Laplace-approximate marginal likelihood,
//! and grid-plus-golden-section selection of smoothing parameters.

use crate::basis::{tensor_log_pdet, BasisMatrix, MarginPenalty};
use crate::error::{Error, Result};
use crate::linalg::{ArrowMatrix, Precision, PrecisionFactor};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

/// Tuning for the penalized fits.
#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Grid points per smoothing parameter.
    pub grid_points: usize,
    /// log10 search range for random-effect standard deviations.
    pub sigma_log10: (f64, f64),
    /// log10 search range for spline penalty weights.
    pub lambda_log10: (f64, f64),
    /// Golden-section stopping width in log10 units.
    pub refine_tol: f64,
    /// Coordinate sweeps over several smoothing parameters.
    pub max_passes: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            grad_tol: 1e-8,
            grid_points: 25,
            sigma_log10: (-3.0, 1.0),
            lambda_log10: (-4.0, 6.0),
            refine_tol: 0.01,
            max_passes: 4,
        }
    }
}

/// Sparsity layout of the likelihood Hessian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Structure {
    Dense,
    /// Leading `n_fixed` columns dense; every row touches at most one later column.
    Arrow { n_fixed: usize },
}

impl Structure {
    pub fn zeros<T: Scalar>(self, dim: usize) -> Precision<T> {
        match self {
            Structure::Dense => Precision::Dense(DMatrix::zeros(dim, dim)),
            Structure::Arrow { n_fixed } => Precision::Arrow(ArrowMatrix::zeros(n_fixed, dim - n_fixed)),
        }
    }
}

/// Adds `w x xᵀ` for a sparse row `x`.
pub(crate) fn accumulate_outer<T: Scalar>(p: &mut Precision<T>, cols: &[usize], vals: &[T], w: T) {
    match p {
        Precision::Dense(m) => {
            for (a, (&ca, &va)) in cols.iter().zip(vals).enumerate() {
                let wa = w * va;
                for (&cb, &vb) in cols[a..].iter().zip(&vals[a..]) {
                    let (i, j) = if ca <= cb { (ca, cb) } else { (cb, ca) };
                    m[(i, j)] += wa * vb;
                }
            }
        }
        Precision::Arrow(arrow) => {
            let k = arrow.n_fixed();
            for (&ca, &va) in cols.iter().zip(vals) {
                let wa = w * va;
                for (&cb, &vb) in cols.iter().zip(vals) {
                    match (ca < k, cb < k) {
                        (true, true) => arrow.corner[(ca, cb)] += wa * vb,
                        (true, false) => arrow.border[(ca, cb - k)] += wa * vb,
                        (false, false) if ca == cb => arrow.diag[ca - k] += wa * vb,
                        _ => {}
                    }
                }
            }
        }
    }
}

/// Mirrors the upper triangle accumulated by [`accumulate_outer`].
pub(crate) fn finish_outer<T: Scalar>(p: &mut Precision<T>) {
    if let Precision::Dense(m) = p {
        for i in 0..m.nrows() {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
    }
}

fn add_precision<T: Scalar>(into: &mut Precision<T>, other: &Precision<T>) {
    match (into, other) {
        (Precision::Dense(a), Precision::Dense(b)) => *a += b,
        (Precision::Arrow(a), Precision::Arrow(b)) => {
            a.corner += &b.corner;
            a.border += &b.border;
            a.diag += &b.diag;
        }
        _ => unreachable!("mixed precision layouts"),
    }
}

/// Weighted Gram matrix `XᵀWX`, `XᵀWy` and `yᵀWy`, reduced over fixed-size
/// chunks in order so the result does not depend on thread scheduling.
pub(crate) fn weighted_gram<T: Scalar>(
    rows: &BasisMatrix<T>,
    w: &[T],
    y: &[T],
    structure: Structure,
) -> (Precision<T>, DVector<T>, T) {
    const CHUNK: usize = 8192;
    let p = rows.ncols();
    let n = rows.nrows();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<(Precision<T>, DVector<T>, T)> = starts
        .par_iter()
        .map(|&s| {
            let mut a = structure.zeros::<T>(p);
            let mut b = DVector::zeros(p);
            let mut ywy = T::zero();
            for i in s..(s + CHUNK).min(n) {
                let (c, v) = rows.row(i);
                accumulate_outer(&mut a, c, v, w[i]);
                for (&j, &x) in c.iter().zip(v) {
                    b[j] += w[i] * x * y[i];
                }
                ywy += w[i] * y[i] * y[i];
            }
            (a, b, ywy)
        })
        .collect();
    let mut a = structure.zeros::<T>(p);
    let mut b = DVector::zeros(p);
    let mut ywy = T::zero();
    for (pa, pb, py) in &parts {
        add_precision(&mut a, pa);
        b += pb;
        ywy += *py;
    }
    finish_outer(&mut a);
    (a, b, ywy)
}

/// A log-likelihood in the free (constrained) coordinates.
pub trait Likelihood<T: Scalar>: Send + Sync {
    fn dim(&self) -> usize;
    fn structure(&self) -> Structure;
    fn log_lik(&self, theta: &DVector<T>) -> T;
    /// Log-likelihood, gradient, and negative Hessian (or expected information).
    fn derivatives(&self, theta: &DVector<T>) -> (T, DVector<T>, Precision<T>);
    /// Magnitude of the gradient's summands, for the stopping tolerance.
    fn scale(&self) -> T;
    /// True when the log-likelihood is exactly quadratic, so one Newton step
    /// reaches the mode.
    fn is_quadratic(&self) -> bool {
        false
    }
}

/// What a smoothing parameter controls. Values are searched on a log10 scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Penalty weight λ.
    Lambda,
    /// Random-effect standard deviation σ (precision 1/σ²).
    Sigma,
}

impl ParamKind {
    /// Multiplier applied to the unit penalty.
    pub fn strength<T: Scalar>(self, value: T) -> T {
        match self {
            ParamKind::Lambda => value,
            ParamKind::Sigma => T::one() / (value * value),
        }
    }
}

/// A smooth term's penalty in free coordinates `[start, start + len)`.
#[derive(Debug, Clone)]
pub struct SmoothPenalty<T: Scalar> {
    pub start: usize,
    /// Unit penalty per margin, already mapped through any constraint.
    pub components: Vec<DMatrix<T>>,
    pub margins: Vec<MarginPenalty<T>>,
    pub params: Vec<usize>,
}

/// `I/σ²` on free coordinates `[start, start + len)`.
#[derive(Debug, Clone, Copy)]
pub struct RidgePenalty {
    pub start: usize,
    pub len: usize,
    pub param: usize,
}

#[derive(Debug, Clone)]
pub struct PenaltySpec<T: Scalar> {
    pub kinds: Vec<ParamKind>,
    pub names: Vec<String>,
    pub smooths: Vec<SmoothPenalty<T>>,
    pub ridges: Vec<RidgePenalty>,
}

impl<T: Scalar> Default for PenaltySpec<T> {
    fn default() -> Self {
        Self { kinds: Vec::new(), names: Vec::new(), smooths: Vec::new(), ridges: Vec::new() }
    }
}

impl<T: Scalar> PenaltySpec<T> {
    pub fn n_params(&self) -> usize {
        self.kinds.len()
    }

    pub fn add_param(&mut self, kind: ParamKind, name: impl Into<String>) -> usize {
        self.kinds.push(kind);
        self.names.push(name.into());
        self.kinds.len() - 1
    }

    fn strengths(&self, values: &[T]) -> Vec<T> {
        self.kinds.iter().zip(values).map(|(k, &v)| k.strength(v)).collect()
    }

    /// `K(values) θ`.
    pub fn apply(&self, values: &[T], theta: &DVector<T>) -> DVector<T> {
        let s = self.strengths(values);
        let mut out = DVector::zeros(theta.len());
        for sm in &self.smooths {
            let len = sm.components[0].nrows();
            let seg = theta.rows(sm.start, len);
            for (c, &pi) in sm.components.iter().zip(&sm.params) {
                let add = c * seg * s[pi];
                let mut dst = out.rows_mut(sm.start, len);
                dst += add;
            }
        }
        for r in &self.ridges {
            for i in r.start..r.start + r.len {
                out[i] += theta[i] * s[r.param];
            }
        }
        out
    }

    pub fn add_to(&self, values: &[T], p: &mut Precision<T>) {
        let s = self.strengths(values);
        match p {
            Precision::Dense(m) => {
                for sm in &self.smooths {
                    let len = sm.components[0].nrows();
                    for (c, &pi) in sm.components.iter().zip(&sm.params) {
                        let mut block = m.view_mut((sm.start, sm.start), (len, len));
                        block += c * s[pi];
                    }
                }
                for r in &self.ridges {
                    for i in r.start..r.start + r.len {
                        m[(i, i)] += s[r.param];
                    }
                }
            }
            Precision::Arrow(a) => {
                assert!(self.smooths.is_empty(), "smooth penalties need a dense layout");
                let k = a.n_fixed();
                for r in &self.ridges {
                    assert!(r.start >= k, "ridge penalty on fixed columns");
                    for i in r.start..r.start + r.len {
                        a.diag[i - k] += s[r.param];
                    }
                }
            }
        }
    }

    /// Log pseudo-determinant of `K(values)`, up to a constant that does not
    /// depend on the values.
    pub fn log_pdet(&self, values: &[T]) -> T {
        let s = self.strengths(values);
        let mut acc = T::zero();
        for sm in &self.smooths {
            acc += match sm.margins.len() {
                1 => {
                    let m = &sm.margins[0];
                    m.eigenvalues[m.null_dim..].iter().map(|&e| (s[sm.params[0]] * e).ln()).sum::<T>()
                }
                _ => tensor_log_pdet(&sm.margins[0], &sm.margins[1], s[sm.params[0]], s[sm.params[1]]),
            };
        }
        for r in &self.ridges {
            acc += T::from_count(r.len) * s[r.param].ln();
        }
        acc
    }
}

/// Penalized mode and the factorized posterior precision at it.
#[derive(Debug, Clone)]
pub struct ModeFit<T: Scalar> {
    pub theta: DVector<T>,
    pub log_lik: T,
    pub penalty: T,
    pub factor: PrecisionFactor<T>,
    pub iterations: usize,
    /// Laplace-approximate log marginal likelihood (up to a constant).
    pub laml: T,
}

/// Maximizes `ℓ(θ) − ½ θᵀKθ` by Newton's method with step halving.
pub fn penalized_mode<T: Scalar>(
    lik: &dyn Likelihood<T>,
    pen: &PenaltySpec<T>,
    values: &[T],
    start: &DVector<T>,
    opts: &FitOptions,
) -> Result<ModeFit<T>> {
    let tol = T::lit(opts.grad_tol).max(T::lit(64.0) * T::eps() * lik.scale());
    let dec_tol = T::lit(1e-12).max(T::lit(64.0) * T::eps());
    let objective = |th: &DVector<T>| lik.log_lik(th) - pen.apply(values, th).dot(th) * T::lit(0.5);
    let mut theta = start.clone();
    let mut max_grad = T::zero();
    if lik.is_quadratic() {
        let (_, g, mut h) = lik.derivatives(&theta);
        let grad = g - pen.apply(values, &theta);
        pen.add_to(values, &mut h);
        let factor = h.factor("factorizing the penalized Hessian")?;
        theta += factor.solve(&grad);
        let ll = lik.log_lik(&theta);
        let penalty = pen.apply(values, &theta).dot(&theta) * T::lit(0.5);
        let laml = ll - penalty + pen.log_pdet(values) * T::lit(0.5) - factor.log_det() * T::lit(0.5);
        return Ok(ModeFit { theta, log_lik: ll, penalty, factor, iterations: 1, laml });
    }
    for it in 0..=opts.max_iter {
        let (ll, g, mut h) = lik.derivatives(&theta);
        let k_theta = pen.apply(values, &theta);
        let grad = g - &k_theta;
        max_grad = grad.amax();
        pen.add_to(values, &mut h);
        let factor = h.factor("factorizing the penalized Hessian")?;
        let step = factor.solve(&grad);
        let current = ll - k_theta.dot(&theta) * T::lit(0.5);
        // Newton decrement gᵀH⁻¹g: twice the objective gain still available.
        // It stays meaningful when large penalties make the raw gradient
        // dominated by rounding.
        let decrement = grad.dot(&step);
        if max_grad <= tol || decrement <= dec_tol * (T::one() + current.abs()) {
            let penalty = k_theta.dot(&theta) * T::lit(0.5);
            let laml = ll - penalty + pen.log_pdet(values) * T::lit(0.5) - factor.log_det() * T::lit(0.5);
            return Ok(ModeFit { theta, log_lik: ll, penalty, factor, iterations: it, laml });
        }
        if it == opts.max_iter {
            break;
        }
        let mut t = T::one();
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &theta + &step * t;
            let val = objective(&cand);
            if val.is_finite() && val >= current - T::eps() * current.abs() * T::lit(16.0) {
                theta = cand;
                accepted = true;
                break;
            }
            t *= T::lit(0.5);
        }
        if !accepted {
            // No ascent along the Newton direction: the mode is as good as the
            // arithmetic allows.
            let (ll, g, mut h) = lik.derivatives(&theta);
            let k_theta = pen.apply(values, &theta);
            let grad = g - &k_theta;
            pen.add_to(values, &mut h);
            let factor = h.factor("factorizing the penalized Hessian")?;
            if grad.amax() <= tol * T::lit(1e3) {
                let penalty = k_theta.dot(&theta) * T::lit(0.5);
                let laml = ll - penalty + pen.log_pdet(values) * T::lit(0.5) - factor.log_det() * T::lit(0.5);
                return Ok(ModeFit { theta, log_lik: ll, penalty, factor, iterations: it + 1, laml });
            }
            return Err(Error::NonConvergence { iterations: it + 1, gradient: grad.amax().as_f64() });
        }
    }
    Err(Error::NonConvergence { iterations: opts.max_iter, gradient: max_grad.as_f64() })
}

/// Smoothing values chosen by the search, with the fit at them.
#[derive(Debug, Clone)]
pub struct Selection<T: Scalar> {
    pub values: Vec<T>,
    pub fit: ModeFit<T>,
}

fn range_for(kind: ParamKind, opts: &FitOptions) -> (f64, f64) {
    match kind {
        ParamKind::Lambda => opts.lambda_log10,
        ParamKind::Sigma => opts.sigma_log10,
    }
}

/// Picks smoothing values maximizing the Laplace marginal likelihood: a log10
/// grid per parameter, refined by golden-section search, sweeping
/// coordinates in turn when there are several parameters.
pub fn select_smoothing<T: Scalar>(
    lik: &dyn Likelihood<T>,
    pen: &PenaltySpec<T>,
    start: &DVector<T>,
    initial_log10: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<Selection<T>> {
    let np = pen.n_params();
    let to_values = |rho: &[f64]| -> Vec<T> { rho.iter().map(|&r| T::lit(10f64.powf(r))).collect() };
    if np == 0 {
        let fit = penalized_mode(lik, pen, &[], start, opts)?;
        return Ok(Selection { values: Vec::new(), fit });
    }
    let mut rho: Vec<f64> = match initial_log10 {
        Some(r) => r.to_vec(),
        None => pen.kinds.iter().map(|&k| { let (a, b) = range_for(k, opts); 0.5 * (a + b) }).collect(),
    };
    let mut warm = start.clone();
    let mut best: Option<(f64, ModeFit<T>)> = None;

    let eval = |rho: &[f64], warm: &DVector<T>| -> Option<ModeFit<T>> {
        penalized_mode(lik, pen, &to_values(rho), warm, opts).ok().filter(|f| f.laml.is_finite())
    };

    for pass in 0..opts.max_passes.max(1) {
        let before = rho.clone();
        for j in 0..np {
            let (lo, hi) = range_for(pen.kinds[j], opts);
            let n = opts.grid_points.max(2);
            let grid: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
            let fits: Vec<Option<ModeFit<T>>> = grid
                .par_iter()
                .map(|&g| {
                    let mut r = rho.clone();
                    r[j] = g;
                    eval(&r, &warm)
                })
                .collect();
            let (ib, fb) = fits
                .iter()
                .enumerate()
                .filter_map(|(i, f)| f.as_ref().map(|f| (i, f)))
                .max_by(|a, b| a.1.laml.partial_cmp(&b.1.laml).unwrap())
                .ok_or_else(|| Error::NonConvergence { iterations: opts.max_iter, gradient: f64::NAN })?;
            let mut best_j = (grid[ib], fb.clone());
            warm = fb.theta.clone();

            // Golden-section refinement between the neighbouring grid points.
            let (mut a, mut b) = (grid[ib.saturating_sub(1)], grid[(ib + 1).min(n - 1)]);
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            let probe = |x: f64, warm: &mut DVector<T>, best_j: &mut (f64, ModeFit<T>)| -> f64 {
                let mut r = rho.clone();
                r[j] = x;
                match eval(&r, warm) {
                    Some(f) => {
                        let v = f.laml.as_f64();
                        *warm = f.theta.clone();
                        if v > best_j.1.laml.as_f64() {
                            *best_j = (x, f);
                        }
                        v
                    }
                    None => f64::NEG_INFINITY,
                }
            };
            let mut c = b - phi * (b - a);
            let mut d = a + phi * (b - a);
            let mut fc = probe(c, &mut warm, &mut best_j);
            let mut fd = probe(d, &mut warm, &mut best_j);
            while (b - a).abs() > opts.refine_tol {
                if fc >= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - phi * (b - a);
                    fc = probe(c, &mut warm, &mut best_j);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + phi * (b - a);
                    fd = probe(d, &mut warm, &mut best_j);
                }
            }
            rho[j] = best_j.0;
            warm = best_j.1.theta.clone();
            let v = best_j.1.laml.as_f64();
            if best.as_ref().map_or(true, |(bv, _)| v >= *bv) {
                best = Some((v, best_j.1));
            }
        }
        let moved = rho.iter().zip(&before).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if np == 1 || (pass > 0 && moved < opts.refine_tol) {
            break;
        }
    }
    // Refit at the final coordinates so the returned fit matches the values.
    let values = to_values(&rho);
    let fit = match best {
        Some((_, f)) if f.theta.len() == warm.len() => penalized_mode(lik, pen, &values, &f.theta, opts)?,
        _ => penalized_mode(lik, pen, &values, &warm, opts)?,
    };
    Ok(Selection { values, fit })
}
