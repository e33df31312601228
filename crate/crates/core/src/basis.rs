//! B-spline bases, tensor products, difference penalties and identifiability
//! constraints for the smooth terms.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Identifiability constraint applied to a smooth term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Constraint {
    #[default]
    None,
    /// Empirical mean of the smooth over the training rows is zero.
    ZeroMean,
    /// Smooth is `1 + zero-mean part` (varying-coefficient form).
    MeanOne,
}

/// Uniform B-spline layout on one margin.
///
/// Knots are spaced evenly over `[lo, hi]` with `degree` extra knots beyond
/// each end; evaluation is valid on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MarginSpec<T> {
    pub lo: T,
    pub hi: T,
    pub interior_knots: usize,
    pub degree: usize,
    pub penalty_order: usize,
}

impl<T: Scalar> MarginSpec<T> {
    pub fn new(lo: T, hi: T, interior_knots: usize) -> Self {
        Self { lo, hi, interior_knots, degree: 3, penalty_order: 2 }
    }

    /// Range taken from the data, as for a training-set smooth.
    pub fn from_data(x: &[T], interior_knots: usize) -> Result<Self> {
        let (lo, hi) = min_max(x).ok_or_else(|| Error::EmptyData("no covariate values for knot placement".into()))?;
        Ok(Self::new(lo, hi, interior_knots))
    }

    pub fn with_degree(mut self, degree: usize) -> Self {
        self.degree = degree;
        self
    }

    pub fn with_penalty_order(mut self, order: usize) -> Self {
        self.penalty_order = order;
        self
    }

    pub fn n_basis(&self) -> usize {
        self.interior_knots + self.degree + 1
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hi > self.lo) {
            return Err(Error::InvalidSpec(format!("basis range [{}, {}] is empty", self.lo, self.hi)));
        }
        if self.n_basis() <= self.penalty_order {
            return Err(Error::InvalidSpec(format!(
                "{} basis functions cannot carry an order-{} difference penalty",
                self.n_basis(),
                self.penalty_order
            )));
        }
        Ok(())
    }

    fn spacing(&self) -> T {
        (self.hi - self.lo) / T::from_count(self.interior_knots + 1)
    }

    /// Full knot vector, `n_basis + degree + 1` entries.
    pub fn knots(&self) -> Vec<T> {
        let h = self.spacing();
        let total = self.n_basis() + self.degree + 1;
        (0..total)
            .map(|j| self.lo + h * (T::from_count(j) - T::from_count(self.degree)))
            .collect()
    }

    /// Same layout with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: T) -> Self {
        Self { lo: self.lo * factor, hi: self.hi * factor, ..*self }
    }

    /// Nonzero basis values at `x`: returns the first column index and the
    /// `degree + 1` values starting there.
    pub fn eval_nonzero(&self, x: T, knots: &[T]) -> Result<(usize, Vec<T>)> {
        let width = self.hi - self.lo;
        let slack = T::lit(1e-9) * (T::one() + width.abs());
        if !(x >= self.lo - slack && x <= self.hi + slack) {
            return Err(Error::OutOfRange { value: x.as_f64(), lo: self.lo.as_f64(), hi: self.hi.as_f64() });
        }
        let x = x.max(self.lo).min(self.hi);
        let p = self.degree;
        let nb = self.n_basis();
        let h = self.spacing();
        let raw = ((x - self.lo) / h).floor().to_i64().unwrap_or(0).max(0) as usize;
        let mut span = (raw + p).min(nb - 1);
        while span > p && x < knots[span] {
            span -= 1;
        }
        while span < nb - 1 && x >= knots[span + 1] {
            span += 1;
        }

        // Cox–de Boor triangular recursion over the active span.
        let mut n = vec![T::zero(); p + 1];
        let mut left = vec![T::zero(); p + 1];
        let mut right = vec![T::zero(); p + 1];
        n[0] = T::one();
        for j in 1..=p {
            left[j] = x - knots[span + 1 - j];
            right[j] = knots[span + j] - x;
            let mut saved = T::zero();
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        Ok((span - p, n))
    }
}

/// Layout of a one- or two-dimensional penalized smooth.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothSpec<T> {
    /// One margin, or `[age, year]` for a tensor product.
    pub margins: Vec<MarginSpec<T>>,
    pub constraint: Constraint,
    /// Fixed penalty weights per margin; `None` selects them by marginal likelihood.
    pub penalty_weights: Option<Vec<T>>,
}

impl<T: Scalar> SmoothSpec<T> {
    /// Cubic tensor smooth over the grid with `knots` interior knots per margin.
    pub fn tensor(grid: &crate::grid::DomainGrid, knots: usize) -> Self {
        let age = MarginSpec::new(T::lit(grid.age_min as f64), T::lit(grid.age_max as f64), knots);
        let year = MarginSpec::new(T::lit(grid.year_min as f64), T::lit(grid.year_max as f64), knots);
        Self { margins: vec![age, year], constraint: Constraint::None, penalty_weights: None }
    }

    /// One piecewise-constant basis function per grid cell, unpenalized.
    pub fn saturated(grid: &crate::grid::DomainGrid) -> Self {
        let half = T::lit(0.5);
        let margin = |lo: i32, hi: i32| {
            let n = (hi - lo + 1) as usize;
            MarginSpec::new(T::lit(lo as f64) - half, T::lit(hi as f64) + half, n - 1).with_degree(0).with_penalty_order(0)
        };
        Self {
            margins: vec![margin(grid.age_min, grid.age_max), margin(grid.year_min, grid.year_max)],
            constraint: Constraint::None,
            penalty_weights: Some(vec![T::zero(), T::zero()]),
        }
    }

    pub fn with_weights(mut self, weights: Vec<T>) -> Self {
        self.penalty_weights = Some(weights);
        self
    }

    pub fn dimension(&self) -> usize {
        self.margins.len()
    }

    pub fn n_basis(&self) -> usize {
        self.margins.iter().map(|m| m.n_basis()).product()
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.margins.len()) {
            return Err(Error::InvalidSpec(format!("smooths have 1 or 2 margins, got {}", self.margins.len())));
        }
        for m in &self.margins {
            m.validate()?;
        }
        if let Some(w) = &self.penalty_weights {
            if w.len() != self.margins.len() {
                return Err(Error::InvalidSpec(format!("{} penalty weights for {} margins", w.len(), self.margins.len())));
            }
            if w.iter().any(|&x| !(x >= T::zero())) {
                return Err(Error::InvalidSpec("penalty weights must be non-negative".into()));
            }
        }
        Ok(())
    }

    /// Basis row at `(age, year)` (or `x` alone for one margin).
    pub fn row(&self, coords: &[T]) -> Result<(Vec<usize>, Vec<T>)> {
        if coords.len() != self.margins.len() {
            return Err(Error::DimensionMismatch(format!("{} coordinates for a {}-margin smooth", coords.len(), self.margins.len())));
        }
        let (ia, va) = self.margins[0].eval_nonzero(coords[0], &self.margins[0].knots())?;
        if self.margins.len() == 1 {
            return Ok(((ia..ia + va.len()).collect(), va));
        }
        let (ib, vb) = self.margins[1].eval_nonzero(coords[1], &self.margins[1].knots())?;
        let nb = self.margins[1].n_basis();
        let mut cols = Vec::with_capacity(va.len() * vb.len());
        let mut vals = Vec::with_capacity(va.len() * vb.len());
        for (i, &x) in va.iter().enumerate() {
            for (j, &y) in vb.iter().enumerate() {
                cols.push((ia + i) * nb + ib + j);
                vals.push(x * y);
            }
        }
        Ok((cols, vals))
    }
}

/// Row-sparse basis evaluation matrix (CSR layout).
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix<T> {
    ncols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> BasisMatrix<T> {
    pub fn with_columns(ncols: usize) -> Self {
        Self { ncols, indptr: vec![0], indices: Vec::new(), values: Vec::new() }
    }

    pub fn push_row(&mut self, cols: &[usize], vals: &[T]) {
        debug_assert_eq!(cols.len(), vals.len());
        debug_assert!(cols.iter().all(|&c| c < self.ncols));
        self.indices.extend_from_slice(cols);
        self.values.extend_from_slice(vals);
        self.indptr.push(self.indices.len());
    }

    pub fn nrows(&self) -> usize {
        self.indptr.len() - 1
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        (&self.indices[a..b], &self.values[a..b])
    }

    pub fn row_sum(&self, i: usize) -> T {
        self.row(i).1.iter().copied().sum()
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols);
        for i in 0..self.nrows() {
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                m[(i, j)] += x;
            }
        }
        m
    }

    /// Weighted column means over all rows; `weights` defaults to uniform.
    pub fn column_means(&self, weights: Option<&[T]>) -> DVector<T> {
        let mut acc = DVector::zeros(self.ncols);
        let mut total = T::zero();
        for i in 0..self.nrows() {
            let w = weights.map_or(T::one(), |w| w[i]);
            total += w;
            let (c, v) = self.row(i);
            for (&j, &x) in c.iter().zip(v) {
                acc[j] += w * x;
            }
        }
        if total > T::zero() {
            acc /= total;
        }
        acc
    }

    /// Product with a coefficient vector.
    pub fn mul_vec(&self, theta: &DVector<T>) -> Vec<T> {
        (0..self.nrows())
            .map(|i| {
                let (c, v) = self.row(i);
                c.iter().zip(v).map(|(&j, &x)| x * theta[j]).sum()
            })
            .collect()
    }
}

/// Evaluates every basis function of `spec` at each `x`.
pub fn bspline_basis<T: Scalar>(x: &[T], spec: &MarginSpec<T>) -> Result<BasisMatrix<T>> {
    spec.validate()?;
    let knots = spec.knots();
    let mut b = BasisMatrix::with_columns(spec.n_basis());
    let mut cols = Vec::with_capacity(spec.degree + 1);
    for &xi in x {
        let (first, vals) = spec.eval_nonzero(xi, &knots)?;
        cols.clear();
        cols.extend(first..first + vals.len());
        b.push_row(&cols, &vals);
    }
    Ok(b)
}

/// Row-wise Kronecker product; column `i * b_year.ncols() + j` holds
/// `b_age[., i] * b_year[., j]`.
pub fn tensor_basis<T: Scalar>(b_age: &BasisMatrix<T>, b_year: &BasisMatrix<T>) -> Result<BasisMatrix<T>> {
    if b_age.nrows() != b_year.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "tensor margins have {} and {} rows",
            b_age.nrows(),
            b_year.nrows()
        )));
    }
    let nb = b_year.ncols();
    let mut out = BasisMatrix::with_columns(b_age.ncols() * nb);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for r in 0..b_age.nrows() {
        cols.clear();
        vals.clear();
        let (ca, va) = b_age.row(r);
        let (cb, vb) = b_year.row(r);
        for (&i, &x) in ca.iter().zip(va) {
            for (&j, &y) in cb.iter().zip(vb) {
                cols.push(i * nb + j);
                vals.push(x * y);
            }
        }
        out.push_row(&cols, &vals);
    }
    Ok(out)
}

/// `order`-th difference operator, shape `(n - order) × n`.
pub fn difference_matrix<T: Scalar>(n: usize, order: usize) -> Result<DMatrix<T>> {
    if n <= order {
        return Err(Error::InvalidSpec(format!("need more than {order} coefficients for an order-{order} penalty, got {n}")));
    }
    let mut d = DMatrix::<T>::identity(n, n);
    for _ in 0..order {
        let r = d.nrows();
        let next = DMatrix::from_fn(r - 1, n, |i, j| d[(i + 1, j)] - d[(i, j)]);
        d = next;
    }
    Ok(d)
}

pub type PenaltyMatrix<T> = DMatrix<T>;

/// `λ DᵀD` for one margin.
pub fn difference_penalty<T: Scalar>(n_basis: usize, order: usize, lambda: T) -> Result<PenaltyMatrix<T>> {
    let d = difference_matrix::<T>(n_basis, order)?;
    Ok((d.transpose() * d) * lambda)
}

/// `λ_a (S_a ⊗ I) + λ_t (I ⊗ S_t)` with age-major coefficient layout.
pub fn tensor_penalty<T: Scalar>(
    n_age: usize,
    n_year: usize,
    order: usize,
    lambda_age: T,
    lambda_year: T,
) -> Result<PenaltyMatrix<T>> {
    let sa = difference_penalty::<T>(n_age, order, lambda_age)?;
    let sy = difference_penalty::<T>(n_year, order, lambda_year)?;
    Ok(sa.kronecker(&DMatrix::identity(n_year, n_year)) + DMatrix::identity(n_age, n_age).kronecker(&sy))
}

/// Unit-weight penalty for one margin, kept with its spectrum so the
/// log pseudo-determinant of weighted sums is available in closed form.
#[derive(Debug, Clone)]
pub struct MarginPenalty<T: Scalar> {
    pub s: DMatrix<T>,
    /// Ascending eigenvalues; the first `null_dim` are structurally zero.
    pub eigenvalues: Vec<T>,
    pub null_dim: usize,
}

impl<T: Scalar> MarginPenalty<T> {
    pub fn new(n_basis: usize, order: usize) -> Result<Self> {
        let s = difference_penalty::<T>(n_basis, order, T::one())?;
        let mut eigenvalues: Vec<T> = SymmetricEigen::new(s.clone()).eigenvalues.iter().copied().collect();
        crate::scalar::sort_scalars(&mut eigenvalues);
        for e in eigenvalues.iter_mut().take(order) {
            *e = T::zero();
        }
        Ok(Self { s, eigenvalues, null_dim: order })
    }
}

/// log pseudo-determinant of `λ_a (S_a ⊗ I) + λ_t (I ⊗ S_t)`.
pub fn tensor_log_pdet<T: Scalar>(a: &MarginPenalty<T>, b: &MarginPenalty<T>, lambda_a: T, lambda_b: T) -> T {
    let mut acc = T::zero();
    for (i, &mu) in a.eigenvalues.iter().enumerate() {
        for (j, &nu) in b.eigenvalues.iter().enumerate() {
            if i < a.null_dim && j < b.null_dim {
                continue;
            }
            acc += (lambda_a * mu + lambda_b * nu).ln();
        }
    }
    acc
}

/// Orthonormal basis `Z` (p × (p−1)) of the complement of `c`, built from the
/// Householder reflection that maps `c` onto the first axis.
pub fn null_space_of_vector<T: Scalar>(c: &DVector<T>) -> DMatrix<T> {
    let p = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    // Reflect onto -sign(c0)·e1 to avoid cancellation.
    let sign = if c[0] >= T::zero() { T::one() } else { -T::one() };
    v[0] += sign * norm;
    let vv = v.dot(&v);
    let mut h = DMatrix::<T>::identity(p, p);
    if vv > T::zero() {
        h -= (&v * v.transpose()) * (T::lit(2.0) / vv);
    }
    h.columns(1, p - 1).into_owned()
}

/// A basis reparameterized to satisfy a constraint.
#[derive(Debug, Clone)]
pub struct ConstrainedBasis<T: Scalar> {
    /// Rows × free coefficients.
    pub matrix: DMatrix<T>,
    /// Maps free coefficients to full-basis coefficients.
    pub transform: DMatrix<T>,
    /// Constant added to every evaluation (1 for mean-one).
    pub offset: T,
}

impl<T: Scalar> ConstrainedBasis<T> {
    /// Full-basis coefficients for prediction with the unconstrained basis.
    pub fn full_coefficients(&self, free: &DVector<T>) -> DVector<T> {
        &self.transform * free
    }

    pub fn evaluate(&self, free: &DVector<T>) -> DVector<T> {
        (&self.matrix * free).add_scalar(self.offset)
    }
}

pub fn apply_constraint<T: Scalar>(b: &BasisMatrix<T>, kind: Constraint) -> Result<ConstrainedBasis<T>> {
    if b.nrows() == 0 || b.ncols() == 0 {
        return Err(Error::EmptyData("constraint needs a non-empty basis".into()));
    }
    let dense = b.to_dense();
    let p = b.ncols();
    let (transform, offset) = match kind {
        Constraint::None => (DMatrix::identity(p, p), T::zero()),
        Constraint::ZeroMean => (null_space_of_vector(&b.column_means(None)), T::zero()),
        Constraint::MeanOne => (null_space_of_vector(&b.column_means(None)), T::one()),
    };
    Ok(ConstrainedBasis { matrix: &dense * &transform, transform, offset })
}

fn second_difference_abs_integral<T: Scalar>(f: &[T], spacing: T) -> T {
    let h2 = spacing * spacing;
    let curv: Vec<T> = f.windows(3).map(|w| ((w[0] - w[1] - w[1] + w[2]) / h2).abs()).collect();
    curv.windows(2).map(|w| (w[0] + w[1]) * spacing * T::lit(0.5)).sum()
}

/// Approximates `∫ |f''|` from equally spaced samples.
pub fn wiggle<T: Scalar>(f: &[T], spacing: T) -> Result<T> {
    if f.len() < 3 {
        return Err(Error::InvalidSpec(format!("wiggle needs at least 3 points, got {}", f.len())));
    }
    Ok(second_difference_abs_integral(f, spacing))
}

/// Per-axis wiggle of a surface (`rows` = first axis): the 1d wiggle along
/// each axis, averaged over the lines of the other axis.
pub fn wiggle_2d<T: Scalar>(f: &DMatrix<T>, spacing: T) -> Result<(T, T)> {
    if f.nrows() < 3 || f.ncols() < 3 {
        return Err(Error::InvalidSpec(format!("wiggle needs at least 3 points per axis, got {}×{}", f.nrows(), f.ncols())));
    }
    let along_rows: T = (0..f.ncols())
        .map(|j| second_difference_abs_integral(f.column(j).as_slice(), spacing))
        .sum::<T>()
        / T::from_count(f.ncols());
    let along_cols: T = (0..f.nrows())
        .map(|i| {
            let line: Vec<T> = f.row(i).iter().copied().collect();
            second_difference_abs_integral(&line, spacing)
        })
        .sum::<T>()
        / T::from_count(f.nrows());
    Ok((along_rows, along_cols))
}

fn min_max<T: Scalar>(x: &[T]) -> Option<(T, T)> {
    let mut it = x.iter().copied();
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
}
