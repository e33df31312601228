//! Symmetric positive-definite precision matrices: a dense form and an
//! arrow form for models with many independent random-effect levels.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// Arrow-structured symmetric matrix over coordinates `[fixed (k), levels (g)]`:
/// dense `corner` (k×k), dense `border` (k×g) and diagonal `diag` (g).
#[derive(Debug, Clone)]
pub struct ArrowMatrix<T: Scalar> {
    pub corner: DMatrix<T>,
    pub border: DMatrix<T>,
    pub diag: DVector<T>,
}

impl<T: Scalar> ArrowMatrix<T> {
    pub fn zeros(k: usize, g: usize) -> Self {
        Self { corner: DMatrix::zeros(k, k), border: DMatrix::zeros(k, g), diag: DVector::zeros(g) }
    }

    pub fn n_fixed(&self) -> usize {
        self.corner.nrows()
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let k = self.n_fixed();
        let g = self.diag.len();
        let mut m = DMatrix::zeros(k + g, k + g);
        m.view_mut((0, 0), (k, k)).copy_from(&self.corner);
        m.view_mut((0, k), (k, g)).copy_from(&self.border);
        m.view_mut((k, 0), (g, k)).copy_from(&self.border.transpose());
        for i in 0..g {
            m[(k + i, k + i)] = self.diag[i];
        }
        m
    }
}

#[derive(Debug, Clone)]
pub enum Precision<T: Scalar> {
    Dense(DMatrix<T>),
    Arrow(ArrowMatrix<T>),
}

impl<T: Scalar> Precision<T> {
    pub fn dim(&self) -> usize {
        match self {
            Precision::Dense(m) => m.nrows(),
            Precision::Arrow(a) => a.n_fixed() + a.diag.len(),
        }
    }

    pub fn mul_vec(&self, v: &DVector<T>) -> DVector<T> {
        match self {
            Precision::Dense(m) => m * v,
            Precision::Arrow(a) => {
                let k = a.n_fixed();
                let vf = v.rows(0, k);
                let vr = v.rows(k, a.diag.len());
                let mut out = DVector::zeros(v.len());
                out.rows_mut(0, k).copy_from(&(&a.corner * vf + &a.border * vr));
                let lower = a.border.transpose() * vf + a.diag.component_mul(&vr);
                out.rows_mut(k, a.diag.len()).copy_from(&lower);
                out
            }
        }
    }

    pub fn diagonal(&self) -> DVector<T> {
        match self {
            Precision::Dense(m) => m.diagonal(),
            Precision::Arrow(a) => {
                let mut d = a.corner.diagonal().as_slice().to_vec();
                d.extend(a.diag.iter().copied());
                DVector::from_vec(d)
            }
        }
    }

    pub fn factor(&self, context: &str) -> Result<PrecisionFactor<T>> {
        let fail = |min_diagonal: T| Error::NotPositiveDefinite { context: context.to_string(), min_diagonal: min_diagonal.as_f64() };
        let min_diag = || self.diagonal().iter().copied().fold(T::max_value().unwrap(), |a, b| a.min(b));
        match self {
            Precision::Dense(m) => {
                let chol = Cholesky::new(m.clone()).ok_or_else(|| fail(min_diag()))?;
                let l = chol.l();
                if l.diagonal().iter().any(|d| !(d.is_finite() && *d > T::zero())) {
                    return Err(fail(min_diag()));
                }
                Ok(PrecisionFactor::Dense { l, chol })
            }
            Precision::Arrow(a) => {
                if a.diag.iter().any(|d| !(d.is_finite() && *d > T::zero())) {
                    return Err(fail(min_diag()));
                }
                // Schur complement S = F − B D⁻¹ Bᵀ.
                let scaled = DMatrix::from_fn(a.border.nrows(), a.border.ncols(), |i, j| a.border[(i, j)] / a.diag[j]);
                let schur = &a.corner - &scaled * a.border.transpose();
                let chol = Cholesky::new(schur).ok_or_else(|| fail(min_diag()))?;
                let l = chol.l();
                Ok(PrecisionFactor::Arrow { diag: a.diag.clone(), border: a.border.clone(), schur_l: l, schur: chol })
            }
        }
    }
}

/// Cholesky-type factorization of a precision matrix `P`.
#[derive(Debug, Clone)]
pub enum PrecisionFactor<T: Scalar> {
    Dense { l: DMatrix<T>, chol: Cholesky<T, Dyn> },
    Arrow { diag: DVector<T>, border: DMatrix<T>, schur_l: DMatrix<T>, schur: Cholesky<T, Dyn> },
}

impl<T: Scalar> PrecisionFactor<T> {
    pub fn dim(&self) -> usize {
        match self {
            PrecisionFactor::Dense { l, .. } => l.nrows(),
            PrecisionFactor::Arrow { diag, schur_l, .. } => schur_l.nrows() + diag.len(),
        }
    }

    /// `log |P|`.
    pub fn log_det(&self) -> T {
        match self {
            PrecisionFactor::Dense { l, .. } => l.diagonal().iter().map(|d| d.ln()).sum::<T>() * T::lit(2.0),
            PrecisionFactor::Arrow { diag, schur_l, .. } => {
                diag.iter().map(|d| d.ln()).sum::<T>() + schur_l.diagonal().iter().map(|d| d.ln()).sum::<T>() * T::lit(2.0)
            }
        }
    }

    /// Solves `P x = b`.
    pub fn solve(&self, b: &DVector<T>) -> DVector<T> {
        match self {
            PrecisionFactor::Dense { chol, .. } => chol.solve(b),
            PrecisionFactor::Arrow { diag, border, schur, .. } => {
                let k = border.nrows();
                let g = diag.len();
                let bf = b.rows(0, k).into_owned();
                let br = b.rows(k, g).into_owned();
                let dinv_br = br.component_div(diag);
                let xf = schur.solve(&(bf - border * &dinv_br));
                let xr = (br - border.transpose() * &xf).component_div(diag);
                let mut x = DVector::zeros(k + g);
                x.rows_mut(0, k).copy_from(&xf);
                x.rows_mut(k, g).copy_from(&xr);
                x
            }
        }
    }

    /// Maps a standard normal vector to a draw with covariance `P⁻¹`.
    pub fn sample(&self, z: &DVector<T>) -> DVector<T> {
        match self {
            PrecisionFactor::Dense { l, .. } => l.tr_solve_lower_triangular(z).expect("Cholesky factor has a positive diagonal"),
            PrecisionFactor::Arrow { diag, border, schur_l, .. } => {
                let k = border.nrows();
                let g = diag.len();
                let xf = schur_l
                    .tr_solve_lower_triangular(&z.rows(0, k).into_owned())
                    .expect("Schur factor has a positive diagonal");
                let bt_xf = border.transpose() * &xf;
                let mut x = DVector::zeros(k + g);
                x.rows_mut(0, k).copy_from(&xf);
                for i in 0..g {
                    x[k + i] = z[k + i] / diag[i].sqrt() - bt_xf[i] / diag[i];
                }
                x
            }
        }
    }

    /// `vᵀ P⁻¹ v`.
    pub fn inverse_quad(&self, v: &DVector<T>) -> T {
        v.dot(&self.solve(v))
    }

    /// `vᵀ P⁻¹ v` for a sparse `v`.
    pub fn inverse_quad_sparse(&self, cols: &[usize], vals: &[T]) -> T {
        match self {
            PrecisionFactor::Dense { .. } => {
                let mut v = DVector::zeros(self.dim());
                for (&c, &x) in cols.iter().zip(vals) {
                    v[c] += x;
                }
                self.inverse_quad(&v)
            }
            PrecisionFactor::Arrow { diag, border, schur, .. } => {
                let k = border.nrows();
                let mut w = DVector::zeros(k);
                let mut acc = T::zero();
                for (&c, &x) in cols.iter().zip(vals) {
                    if c < k {
                        w[c] += x;
                    } else {
                        let r = c - k;
                        acc += x * x / diag[r];
                        for i in 0..k {
                            w[i] -= border[(i, r)] * x / diag[r];
                        }
                    }
                }
                acc + w.dot(&schur.solve(&w))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_arrow() -> ArrowMatrix<f64> {
        let mut a = ArrowMatrix::zeros(2, 4);
        a.corner = DMatrix::from_row_slice(2, 2, &[9.0, 1.0, 1.0, 7.0]);
        a.border = DMatrix::from_row_slice(2, 4, &[1.0, 0.5, 0.0, 2.0, 0.3, 0.0, 1.0, 0.2]);
        a.diag = DVector::from_vec(vec![3.0, 2.0, 4.0, 5.0]);
        a
    }

    #[test]
    fn arrow_matches_dense() {
        let a = sample_arrow();
        let dense = a.to_dense();
        let fa = Precision::Arrow(a.clone()).factor("test").unwrap();
        let fd = Precision::Dense(dense.clone()).factor("test").unwrap();
        assert!((fa.log_det() - fd.log_det()).abs() < 1e-12);
        assert!((fa.log_det() - dense.determinant().ln()).abs() < 1e-12);
        let b = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0, -1.0, 0.25]);
        assert!((fa.solve(&b) - fd.solve(&b)).norm() < 1e-12);
        assert!((fa.inverse_quad(&b) - fd.inverse_quad(&b)).abs() < 1e-12);
        let cols = [1, 3, 5];
        let vals = [0.7, -1.0, 2.0];
        let mut v = DVector::zeros(6);
        for (c, x) in cols.iter().zip(vals) {
            v[*c] = x;
        }
        assert!((fa.inverse_quad_sparse(&cols, &vals) - fd.inverse_quad(&v)).abs() < 1e-12);
        assert!((Precision::Arrow(a).mul_vec(&b) - &dense * &b).norm() < 1e-12);
    }

    #[test]
    fn samples_have_inverse_covariance() {
        // E[x xᵀ] = P⁻¹ exactly when z runs over the identity columns.
        let a = sample_arrow();
        let dense = a.to_dense();
        let inv = dense.clone().try_inverse().unwrap();
        for f in [Precision::Arrow(a).factor("t").unwrap(), Precision::Dense(dense).factor("t").unwrap()] {
            let mut cov = DMatrix::zeros(6, 6);
            for i in 0..6 {
                let mut z = DVector::zeros(6);
                z[i] = 1.0;
                let x = f.sample(&z);
                cov += &x * x.transpose();
            }
            assert!((cov - &inv).norm() < 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = Precision::Dense(m).factor("probe").unwrap_err();
        assert!(err.is_numerical());
    }
}
