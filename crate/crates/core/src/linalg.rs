//! Ridge design matrices with an incrementally maintained inverse.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// `A = ridge * I + sum phi phi^T` together with `A^{-1}`.
///
/// The inverse is kept current with Sherman-Morrison rank-one updates and
/// recomputed from `A` by Cholesky every `reinvert_every` updates.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    ridge: f64,
    matrix: DMatrix<f64>,
    inverse: DMatrix<f64>,
    updates: u64,
    reinvert_every: u64,
}

impl DesignMatrix {
    pub fn new(dim: usize, ridge: f64, reinvert_every: u64) -> Result<Self> {
        if !(ridge > 0.0 && ridge.is_finite()) {
            return Err(Error::InvalidParameter(format!("ridge must be > 0, got {ridge}")));
        }
        Ok(Self {
            ridge,
            matrix: DMatrix::identity(dim, dim) * ridge,
            inverse: DMatrix::identity(dim, dim) / ridge,
            updates: 0,
            reinvert_every,
        })
    }

    /// `ridge * I + gram`, inverted directly.
    pub fn from_gram(ridge: f64, gram: &DMatrix<f64>, reinvert_every: u64) -> Result<Self> {
        let mut out = Self::new(gram.nrows(), ridge, reinvert_every)?;
        check_dim(gram.nrows(), gram.ncols())?;
        out.matrix += gram;
        out.reinvert()?;
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.inverse
    }

    /// `A - ridge * I`, the accumulated outer products.
    pub fn gram(&self) -> DMatrix<f64> {
        &self.matrix - DMatrix::identity(self.dim(), self.dim()) * self.ridge
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn rank_one_update(&mut self, phi: &[f64]) -> Result<()> {
        check_dim(self.dim(), phi.len())?;
        let v = DVector::from_column_slice(phi);
        self.matrix.ger(1.0, &v, &v, 1.0);
        let av = &self.inverse * &v;
        let denom = 1.0 + v.dot(&av);
        if !(denom.is_finite() && denom > 0.0) {
            return Err(Error::NonFinite("Sherman-Morrison denominator"));
        }
        self.inverse.ger(-1.0 / denom, &av, &av, 1.0);
        self.updates += 1;
        if self.reinvert_every > 0 && self.updates.is_multiple_of(self.reinvert_every) {
            self.reinvert()?;
        }
        Ok(())
    }

    /// Recomputes `A^{-1}` from `A` by Cholesky factorization.
    pub fn reinvert(&mut self) -> Result<()> {
        let chol = self
            .matrix
            .clone()
            .cholesky()
            .ok_or(Error::NonFinite("design matrix is not positive definite"))?;
        self.inverse = chol.inverse();
        Ok(())
    }

    /// `phi^T A^{-1} phi`.
    pub fn quad_form(&self, phi: &[f64]) -> Result<f64> {
        check_dim(self.dim(), phi.len())?;
        let n = self.dim();
        let mut acc = 0.0;
        for j in 0..n {
            let col = self.inverse.column(j);
            let s: f64 = col.iter().zip(phi).map(|(a, p)| a * p).sum();
            acc += s * phi[j];
        }
        Ok(acc)
    }

    /// Confidence width `sqrt(phi^T A^{-1} phi)`.
    pub fn width(&self, phi: &[f64]) -> Result<f64> {
        Ok(self.quad_form(phi)?.max(0.0).sqrt())
    }

    /// Largest entry of `|A A^{-1} - I|`.
    pub fn inverse_residual(&self) -> f64 {
        let n = self.dim();
        let prod = &self.matrix * &self.inverse;
        (prod - DMatrix::identity(n, n)).amax()
    }
}
