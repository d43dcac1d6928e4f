use nalgebra::{DMatrix, DVector};

use super::Problem;
use crate::error::{Error, Result};

/// Small dense linear system `u' = A_I u + A_E u`.
#[derive(Debug, Clone)]
pub struct DenseLinear {
    n: usize,
    implicit: DMatrix<f64>,
    explicit: DMatrix<f64>,
}

impl DenseLinear {
    /// Both matrices row-major, `n x n`.
    pub fn new(n: usize, implicit: &[f64], explicit: &[f64]) -> Result<Self> {
        if implicit.len() != n * n || explicit.len() != n * n {
            return Err(Error::invalid("matrix size does not match dimension"));
        }
        Ok(Self {
            n,
            implicit: DMatrix::from_row_slice(n, n, implicit),
            explicit: DMatrix::from_row_slice(n, n, explicit),
        })
    }

    /// Second-order periodic finite-difference diffusion on `n` points with
    /// unit spacing scaled by `nu`, treated implicitly, plus a constant
    /// explicit decay `-mu u`.
    pub fn periodic_diffusion(n: usize, nu: f64, mu: f64) -> Self {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] -= 2.0 * nu;
            a[i * n + (i + 1) % n] += nu;
            a[i * n + (i + n - 1) % n] += nu;
        }
        let mut e = vec![0.0; n * n];
        for i in 0..n {
            e[i * n + i] = -mu;
        }
        Self::new(n, &a, &e).expect("dimensions are consistent")
    }
}

impl Problem for DenseLinear {
    fn ndof(&self) -> usize {
        self.n
    }

    fn eval_implicit(&self, u: &[f64], out: &mut [f64]) {
        let r = &self.implicit * DVector::from_column_slice(u);
        out.copy_from_slice(r.as_slice());
    }

    fn eval_explicit(&self, u: &[f64], out: &mut [f64]) {
        let r = &self.explicit * DVector::from_column_slice(u);
        out.copy_from_slice(r.as_slice());
    }

    fn implicit_solve(&self, rhs: &[f64], factor: f64, out: &mut [f64]) -> Result<()> {
        let system = DMatrix::identity(self.n, self.n) - &self.implicit * factor;
        let sol = system
            .lu()
            .solve(&DVector::from_column_slice(rhs))
            .ok_or_else(|| Error::Singular("I - a A_I is singular".into()))?;
        out.copy_from_slice(sol.as_slice());
        Ok(())
    }

    fn linear_operator(&self) -> Option<Vec<f64>> {
        let a = &self.implicit + &self.explicit;
        Some(a.transpose().as_slice().to_vec())
    }

    fn name(&self) -> &str {
        "dense-linear"
    }
}
