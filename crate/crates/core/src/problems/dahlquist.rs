use super::Problem;
use crate::error::{Error, Result};

/// Scalar test equation `u' = lambda_i u + lambda_e u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dahlquist {
    pub lambda_implicit: f64,
    pub lambda_explicit: f64,
}

impl Dahlquist {
    pub fn new(lambda_implicit: f64, lambda_explicit: f64) -> Self {
        Self {
            lambda_implicit,
            lambda_explicit,
        }
    }
}

impl Problem for Dahlquist {
    fn ndof(&self) -> usize {
        1
    }

    fn eval_implicit(&self, u: &[f64], out: &mut [f64]) {
        out[0] = self.lambda_implicit * u[0];
    }

    fn eval_explicit(&self, u: &[f64], out: &mut [f64]) {
        out[0] = self.lambda_explicit * u[0];
    }

    fn implicit_solve(&self, rhs: &[f64], factor: f64, out: &mut [f64]) -> Result<()> {
        let denom = 1.0 - factor * self.lambda_implicit;
        if denom == 0.0 {
            return Err(Error::Singular(format!(
                "1 - {factor} * {} vanishes",
                self.lambda_implicit
            )));
        }
        out[0] = rhs[0] / denom;
        Ok(())
    }

    fn linear_operator(&self) -> Option<Vec<f64>> {
        Some(vec![self.lambda_implicit + self.lambda_explicit])
    }

    fn name(&self) -> &str {
        "dahlquist"
    }
}
