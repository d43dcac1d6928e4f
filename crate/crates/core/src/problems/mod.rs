//! Test problems with split right-hand sides `f(u) = f_I(u) + f_E(u)`.
//!
//! The sweeper treats `f_I` implicitly and `f_E` explicitly. Problems expose
//! the two evaluations plus the solve of `(I - a f_I)(u) = rhs`.

mod allen_cahn;
mod dahlquist;
mod linear;
pub mod rng;
pub mod snapshot;
pub mod spectral;

pub use allen_cahn::{ac_initial_condition, circle_field, interface_resolution, measure_radius, AllenCahn, Field2D};
pub use dahlquist::Dahlquist;
pub use linear::DenseLinear;

use crate::error::Result;

/// A split right-hand side `u' = f_I(u) + f_E(u)` on a fixed number of
/// degrees of freedom.
pub trait Problem: Send + Sync {
    fn ndof(&self) -> usize;

    fn eval_implicit(&self, u: &[f64], out: &mut [f64]);

    fn eval_explicit(&self, u: &[f64], out: &mut [f64]);

    /// Solves `u - factor * f_I(u) = rhs` for `u`.
    fn implicit_solve(&self, rhs: &[f64], factor: f64, out: &mut [f64]) -> Result<()>;

    /// Dense row-major matrix `A` with `f_I(u) + f_E(u) = A u`, when the
    /// problem is linear. Used only by test oracles.
    fn linear_operator(&self) -> Option<Vec<f64>> {
        None
    }

    /// Short identifier used in logs and traces.
    fn name(&self) -> &str;
}
