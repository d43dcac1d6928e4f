//! Two-dimensional periodic Fourier transforms on square power-of-two grids.
//!
//! The forward transform is normalized by `1/N^2`, so a constant field `c`
//! maps to a single zero-mode coefficient `c`, and the inverse is a plain sum.
//! Coefficients are stored row-major in FFT order: index `i` along an axis
//! corresponds to the integer mode `i` for `i < N/2` and `i - N` otherwise.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Planned transforms for an `n x n` periodic grid on a square of side
/// `length`.
#[derive(Clone)]
pub struct SpectralGrid {
    n: usize,
    length: f64,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SpectralGrid")
            .field("n", &self.n)
            .field("length", &self.length)
            .finish()
    }
}

impl SpectralGrid {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::invalid(format!(
                "grid size must be a power of two >= 2, got {n}"
            )));
        }
        if !(length > 0.0) {
            return Err(Error::invalid("domain length must be positive"));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n,
            length,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    /// Integer mode number for FFT index `i`.
    pub fn mode(&self, i: usize) -> i64 {
        mode_of(i, self.n)
    }

    /// Wavenumber `2 pi m / L` for FFT index `i`.
    pub fn wavenumber(&self, i: usize) -> f64 {
        2.0 * PI * self.mode(i) as f64 / self.length
    }

    /// `k_x^2 + k_y^2` for every coefficient, row-major.
    pub fn laplacian_symbol(&self) -> Vec<f64> {
        let k: Vec<f64> = (0..self.n).map(|i| self.wavenumber(i)).collect();
        let mut out = Vec::with_capacity(self.n * self.n);
        for ky in &k {
            for kx in &k {
                out.push(kx * kx + ky * ky);
            }
        }
        out
    }

    fn transform_2d(&self, data: &mut [Complex64], fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        // rows
        fft.process(data);
        // columns, through a transposed scratch copy
        let mut t = vec![Complex64::new(0.0, 0.0); n * n];
        for r in 0..n {
            for c in 0..n {
                t[c * n + r] = data[r * n + c];
            }
        }
        fft.process(&mut t);
        for r in 0..n {
            for c in 0..n {
                data[r * n + c] = t[c * n + r];
            }
        }
    }

    /// Normalized forward transform of a real field (`n*n` values, row-major).
    pub fn forward(&self, values: &[f64]) -> Result<Vec<Complex64>> {
        self.check_len(values.len())?;
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform_2d(&mut data, &self.forward);
        let scale = 1.0 / (self.n * self.n) as f64;
        data.iter_mut().for_each(|c| *c *= scale);
        Ok(data)
    }

    /// Inverse transform; returns the real part.
    pub fn inverse(&self, coeffs: &[Complex64]) -> Result<Vec<f64>> {
        self.check_len(coeffs.len())?;
        let mut data = coeffs.to_vec();
        self.transform_2d(&mut data, &self.inverse);
        Ok(data.into_iter().map(|c| c.re).collect())
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.n * self.n {
            return Err(Error::invalid(format!(
                "expected {} values for a {}x{} grid, got {len}",
                self.n * self.n,
                self.n,
                self.n
            )));
        }
        Ok(())
    }
}

pub(crate) fn mode_of(i: usize, n: usize) -> i64 {
    if i < n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}
