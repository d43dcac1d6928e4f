use std::f64::consts::PI;

use log::{info, warn};
use rustfft::num_complex::Complex64;

use super::rng::XorShift64Star;
use super::spectral::SpectralGrid;
use super::Problem;
use crate::error::{Error, Result};

/// Real field on an `n x n` periodic grid over `[-L/2, L/2]^2`, row-major with
/// `y` as the slow index.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub n: usize,
    pub length: f64,
    pub values: Vec<f64>,
}

impl Field2D {
    pub fn zeros(n: usize, length: f64) -> Self {
        Self {
            n,
            length,
            values: vec![0.0; n * n],
        }
    }

    pub fn from_fn(n: usize, length: f64, f: impl Fn(f64, f64) -> f64) -> Self {
        let h = length / n as f64;
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            let y = -length / 2.0 + j as f64 * h;
            for i in 0..n {
                let x = -length / 2.0 + i as f64 * h;
                values.push(f(x, y));
            }
        }
        Self { n, length, values }
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Value at grid index `(i, j)` with periodic wrap-around.
    pub fn at(&self, i: isize, j: isize) -> f64 {
        let n = self.n as isize;
        self.values[(j.rem_euclid(n) * n + i.rem_euclid(n)) as usize]
    }
}

/// Number of grid cells spanned by an interface of width `7 eps`.
pub fn interface_resolution(eps: f64, n: usize, length: f64) -> f64 {
    7.0 * eps / (length / n as f64)
}

/// 2-D periodic Allen-Cahn equation `u_t = Lap(u) - 2/eps^2 u(1-u)(1-2u)`,
/// with the Laplacian implicit and the reaction explicit.
#[derive(Debug, Clone)]
pub struct AllenCahn {
    grid: SpectralGrid,
    eps: f64,
    symbol: Vec<f64>,
}

impl AllenCahn {
    pub fn new(n: usize, length: f64, eps: f64) -> Result<Self> {
        if !(eps > 0.0) {
            return Err(Error::invalid(format!("eps must be positive, got {eps}")));
        }
        let grid = SpectralGrid::new(n, length)?;
        info!(
            "allen-cahn N={n} L={length} eps={eps}: interface resolved by {:.2} cells",
            interface_resolution(eps, n, length)
        );
        let symbol = grid.laplacian_symbol();
        Ok(Self { grid, eps, symbol })
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    pub fn length(&self) -> f64 {
        self.grid.length()
    }

    /// Spectral Laplacian.
    pub fn laplacian(&self, u: &[f64]) -> Vec<f64> {
        let mut c = self.grid.forward(u).expect("field size matches grid");
        c.iter_mut().zip(&self.symbol).for_each(|(z, k2)| *z *= -k2);
        self.grid.inverse(&c).expect("coefficient size matches grid")
    }

    pub fn reaction(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.eval_explicit(u, &mut out);
        out
    }

    /// Solves `(I - a Lap) u = rhs` in Fourier space.
    pub fn solve_resolvent(&self, rhs: &[f64], a: f64) -> Result<Vec<f64>> {
        if a < 0.0 {
            return Err(Error::invalid(format!(
                "resolvent factor must be nonnegative, got {a}"
            )));
        }
        let mut c = self.grid.forward(rhs)?;
        c.iter_mut()
            .zip(&self.symbol)
            .for_each(|(z, k2)| *z /= 1.0 + a * k2);
        self.grid.inverse(&c)
    }

    pub fn forward(&self, u: &[f64]) -> Vec<Complex64> {
        self.grid.forward(u).expect("field size matches grid")
    }
}

impl Problem for AllenCahn {
    fn ndof(&self) -> usize {
        self.n() * self.n()
    }

    fn eval_implicit(&self, u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.laplacian(u));
    }

    fn eval_explicit(&self, u: &[f64], out: &mut [f64]) {
        let c = -2.0 / (self.eps * self.eps);
        for (o, &v) in out.iter_mut().zip(u) {
            *o = c * v * (1.0 - v) * (1.0 - 2.0 * v);
        }
    }

    fn implicit_solve(&self, rhs: &[f64], factor: f64, out: &mut [f64]) -> Result<()> {
        out.copy_from_slice(&self.solve_resolvent(rhs, factor)?);
        Ok(())
    }

    fn name(&self) -> &str {
        "allen-cahn"
    }
}

fn tanh_circle(dist: f64, radius: f64, eps: f64) -> f64 {
    0.5 * (1.0 + ((radius - dist) / (2f64.sqrt() * eps)).tanh())
}

/// Sum of one tanh-profile circle per unit patch, with the given radii in
/// patch order (row-major, `y` patch index slow).
pub fn circle_field(lpatches: usize, eps: f64, n: usize, radii: &[f64]) -> Result<Field2D> {
    if lpatches == 0 || n % lpatches != 0 {
        return Err(Error::invalid(format!(
            "grid size {n} is not divisible by patch count {lpatches}"
        )));
    }
    if radii.len() != lpatches * lpatches {
        return Err(Error::invalid("one radius per patch required"));
    }
    let length = lpatches as f64;
    let centre = |i: usize| -length / 2.0 + i as f64 + 0.5;
    Ok(Field2D::from_fn(n, length, |x, y| {
        let mut v = 0.0;
        for pj in 0..lpatches {
            for pi in 0..lpatches {
                let d = (x - centre(pi)).hypot(y - centre(pj));
                v += tanh_circle(d, radii[pj * lpatches + pi], eps);
            }
        }
        v
    }))
}

/// Random-radius initial condition: radii uniform in `[0.5 eps, 3 eps)` drawn
/// from [`XorShift64Star`] in patch order.
pub fn ac_initial_condition(lpatches: usize, eps: f64, n: usize, seed: u64) -> Result<Field2D> {
    let mut rng = XorShift64Star::new(seed);
    let radii: Vec<f64> = (0..lpatches * lpatches)
        .map(|_| rng.uniform(0.5 * eps, 3.0 * eps))
        .collect();
    circle_field(lpatches, eps, n, &radii)
}

/// Radius of a single phase-field disc, `sqrt(A / pi)` with `A = h^2 sum(u)`.
pub fn measure_radius(field: &Field2D) -> f64 {
    let h = field.spacing();
    let area = h * h * field.values.iter().sum::<f64>();
    if area <= 0.0 {
        warn!("nonpositive phase-field area {area}; reporting radius 0");
        return 0.0;
    }
    (area / PI).sqrt()
}
