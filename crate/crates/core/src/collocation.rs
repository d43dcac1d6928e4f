//! Right Gauss-Radau collocation tables.
//!
//! A [`CollocationTable`] holds everything a sweep needs for one time step:
//! the quadrature nodes, the node-to-node integration matrix `Q` and the two
//! triangular preconditioners used by the IMEX sweep. All matrices are stored
//! for the unit interval `[0, 1]`; the step size is applied by the sweeper, so
//! a single table serves every step of a run.
//!
//! The last node of a right-Radau rule coincides with the right end of the
//! interval, which makes the step-to-step transfer trivial: the initial value
//! of the next step is simply the value at the last node.

use crate::error::{Error, Result};

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    n: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from rows. All rows must have the same length as the
    /// number of rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("matrix rows must form a square matrix"));
        }
        Ok(Self {
            n,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        let mut out = Self::zeros(self.n);
        for i in 0..self.n {
            for k in 0..self.n {
                let a = self[(i, k)];
                for j in 0..self.n {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// Elementwise difference `self - other`.
    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.n, other.n);
        Matrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_lower_triangular(&self) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| self[(i, j)] == 0.0))
    }

    pub fn is_strictly_lower_triangular(&self) -> bool {
        self.is_lower_triangular() && (0..self.n).all(|i| self[(i, i)] == 0.0)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.n + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.n + j]
    }
}

/// Legendre polynomial `P_n(x)` and its derivative, by the three-term
/// recurrence.
fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut p_prev, mut p) = (1.0, x);
    let (mut dp_prev, mut dp) = (0.0, 1.0);
    for k in 1..n {
        let kf = k as f64;
        let p_next = ((2.0 * kf + 1.0) * x * p - kf * p_prev) / (kf + 1.0);
        let dp_next = dp_prev + (2.0 * kf + 1.0) * p;
        p_prev = p;
        p = p_next;
        dp_prev = dp;
        dp = dp_next;
    }
    (p, dp)
}

/// `P_M(x) - P_{M-1}(x)`, whose roots are the right-Radau points on `[-1, 1]`.
fn right_radau_poly(m: usize, x: f64) -> (f64, f64) {
    let (p, dp) = legendre_with_derivative(m, x);
    let (q, dq) = legendre_with_derivative(m - 1, x);
    (p - q, dp - dq)
}

/// Right Gauss-Radau points on the reference interval `[-1, 1]`, ascending,
/// last point exactly `1`.
fn reference_radau_points(m: usize) -> Result<Vec<f64>> {
    let mut roots = vec![1.0];
    let denom = (2 * m - 1) as f64;
    for k in 1..m {
        // Chebyshev-Gauss-Radau guess, refined by Newton with deflation of
        // the roots already found.
        let mut x = (2.0 * std::f64::consts::PI * k as f64 / denom).cos();
        let mut converged = false;
        for _ in 0..NEWTON_MAX_ITER {
            let (f, df) = right_radau_poly(m, x);
            let defl: f64 = roots.iter().map(|r| 1.0 / (x - r)).sum();
            let step = f / (df - f * defl);
            x -= step;
            if step.abs() < NEWTON_TOL {
                converged = true;
                break;
            }
        }
        if !converged || !x.is_finite() {
            return Err(Error::Singular(format!(
                "Radau root {k} of {m} did not converge"
            )));
        }
        roots.push(x);
    }
    roots.sort_by(|a, b| a.partial_cmp(b).unwrap());
    *roots.last_mut().unwrap() = 1.0;
    Ok(roots)
}

/// Right Gauss-Radau nodes mapped to `[t0, t1]`. The last node equals `t1`.
pub fn radau_nodes(m: usize, t0: f64, t1: f64) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::invalid("node count must be at least 1"));
    }
    if !(t1 > t0) {
        return Err(Error::invalid(format!(
            "interval must satisfy t1 > t0, got [{t0}, {t1}]"
        )));
    }
    let mut nodes: Vec<f64> = reference_radau_points(m)?
        .into_iter()
        .map(|x| t0 + (t1 - t0) * ((x + 1.0) / 2.0))
        .collect();
    nodes[m - 1] = t1;
    Ok(nodes)
}

/// Monomial coefficients (lowest degree first) of the `j`-th Lagrange basis
/// polynomial on `nodes`.
fn lagrange_coefficients(nodes: &[f64], j: usize) -> Vec<f64> {
    let mut coeffs = vec![1.0];
    let mut scale = 1.0;
    for (i, &xi) in nodes.iter().enumerate() {
        if i == j {
            continue;
        }
        let mut next = vec![0.0; coeffs.len() + 1];
        for (d, &c) in coeffs.iter().enumerate() {
            next[d + 1] += c;
            next[d] -= xi * c;
        }
        coeffs = next;
        scale *= nodes[j] - xi;
    }
    coeffs.iter().map(|c| c / scale).collect()
}

/// Integral from 0 to `x` of the polynomial with the given coefficients.
fn integrate_from_zero(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .rev()
        .fold(0.0, |acc, (d, &c)| acc * x + c / (d as f64 + 1.0))
        * x
}

fn check_nodes(nodes: &[f64], t0: f64) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::invalid("empty node list"));
    }
    if nodes[0] <= t0 {
        return Err(Error::invalid("nodes must lie strictly after t0"));
    }
    for w in nodes.windows(2) {
        if w[1] == w[0] {
            return Err(Error::invalid(format!("duplicate node {}", w[0])));
        }
        if w[1] < w[0] {
            return Err(Error::invalid("nodes must be ascending"));
        }
    }
    Ok(())
}

fn unit_nodes(nodes: &[f64], t0: f64) -> Vec<f64> {
    let t1 = *nodes.last().unwrap();
    nodes.iter().map(|&t| (t - t0) / (t1 - t0)).collect()
}

/// Node-to-node integration matrix: `q[m][j]` integrates the `j`-th Lagrange
/// basis polynomial from `t0` to node `m`, relative to a unit step
/// (the interval is `[t0, nodes[M-1]]`).
pub fn build_q(nodes: &[f64], t0: f64) -> Result<Matrix> {
    check_nodes(nodes, t0)?;
    let s = unit_nodes(nodes, t0);
    let m = s.len();
    let mut q = Matrix::zeros(m);
    for j in 0..m {
        let coeffs = lagrange_coefficients(&s, j);
        for (row, &sm) in s.iter().enumerate() {
            q[(row, j)] = integrate_from_zero(&coeffs, sm);
        }
    }
    Ok(q)
}

/// Doolittle factorization `A = L U` with unit-diagonal `L`, no pivoting.
pub fn lu_doolittle(a: &Matrix) -> Result<(Matrix, Matrix)> {
    let n = a.dim();
    let mut l = Matrix::identity(n);
    let mut u = Matrix::zeros(n);
    for i in 0..n {
        for j in i..n {
            let s: f64 = (0..i).map(|k| l[(i, k)] * u[(k, j)]).sum();
            u[(i, j)] = a[(i, j)] - s;
        }
        if u[(i, i)] == 0.0 {
            return Err(Error::ZeroPivot { pivot: i });
        }
        for j in i + 1..n {
            let s: f64 = (0..i).map(|k| l[(j, k)] * u[(k, i)]).sum();
            l[(j, i)] = (a[(j, i)] - s) / u[(i, i)];
        }
    }
    Ok((l, u))
}

/// The "LU trick" implicit preconditioner: `U^T` where `Q^T = L U`.
pub fn build_qdelta_lu(q: &Matrix) -> Result<Matrix> {
    let (_, u) = lu_doolittle(&q.transpose())?;
    Ok(u.transpose())
}

/// Explicit-Euler preconditioner: row `m` holds the node spacings
/// `tau_{j+1} - tau_j` for `j < m` (unit interval); the first row is zero.
pub fn build_qdelta_ee(nodes: &[f64], t0: f64) -> Result<Matrix> {
    check_nodes(nodes, t0)?;
    let s = unit_nodes(nodes, t0);
    let m = s.len();
    let mut qd = Matrix::zeros(m);
    for row in 1..m {
        for j in 0..row {
            qd[(row, j)] = s[j + 1] - s[j];
        }
    }
    Ok(qd)
}

/// Collocation data for one step, stored for the unit interval.
#[derive(Debug, Clone)]
pub struct CollocationTable {
    nodes: Vec<f64>,
    q: Matrix,
    qd_implicit: Matrix,
    qd_explicit: Matrix,
}

impl CollocationTable {
    /// Radau-right table with `m` nodes, LU-trick implicit and explicit-Euler
    /// explicit preconditioners.
    pub fn radau_right(m: usize) -> Result<Self> {
        let nodes = radau_nodes(m, 0.0, 1.0)?;
        let q = build_q(&nodes, 0.0)?;
        let qd_implicit = build_qdelta_lu(&q)?;
        let qd_explicit = build_qdelta_ee(&nodes, 0.0)?;
        Ok(Self {
            nodes,
            q,
            qd_implicit,
            qd_explicit,
        })
    }

    /// Replaces the preconditioners. `implicit` must be lower triangular,
    /// `explicit` strictly lower triangular.
    pub fn with_preconditioners(mut self, implicit: Matrix, explicit: Matrix) -> Result<Self> {
        let m = self.num_nodes();
        if implicit.dim() != m || explicit.dim() != m {
            return Err(Error::invalid("preconditioner dimension mismatch"));
        }
        if !implicit.is_lower_triangular() {
            return Err(Error::invalid("implicit preconditioner must be lower triangular"));
        }
        if !explicit.is_strictly_lower_triangular() {
            return Err(Error::invalid(
                "explicit preconditioner must be strictly lower triangular",
            ));
        }
        self.qd_implicit = implicit;
        self.qd_explicit = explicit;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes on the unit interval.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn qd_implicit(&self) -> &Matrix {
        &self.qd_implicit
    }

    pub fn qd_explicit(&self) -> &Matrix {
        &self.qd_explicit
    }

    /// Row of the step-transfer matrix: the next step's initial value is
    /// `sum_m h[m] u[m]`. For right-Radau nodes this picks the last node.
    pub fn transfer_row(&self) -> Vec<f64> {
        let mut h = vec![0.0; self.num_nodes()];
        *h.last_mut().unwrap() = 1.0;
        h
    }
}
