//! IMEX SDC sweeps and collocation residuals.
//!
//! One sweep updates the node values of a step node by node:
//!
//! ```text
//! u_m <- u0 + tau_m
//!        + dt * sum_{j<m} (QdI[m,j] fI(u_j^new) + QdE[m,j] fE(u_j^new))
//!        + dt * QdI[m,m] fI(u_m^new)
//!        + dt * sum_j ((Q - QdI)[m,j] fI(u_j^old) + (Q - QdE)[m,j] fE(u_j^old))
//! ```
//!
//! The diagonal implicit term is resolved by [`Problem::implicit_solve`].
//! A fixed point of the sweep solves the collocation problem
//! `u = u0 + dt Q f(u) + tau` regardless of the preconditioners.

use nalgebra::{DMatrix, DVector};

use crate::collocation::CollocationTable;
use crate::error::{Error, Result};
use crate::problems::Problem;

/// Node values and right-hand side evaluations of one step on one level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelState {
    pub dt: f64,
    pub u0: Vec<f64>,
    pub u: Vec<Vec<f64>>,
    pub f_impl: Vec<Vec<f64>>,
    pub f_expl: Vec<Vec<f64>>,
    /// FAS correction per node; zero on the finest level.
    pub tau: Vec<Vec<f64>>,
    pub residual: f64,
}

impl LevelState {
    /// Spreads `u0` to all `m` nodes and evaluates the right-hand sides.
    pub fn spread(u0: &[f64], m: usize, dt: f64, problem: &dyn Problem) -> Self {
        let ndof = u0.len();
        let mut state = Self {
            dt,
            u0: u0.to_vec(),
            u: vec![u0.to_vec(); m],
            f_impl: vec![vec![0.0; ndof]; m],
            f_expl: vec![vec![0.0; ndof]; m],
            tau: vec![vec![0.0; ndof]; m],
            residual: f64::INFINITY,
        };
        state.evaluate_all(problem);
        state
    }

    pub fn num_nodes(&self) -> usize {
        self.u.len()
    }

    pub fn ndof(&self) -> usize {
        self.u0.len()
    }

    /// Value at the last node, which is the step end for right-Radau nodes.
    pub fn end_value(&self) -> &[f64] {
        self.u.last().expect("at least one node")
    }

    /// Re-evaluates both right-hand side parts at every node.
    pub fn evaluate_all(&mut self, problem: &dyn Problem) {
        for m in 0..self.u.len() {
            problem.eval_implicit(&self.u[m], &mut self.f_impl[m]);
            problem.eval_explicit(&self.u[m], &mut self.f_expl[m]);
        }
    }

    /// `dt * sum_j Q[m,j] (fI_j + fE_j)` for every node `m`.
    pub fn integrate(&self, tab: &CollocationTable) -> Vec<Vec<f64>> {
        let q = tab.q();
        let ndof = self.ndof();
        (0..self.num_nodes())
            .map(|m| {
                let mut acc = vec![0.0; ndof];
                for j in 0..self.num_nodes() {
                    let w = self.dt * q[(m, j)];
                    for ((a, fi), fe) in acc.iter_mut().zip(&self.f_impl[j]).zip(&self.f_expl[j]) {
                        *a += w * (fi + fe);
                    }
                }
                acc
            })
            .collect()
    }
}

/// One IMEX sweep over all nodes; right-hand sides are re-evaluated at the
/// updated nodes.
pub fn imex_sweep(state: &mut LevelState, tab: &CollocationTable, problem: &dyn Problem) -> Result<()> {
    let m_nodes = state.num_nodes();
    let ndof = state.ndof();
    let dt = state.dt;
    let q = tab.q();
    let qdi = tab.qd_implicit();
    let qde = tab.qd_explicit();

    // contributions of the previous iterate
    let mut rhs: Vec<Vec<f64>> = (0..m_nodes)
        .map(|m| {
            let mut r: Vec<f64> = state.u0.iter().zip(&state.tau[m]).map(|(a, t)| a + t).collect();
            for j in 0..m_nodes {
                let wi = dt * (q[(m, j)] - qdi[(m, j)]);
                let we = dt * (q[(m, j)] - qde[(m, j)]);
                for ((r, fi), fe) in r.iter_mut().zip(&state.f_impl[j]).zip(&state.f_expl[j]) {
                    *r += wi * fi + we * fe;
                }
            }
            r
        })
        .collect();

    let mut buf = vec![0.0; ndof];
    for m in 0..m_nodes {
        let r = &mut rhs[m];
        for j in 0..m {
            let wi = dt * qdi[(m, j)];
            let we = dt * qde[(m, j)];
            for ((r, fi), fe) in r.iter_mut().zip(&state.f_impl[j]).zip(&state.f_expl[j]) {
                *r += wi * fi + we * fe;
            }
        }
        problem
            .implicit_solve(r, dt * qdi[(m, m)], &mut buf)
            .map_err(|e| Error::ImplicitSolve {
                node: m,
                reason: e.to_string(),
            })?;
        state.u[m].copy_from_slice(&buf);
        problem.eval_implicit(&state.u[m], &mut state.f_impl[m]);
        problem.eval_explicit(&state.u[m], &mut state.f_expl[m]);
    }
    Ok(())
}

/// Collocation residual `max_m || u0 + dt (Q f)_m + tau_m - u_m ||_inf`.
/// Uses the cached right-hand sides; does not re-evaluate.
pub fn residual(state: &LevelState, tab: &CollocationTable) -> f64 {
    let integral = state.integrate(tab);
    let mut res: f64 = 0.0;
    for m in 0..state.num_nodes() {
        for i in 0..state.ndof() {
            let r = state.u0[i] + integral[m][i] + state.tau[m][i] - state.u[m][i];
            res = res.max(r.abs());
        }
    }
    res
}

/// Solves `(I - dt Q (x) A) u = (u0, ..., u0)` by dense LU for a linear
/// problem. Test oracle only.
pub fn collocation_solve_direct(
    u0: &[f64],
    dt: f64,
    tab: &CollocationTable,
    problem: &dyn Problem,
) -> Result<Vec<Vec<f64>>> {
    let a = problem
        .linear_operator()
        .ok_or_else(|| Error::invalid("direct collocation solve needs a linear problem"))?;
    let n = u0.len();
    let m = tab.num_nodes();
    if n * m > 4096 {
        return Err(Error::invalid("system too large for the dense oracle"));
    }
    let size = n * m;
    let mut sys = DMatrix::<f64>::identity(size, size);
    let q = tab.q();
    for bm in 0..m {
        for bj in 0..m {
            for r in 0..n {
                for c in 0..n {
                    sys[(bm * n + r, bj * n + c)] -= dt * q[(bm, bj)] * a[r * n + c];
                }
            }
        }
    }
    let rhs = DVector::from_iterator(size, (0..m).flat_map(|_| u0.iter().copied()));
    let sol = sys
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("collocation system is singular".into()))?;
    Ok((0..m).map(|bm| sol.as_slice()[bm * n..(bm + 1) * n].to_vec()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::Dahlquist;

    #[test]
    fn zero_rhs_gives_u0_plus_tau() {
        let tab = CollocationTable::radau_right(3).unwrap();
        let p = Dahlquist::new(0.0, 0.0);
        let mut s = LevelState::spread(&[2.0], 3, 0.1, &p);
        s.tau = vec![vec![0.1], vec![0.2], vec![0.3]];
        imex_sweep(&mut s, &tab, &p).unwrap();
        for (m, t) in [0.1, 0.2, 0.3].iter().enumerate() {
            assert!((s.u[m][0] - (2.0 + t)).abs() < 1e-15);
        }
    }

    #[test]
    fn residual_of_spread_state() {
        // u == u0 = 1, lambda = -1, dt = 0.1, M = 2: max(1/3, 1) * 0.1
        let tab = CollocationTable::radau_right(2).unwrap();
        let p = Dahlquist::new(-1.0, 0.0);
        let s = LevelState::spread(&[1.0], 2, 0.1, &p);
        assert!((residual(&s, &tab) - 0.1).abs() < 1e-15);
        let zero = Dahlquist::new(0.0, 0.0);
        let s = LevelState::spread(&[1.0], 2, 0.1, &zero);
        assert_eq!(residual(&s, &tab), 0.0);
    }

    #[test]
    fn implicit_failure_carries_node() {
        // 1 - dt * qd[0][0] * lambda = 0 on the first node
        let tab = CollocationTable::radau_right(1).unwrap();
        let p = Dahlquist::new(10.0, 0.0);
        let mut s = LevelState::spread(&[1.0], 1, 0.1, &p);
        let err = imex_sweep(&mut s, &tab, &p).unwrap_err();
        assert!(matches!(err, Error::ImplicitSolve { node: 0, .. }));
    }

    #[test]
    fn direct_solve_trivial_cases() {
        let tab = CollocationTable::radau_right(3).unwrap();
        let u = collocation_solve_direct(&[1.5], 0.1, &tab, &Dahlquist::new(0.0, 0.0)).unwrap();
        assert!(u.iter().all(|v| v[0] == 1.5));
        let u = collocation_solve_direct(&[1.0], 0.1, &tab, &Dahlquist::new(-1.0, 0.0)).unwrap();
        assert!((u[2][0] - (-0.1f64).exp()).abs() < 1e-7);
    }
}
