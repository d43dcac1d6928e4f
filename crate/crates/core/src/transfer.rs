//! Level coupling: spatial restriction and prolongation, and the FAS
//! correction that makes the coarse problem reproduce restricted fine
//! information.
//!
//! Both levels use the same collocation nodes, so only the spatial part needs
//! transferring. Spectral transfer truncates or zero-pads Fourier modes. The
//! coarse Nyquist mode is split evenly between the fine modes `+N_c/2` and
//! `-N_c/2` on prolongation and folded back on restriction, so that
//! restriction after prolongation is the identity for every coarse field.

use rustfft::num_complex::Complex64;

use crate::collocation::CollocationTable;
use crate::error::{Error, Result};
use crate::problems::spectral::{mode_of, SpectralGrid};
use crate::sweeper::LevelState;

/// Maps spatial vectors between a fine and a coarse level.
pub trait SpaceTransfer: Send + Sync {
    fn fine_ndof(&self) -> usize;
    fn coarse_ndof(&self) -> usize;
    fn restrict(&self, fine: &[f64]) -> Vec<f64>;
    fn prolong(&self, coarse: &[f64]) -> Vec<f64>;
}

/// Same spatial resolution on both levels.
#[derive(Debug, Clone, Copy)]
pub struct IdentityTransfer {
    pub ndof: usize,
}

impl SpaceTransfer for IdentityTransfer {
    fn fine_ndof(&self) -> usize {
        self.ndof
    }
    fn coarse_ndof(&self) -> usize {
        self.ndof
    }
    fn restrict(&self, fine: &[f64]) -> Vec<f64> {
        fine.to_vec()
    }
    fn prolong(&self, coarse: &[f64]) -> Vec<f64> {
        coarse.to_vec()
    }
}

/// Fourier truncation and zero-padding between square periodic grids.
#[derive(Debug, Clone)]
pub struct SpectralTransfer {
    fine: SpectralGrid,
    coarse: SpectralGrid,
}

impl SpectralTransfer {
    pub fn new(fine_n: usize, coarse_n: usize, length: f64) -> Result<Self> {
        if coarse_n > fine_n || fine_n % coarse_n != 0 {
            return Err(Error::invalid(format!(
                "coarse grid {coarse_n} must divide fine grid {fine_n}"
            )));
        }
        Ok(Self {
            fine: SpectralGrid::new(fine_n, length)?,
            coarse: SpectralGrid::new(coarse_n, length)?,
        })
    }

    /// Fine FFT indices and weights receiving coarse index `i` along one axis.
    fn fine_targets(&self, i: usize) -> Vec<(usize, f64)> {
        let (nf, nc) = (self.fine.n(), self.coarse.n());
        let m = mode_of(i, nc);
        let idx = |m: i64| m.rem_euclid(nf as i64) as usize;
        if nf != nc && m == -(nc as i64) / 2 {
            vec![(idx(m), 0.5), (idx(-m), 0.5)]
        } else {
            vec![(idx(m), 1.0)]
        }
    }

    /// Fine FFT indices folded into coarse index `i` along one axis.
    fn fine_sources(&self, i: usize) -> Vec<usize> {
        self.fine_targets(i).into_iter().map(|(j, _)| j).collect()
    }

    fn check(&self, len: usize, n: usize) -> Result<()> {
        if len != n * n {
            return Err(Error::invalid(format!(
                "field has {len} values, expected {}",
                n * n
            )));
        }
        Ok(())
    }

    pub fn try_restrict(&self, fine: &[f64]) -> Result<Vec<f64>> {
        self.check(fine.len(), self.fine.n())?;
        let (nf, nc) = (self.fine.n(), self.coarse.n());
        if nf == nc {
            return Ok(fine.to_vec());
        }
        let fc = self.fine.forward(fine)?;
        let mut cc = vec![Complex64::new(0.0, 0.0); nc * nc];
        for cj in 0..nc {
            let ys = self.fine_sources(cj);
            for ci in 0..nc {
                let xs = self.fine_sources(ci);
                let mut acc = Complex64::new(0.0, 0.0);
                for &fy in &ys {
                    for &fx in &xs {
                        acc += fc[fy * nf + fx];
                    }
                }
                cc[cj * nc + ci] = acc;
            }
        }
        self.coarse.inverse(&cc)
    }

    pub fn try_prolong(&self, coarse: &[f64]) -> Result<Vec<f64>> {
        self.check(coarse.len(), self.coarse.n())?;
        let (nf, nc) = (self.fine.n(), self.coarse.n());
        if nf == nc {
            return Ok(coarse.to_vec());
        }
        let cc = self.coarse.forward(coarse)?;
        let mut fc = vec![Complex64::new(0.0, 0.0); nf * nf];
        for cj in 0..nc {
            let ys = self.fine_targets(cj);
            for ci in 0..nc {
                let xs = self.fine_targets(ci);
                let c = cc[cj * nc + ci];
                for &(fy, wy) in &ys {
                    for &(fx, wx) in &xs {
                        fc[fy * nf + fx] += c * (wx * wy);
                    }
                }
            }
        }
        self.fine.inverse(&fc)
    }
}

impl SpaceTransfer for SpectralTransfer {
    fn fine_ndof(&self) -> usize {
        self.fine.n() * self.fine.n()
    }
    fn coarse_ndof(&self) -> usize {
        self.coarse.n() * self.coarse.n()
    }
    fn restrict(&self, fine: &[f64]) -> Vec<f64> {
        self.try_restrict(fine).expect("fine field size matches transfer")
    }
    fn prolong(&self, coarse: &[f64]) -> Vec<f64> {
        self.try_prolong(coarse).expect("coarse field size matches transfer")
    }
}

/// FAS correction for the coarse level of one step:
///
/// `tau_H[m] = R(dt (Q^h f^h(u_h))_m + tau_h[m]) - dt (Q^H f^H(R u_h))_m`
///
/// `coarse` must hold the restricted fine values with right-hand sides
/// evaluated at them. With this correction the coarse collocation problem is
/// solved by the restricted fine collocation solution.
pub fn compute_fas_tau(
    fine: &LevelState,
    fine_tab: &CollocationTable,
    coarse: &LevelState,
    coarse_tab: &CollocationTable,
    transfer: &dyn SpaceTransfer,
) -> Result<Vec<Vec<f64>>> {
    if fine.num_nodes() != coarse.num_nodes()
        || fine_tab.num_nodes() != coarse_tab.num_nodes()
        || fine.num_nodes() != fine_tab.num_nodes()
    {
        return Err(Error::invalid("levels must share the node count"));
    }
    if fine.ndof() != transfer.fine_ndof() || coarse.ndof() != transfer.coarse_ndof() {
        return Err(Error::invalid("level sizes do not match the transfer"));
    }
    let fine_int = fine.integrate(fine_tab);
    let coarse_int = coarse.integrate(coarse_tab);
    Ok(fine_int
        .iter()
        .zip(&fine.tau)
        .zip(&coarse_int)
        .map(|((fi, ft), ci)| {
            let combined: Vec<f64> = fi.iter().zip(ft).map(|(a, b)| a + b).collect();
            transfer
                .restrict(&combined)
                .iter()
                .zip(ci)
                .map(|(r, c)| r - c)
                .collect()
        })
        .collect())
}
