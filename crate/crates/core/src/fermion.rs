//! Free-fermion engine for the nearest-neighbour chain.
//!
//! With only nearest-neighbour couplings the XY Hamiltonian maps through the
//! Jordan-Wigner transformation onto non-interacting fermions, and a
//! particle-number eigenstate that starts as a product state stays Gaussian.
//! Such a state is fully described by its correlation matrix
//! `C_ij = ⟨c_i† c_j⟩`, which evolves as `C(t) = e^{i·2π·h·t} C₀ e^{−i·2π·h·t}`
//! for the single-particle matrix `h`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{eigvalsh, CMatrix, C64};
use crate::model::{chain_adjacent, SpinModel};

/// Clip correlation eigenvalues to `[ε, 1−ε]` before taking logs.
pub const CORRELATION_EPS: f64 = 1e-12;

/// Real symmetric tridiagonal hopping matrix (cyclic MHz) of an open chain.
#[derive(Clone, Debug, PartialEq)]
pub struct SingleParticleHamiltonian {
    matrix: DMatrix<f64>,
}

impl SingleParticleHamiltonian {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let n = matrix.nrows();
        if matrix.ncols() != n || n == 0 {
            return Err(Error::DimensionMismatch("hopping matrix must be square".into()));
        }
        for a in 0..n {
            for b in 0..n {
                if matrix[(a, b)] != matrix[(b, a)] {
                    return Err(Error::InvalidArgument("hopping matrix must be symmetric".into()));
                }
                if a != b && !chain_adjacent(a, b) && matrix[(a, b)] != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "hop between sites {} and {} is not nearest-neighbour",
                        a + 1,
                        b + 1
                    )));
                }
            }
        }
        Ok(SingleParticleHamiltonian { matrix })
    }

    /// Fermionic image of a nearest-neighbour spin model.
    pub fn from_spin_model(model: &SpinModel) -> Result<Self> {
        let n = model.n_sites();
        let mut m = DMatrix::zeros(n, n);
        for a in 0..n {
            m[(a, a)] = model.field(a);
            for b in 0..n {
                if a == b {
                    continue;
                }
                let j = model.j[(a, b)];
                if j == 0.0 {
                    continue;
                }
                if !chain_adjacent(a, b) {
                    return Err(Error::InvalidArgument(format!(
                        "coupling J_{},{} is long-range; the fermion image is interacting",
                        a + 1,
                        b + 1
                    )));
                }
                m[(a, b)] = j;
            }
        }
        Self::new(m)
    }

    pub fn n_sites(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// `C_ij = ⟨c_i† c_j⟩` of a Gaussian fermion state.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix(pub CMatrix);

impl CorrelationMatrix {
    pub fn n_sites(&self) -> usize {
        self.0.nrows()
    }

    /// Site occupations `⟨n_i⟩`.
    pub fn occupations(&self) -> Vec<f64> {
        (0..self.n_sites()).map(|i| self.0[(i, i)].re).collect()
    }

    pub fn particle_number(&self) -> f64 {
        self.0.trace().re
    }
}

/// Product state with the listed 1-based sites occupied.
pub fn initial_correlation(n_sites: usize, occupied: &[usize]) -> Result<CorrelationMatrix> {
    let mut c = CMatrix::zeros(n_sites, n_sites);
    for &s in occupied {
        if s == 0 || s > n_sites {
            return Err(Error::InvalidArgument(format!("site {s} outside 1..={n_sites}")));
        }
        c[(s - 1, s - 1)] = C64::new(1.0, 0.0);
    }
    Ok(CorrelationMatrix(c))
}

/// Spectrum of the hopping matrix, reused across evolution times.
#[derive(Clone, Debug)]
pub struct FermionPropagator {
    energies: Vec<f64>,
    modes: DMatrix<f64>,
}

impl FermionPropagator {
    pub fn new(h: &SingleParticleHamiltonian) -> Self {
        let eig = SymmetricEigen::new(h.matrix.clone());
        FermionPropagator {
            energies: eig.eigenvalues.iter().copied().collect(),
            modes: eig.eigenvectors,
        }
    }

    /// `e^{i·2π·h·t}`.
    pub fn unitary(&self, t: f64) -> CMatrix {
        let v = self.modes.map(|x| C64::new(x, 0.0));
        let mut scaled = v.clone();
        for (k, mut col) in scaled.column_iter_mut().enumerate() {
            col *= C64::from_polar(1.0, 2.0 * PI * self.energies[k] * t);
        }
        scaled * v.transpose()
    }

    pub fn evolve(&self, c0: &CorrelationMatrix, t: f64) -> CorrelationMatrix {
        let u = self.unitary(t);
        CorrelationMatrix(&u * &c0.0 * u.adjoint())
    }
}

pub fn evolve_correlation(
    h: &SingleParticleHamiltonian,
    c0: &CorrelationMatrix,
    t: f64,
) -> Result<CorrelationMatrix> {
    if c0.n_sites() != h.n_sites() {
        return Err(Error::DimensionMismatch(format!(
            "{}-site correlation matrix for {}-site hopping",
            c0.n_sites(),
            h.n_sites()
        )));
    }
    Ok(FermionPropagator::new(h).evolve(c0, t))
}

/// Entanglement entropy of the sites in `subset` (1-based):
/// `−Σ_k [λ_k ln λ_k + (1−λ_k) ln(1−λ_k)]` over eigenvalues of `C_A`.
pub fn entropy_from_correlation(c: &CorrelationMatrix, subset: &[usize]) -> Result<f64> {
    let n = c.n_sites();
    if subset.is_empty() {
        return Err(Error::InvalidArgument("empty subsystem".into()));
    }
    if let Some(&s) = subset.iter().find(|&&s| s == 0 || s > n) {
        return Err(Error::InvalidArgument(format!("site {s} outside 1..={n}")));
    }
    let k = subset.len();
    let ca = CMatrix::from_fn(k, k, |a, b| c.0[(subset[a] - 1, subset[b] - 1)]);
    Ok(eigvalsh(&ca)
        .into_iter()
        .map(|l| {
            let l = l.clamp(CORRELATION_EPS, 1.0 - CORRELATION_EPS);
            -(l * l.ln() + (1.0 - l) * (1.0 - l).ln())
        })
        .sum::<f64>()
        .max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{derive_couplings, restrict_nearest_neighbor, DeviceParams};

    #[test]
    fn initial_states() {
        let c = initial_correlation(10, &[2, 4, 6, 8, 10]).unwrap();
        assert_eq!(c.occupations(), vec![0., 1., 0., 1., 0., 1., 0., 1., 0., 1.]);
        assert_eq!(initial_correlation(4, &[]).unwrap().0, CMatrix::zeros(4, 4));
        assert_eq!(initial_correlation(3, &[1, 2, 3]).unwrap().0, CMatrix::identity(3, 3));
        assert!(initial_correlation(3, &[4]).is_err());
    }

    #[test]
    fn two_site_hopping() {
        let j = 0.9;
        let h = SingleParticleHamiltonian::new(DMatrix::from_row_slice(2, 2, &[0.0, j, j, 0.0])).unwrap();
        let c0 = initial_correlation(2, &[1]).unwrap();
        assert!((evolve_correlation(&h, &c0, 0.0).unwrap().0 - &c0.0).norm() < 1e-14);
        for t in [0.05, 0.13, 0.4, 0.77] {
            let c = evolve_correlation(&h, &c0, t).unwrap();
            assert!((c.0[(0, 0)].re - (2.0 * PI * j * t).cos().powi(2)).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_hopping_keeps_occupations() {
        let diag = nalgebra::DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let h = SingleParticleHamiltonian::new(DMatrix::from_diagonal(&diag)).unwrap();
        let c0 = initial_correlation(3, &[2]).unwrap();
        let c = evolve_correlation(&h, &c0, 0.7).unwrap();
        assert_eq!(c.occupations().iter().map(|x| x.round()).collect::<Vec<_>>(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn entropy_limits() {
        let c0 = initial_correlation(6, &[1, 4]).unwrap();
        assert!(entropy_from_correlation(&c0, &[1, 2, 3]).unwrap().abs() < 1e-9);
        let half = CorrelationMatrix(CMatrix::from_diagonal_element(1, 1, C64::new(0.5, 0.0)));
        assert!((entropy_from_correlation(&half, &[1]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(entropy_from_correlation(&c0, &[]).is_err());
    }

    #[test]
    fn rejects_long_range() {
        let m = derive_couplings(&DeviceParams::default()).unwrap();
        assert!(SingleParticleHamiltonian::from_spin_model(&m).is_err());
        let nn = restrict_nearest_neighbor(&m);
        let h = SingleParticleHamiltonian::from_spin_model(&nn).unwrap();
        assert_eq!(h.matrix()[(0, 9)], 0.0);
        assert_eq!(h.matrix()[(4, 5)], nn.j[(4, 5)]);
        let mut ring = nn.j.clone();
        ring[(0, 9)] = 1.0;
        ring[(9, 0)] = 1.0;
        assert!(SingleParticleHamiltonian::new(ring).is_err());
    }

    #[test]
    fn particle_number_is_conserved() {
        let nn = restrict_nearest_neighbor(&derive_couplings(&DeviceParams::default()).unwrap());
        let h = SingleParticleHamiltonian::from_spin_model(&nn).unwrap();
        let prop = FermionPropagator::new(&h);
        let c0 = initial_correlation(10, &[2, 4, 6, 8, 10]).unwrap();
        for t in [0.1, 0.5, 1.0] {
            let c = prop.evolve(&c0, t);
            assert!((c.particle_number() - 5.0).abs() < 1e-10);
            let ev = eigvalsh(&c.0);
            assert!(ev.iter().all(|&l| l > -1e-9 && l < 1.0 + 1e-9));
        }
    }
}
