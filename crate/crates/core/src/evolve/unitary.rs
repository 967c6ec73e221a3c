use std::f64::consts::PI;
use std::sync::Arc;

use crate::basis::SectorBasis;
use crate::error::{Error, Result};
use crate::linalg::{eigh, ensure_hermitian, CMatrix, CVector, C64};
use crate::model::HamiltonianMatrix;

use super::state::{QuantumState, StateData, TimeGrid};

/// Eigendecomposition of a Hamiltonian, reused for every evolution time.
#[derive(Clone, Debug)]
pub struct Spectrum {
    basis: Arc<SectorBasis>,
    /// Eigenfrequencies in cyclic MHz, ascending.
    energies: Vec<f64>,
    /// Eigenvectors as columns.
    vectors: CMatrix,
}

impl Spectrum {
    pub fn new(h: &HamiltonianMatrix) -> Result<Self> {
        ensure_hermitian(h.entries(), 1e-12)?;
        let (energies, vectors) = eigh(h.entries());
        Ok(Spectrum {
            basis: h.basis().clone(),
            energies,
            vectors,
        })
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn vectors(&self) -> &CMatrix {
        &self.vectors
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    fn phases(&self, t: f64) -> impl Iterator<Item = C64> + '_ {
        self.energies
            .iter()
            .map(move |&e| C64::from_polar(1.0, -2.0 * PI * e * t))
    }

    /// `U(t) = exp(−i·2π·H·t)`.
    pub fn propagator(&self, t: f64) -> CMatrix {
        let mut scaled = self.vectors.clone();
        for (mut col, ph) in scaled.column_iter_mut().zip(self.phases(t)) {
            col *= ph;
        }
        scaled * self.vectors.adjoint()
    }

    /// Components `V† ψ` in the eigenbasis.
    pub fn project(&self, psi: &CVector) -> CVector {
        self.vectors.adjoint() * psi
    }

    /// `ψ(t)` from eigenbasis components of `ψ(0)`.
    pub fn evolve_projected(&self, coeffs: &CVector, t: f64) -> CVector {
        let rotated = CVector::from_iterator(
            coeffs.len(),
            coeffs.iter().zip(self.phases(t)).map(|(c, ph)| c * ph),
        );
        &self.vectors * rotated
    }
}

/// `U = exp(−i·2π·H·t)` by Hermitian eigendecomposition.
pub fn propagator(h: &HamiltonianMatrix, t: f64) -> Result<CMatrix> {
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("negative evolution time {t}")));
    }
    Ok(Spectrum::new(h)?.propagator(t))
}

/// Unitary trajectory of a pure state over the grid.
pub fn evolve_pure(
    h: &HamiltonianMatrix,
    psi0: &QuantumState,
    grid: &TimeGrid,
) -> Result<Vec<QuantumState>> {
    let spectrum = Spectrum::new(h)?;
    evolve_pure_with(&spectrum, psi0, grid)
}

/// [`evolve_pure`] with a precomputed spectrum.
pub fn evolve_pure_with(
    spectrum: &Spectrum,
    psi0: &QuantumState,
    grid: &TimeGrid,
) -> Result<Vec<QuantumState>> {
    let psi = match psi0.data() {
        StateData::Pure(v) => v,
        StateData::Density(_) => {
            return Err(Error::InvalidArgument("evolve_pure needs a pure state".into()))
        }
    };
    if psi0.basis().as_ref() != spectrum.basis().as_ref() {
        return Err(Error::DimensionMismatch(format!(
            "state basis ({}, {}) differs from Hamiltonian basis ({}, {})",
            psi0.basis().n_sites(),
            psi0.basis().sector(),
            spectrum.basis().n_sites(),
            spectrum.basis().sector()
        )));
    }
    let coeffs = spectrum.project(psi);
    Ok(grid
        .times()
        .iter()
        .map(|&t| {
            QuantumState::from_parts_unchecked(
                spectrum.basis().clone(),
                StateData::Pure(spectrum.evolve_projected(&coeffs, t)),
            )
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::sector_basis;
    use crate::model::{build_hamiltonian, derive_couplings, DeviceParams, SpinModel};
    use nalgebra::DMatrix;

    fn two_site(j: f64) -> HamiltonianMatrix {
        let jm = DMatrix::from_row_slice(2, 2, &[0.0, j, j, 0.0]);
        let model = SpinModel::new(jm, vec![0.0; 2], vec![0.0; 2]).unwrap();
        build_hamiltonian(&model, Arc::new(sector_basis(2, None).unwrap())).unwrap()
    }

    #[test]
    fn zero_time_is_identity() {
        let u = propagator(&two_site(1.3), 0.0).unwrap();
        assert!((u - CMatrix::identity(4, 4)).norm() < 1e-14);
    }

    #[test]
    fn negative_time_rejected() {
        assert!(propagator(&two_site(1.0), -0.1).is_err());
    }

    #[test]
    fn two_site_swap_follows_rabi_formula() {
        let j = 1.3;
        let h = two_site(j);
        let psi0 = QuantumState::basis_state(h.basis().clone(), 0b10).unwrap();
        let grid = TimeGrid::linear(1.0, 41).unwrap();
        let traj = evolve_pure(&h, &psi0, &grid).unwrap();
        for (t, s) in grid.times().iter().zip(&traj) {
            let p01 = s.populations()[0b01];
            let expected = (2.0 * PI * j * t).sin().powi(2);
            assert!((p01 - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn group_property_and_unitarity() {
        let model = derive_couplings(&DeviceParams::default().subchain(1, 5).unwrap()).unwrap();
        let h = build_hamiltonian(&model, Arc::new(sector_basis(5, None).unwrap())).unwrap();
        let s = Spectrum::new(&h).unwrap();
        let (t1, t2) = (0.137, 0.421);
        let lhs = s.propagator(t1 + t2);
        let rhs = s.propagator(t2) * s.propagator(t1);
        assert!((&lhs - rhs).norm() < 1e-9);
        let id = &lhs * lhs.adjoint();
        assert!((id - CMatrix::identity(32, 32)).camax() < 1e-10);
    }

    #[test]
    fn diagonal_hamiltonian_keeps_populations() {
        let model = SpinModel::new(DMatrix::zeros(3, 3), vec![0.3, -1.0, 2.0], vec![0.0; 3]).unwrap();
        let h = build_hamiltonian(&model, Arc::new(sector_basis(3, None).unwrap())).unwrap();
        let psi0 = QuantumState::basis_state(h.basis().clone(), 0b101).unwrap();
        let traj = evolve_pure(&h, &psi0, &TimeGrid::linear(1.0, 11).unwrap()).unwrap();
        for s in traj {
            assert!((s.populations()[0b101] - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn eigenvector_is_stationary() {
        let model = derive_couplings(&DeviceParams::default().subchain(2, 5).unwrap()).unwrap();
        let h = build_hamiltonian(&model, Arc::new(sector_basis(4, Some(2)).unwrap())).unwrap();
        let s = Spectrum::new(&h).unwrap();
        let v = s.vectors().column(2).into_owned();
        let psi0 = QuantumState::pure(h.basis().clone(), v.clone()).unwrap();
        for st in evolve_pure_with(&s, &psi0, &TimeGrid::linear(1.0, 7).unwrap()).unwrap() {
            let overlap = v.dotc(st.amplitudes().unwrap()).norm();
            assert!((overlap - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn basis_mismatch_rejected() {
        let h = two_site(1.0);
        let other = Arc::new(sector_basis(2, Some(1)).unwrap());
        let psi0 = QuantumState::basis_state(other, 0b01).unwrap();
        assert!(evolve_pure(&h, &psi0, &TimeGrid::linear(1.0, 3).unwrap()).is_err());
    }
}
