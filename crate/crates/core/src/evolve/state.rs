use std::sync::Arc;

use crate::basis::{SectorBasis, MAX_SITES};
use crate::error::{Error, Result};
use crate::linalg::{eigvalsh, hermitian_deviation, CMatrix, CVector, C64, ONE, ZERO};

/// Amplitudes of a state in its basis.
#[derive(Clone, Debug)]
pub enum StateData {
    Pure(CVector),
    Density(CMatrix),
}

/// Pure state vector or density matrix tagged with its basis.
#[derive(Clone, Debug)]
pub struct QuantumState {
    basis: Arc<SectorBasis>,
    data: StateData,
}

impl QuantumState {
    /// Normalized pure state; the norm must be 1 within 1e-10.
    pub fn pure(basis: Arc<SectorBasis>, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != basis.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} amplitudes for basis of dimension {}",
                amplitudes.len(),
                basis.dim()
            )));
        }
        let norm = amplitudes.norm();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidArgument(format!("state norm {norm} is not 1")));
        }
        Ok(QuantumState {
            basis,
            data: StateData::Pure(amplitudes),
        })
    }

    /// Density matrix; must be Hermitian (1e-10) with unit trace (1e-8).
    pub fn density(basis: Arc<SectorBasis>, rho: CMatrix) -> Result<Self> {
        let d = basis.dim();
        if rho.nrows() != d || rho.ncols() != d {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} density matrix for basis of dimension {d}",
                rho.nrows(),
                rho.ncols()
            )));
        }
        let dev = hermitian_deviation(&rho);
        if dev > 1e-10 {
            return Err(Error::NotHermitian(dev));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > 1e-8 || tr.im.abs() > 1e-8 {
            return Err(Error::InvalidArgument(format!("density trace {tr} is not 1")));
        }
        Ok(QuantumState {
            basis,
            data: StateData::Density(rho),
        })
    }

    /// [`QuantumState::density`] plus a positivity check (eigenvalues ≥ −1e-8).
    pub fn density_checked(basis: Arc<SectorBasis>, rho: CMatrix) -> Result<Self> {
        let state = Self::density(basis, rho)?;
        if let StateData::Density(r) = &state.data {
            let min = eigvalsh(r).first().copied().unwrap_or(0.0);
            if min < -1e-8 {
                return Err(Error::InvalidArgument(format!(
                    "density matrix has eigenvalue {min}"
                )));
            }
        }
        Ok(state)
    }

    /// Computational basis state `|config⟩`.
    pub fn basis_state(basis: Arc<SectorBasis>, config: usize) -> Result<Self> {
        let idx = basis.index_of(config).ok_or_else(|| {
            Error::InvalidArgument(format!("configuration {config:#b} not in basis"))
        })?;
        let mut amps = CVector::from_element(basis.dim(), ZERO);
        amps[idx] = ONE;
        Ok(QuantumState {
            basis,
            data: StateData::Pure(amps),
        })
    }

    /// Maximally mixed state on the basis.
    pub fn maximally_mixed(basis: Arc<SectorBasis>) -> Self {
        let d = basis.dim();
        let rho = CMatrix::from_diagonal_element(d, d, C64::new(1.0 / d as f64, 0.0));
        QuantumState {
            basis,
            data: StateData::Density(rho),
        }
    }

    pub(crate) fn from_parts_unchecked(basis: Arc<SectorBasis>, data: StateData) -> Self {
        QuantumState { basis, data }
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn data(&self) -> &StateData {
        &self.data
    }

    pub fn n_sites(&self) -> usize {
        self.basis.n_sites()
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.data, StateData::Pure(_))
    }

    /// Pure amplitudes, if this is a state vector.
    pub fn amplitudes(&self) -> Option<&CVector> {
        match &self.data {
            StateData::Pure(v) => Some(v),
            StateData::Density(_) => None,
        }
    }

    /// Density matrix in this state's basis (outer product for pure states).
    pub fn density_matrix(&self) -> CMatrix {
        match &self.data {
            StateData::Pure(v) => v * v.adjoint(),
            StateData::Density(r) => r.clone(),
        }
    }

    /// Same state as a density matrix.
    pub fn to_density(&self) -> QuantumState {
        QuantumState {
            basis: self.basis.clone(),
            data: StateData::Density(self.density_matrix()),
        }
    }

    /// Probability of each basis configuration (diagonal of ρ).
    pub fn populations(&self) -> Vec<f64> {
        match &self.data {
            StateData::Pure(v) => v.iter().map(|z| z.norm_sqr()).collect(),
            StateData::Density(r) => (0..r.nrows()).map(|i| r[(i, i)].re).collect(),
        }
    }

    /// Re-express the state in a basis containing every configuration of
    /// this one (typically the full basis).
    pub fn embed(&self, target: Arc<SectorBasis>) -> Result<QuantumState> {
        if target.n_sites() != self.basis.n_sites() {
            return Err(Error::DimensionMismatch("embedding across register sizes".into()));
        }
        let idx: Vec<usize> = self
            .basis
            .states()
            .iter()
            .map(|&c| {
                target
                    .index_of(c)
                    .ok_or_else(|| Error::DimensionMismatch("target basis too small".into()))
            })
            .collect::<Result<_>>()?;
        let d = target.dim();
        let data = match &self.data {
            StateData::Pure(v) => {
                let mut out = CVector::from_element(d, ZERO);
                for (k, &i) in idx.iter().enumerate() {
                    out[i] = v[k];
                }
                StateData::Pure(out)
            }
            StateData::Density(r) => {
                let mut out = CMatrix::zeros(d, d);
                for (a, &i) in idx.iter().enumerate() {
                    for (b, &j) in idx.iter().enumerate() {
                        out[(i, j)] = r[(a, b)];
                    }
                }
                StateData::Density(out)
            }
        };
        Ok(QuantumState { basis: target, data })
    }

    /// Same state in the full `2^n` basis.
    pub fn to_full(&self) -> Result<QuantumState> {
        if self.basis.is_full() {
            return Ok(self.clone());
        }
        let n = self.basis.n_sites();
        if n > MAX_SITES {
            return Err(Error::InvalidArgument("register too large".into()));
        }
        self.embed(Arc::new(SectorBasis::full(n)?))
    }
}

/// Strictly increasing sample times in μs, starting at 0.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid {
    times: Vec<f64>,
}

impl TimeGrid {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.first() != Some(&0.0) {
            return Err(Error::InvalidArgument("time grid must start at 0".into()));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) || !times.iter().all(|t| t.is_finite()) {
            return Err(Error::InvalidArgument("time grid must be strictly increasing".into()));
        }
        Ok(TimeGrid { times })
    }

    /// `n_points` evenly spaced samples on `[0, stop]`.
    pub fn linear(stop: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 || stop <= 0.0 {
            return Err(Error::InvalidArgument("linear grid needs stop > 0 and ≥ 2 points".into()));
        }
        let step = stop / (n_points - 1) as f64;
        Self::new((0..n_points).map(|k| k as f64 * step).collect())
    }

    /// `0` followed by `n_points` log-spaced samples on `[first, stop]`.
    pub fn log(first: f64, stop: f64, n_points: usize) -> Result<Self> {
        if n_points < 2 || first <= 0.0 || stop <= first {
            return Err(Error::InvalidArgument("log grid needs 0 < first < stop and ≥ 2 points".into()));
        }
        let (a, b) = (first.ln(), stop.ln());
        let mut times = vec![0.0];
        times.extend((0..n_points).map(|k| (a + (b - a) * k as f64 / (n_points - 1) as f64).exp()));
        Self::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last(&self) -> f64 {
        *self.times.last().expect("grid is nonempty")
    }
}
