//! Spin model of the ten-qubit ring: device constants, effective couplings,
//! programmable disorder and Hamiltonian assembly.
//!
//! Frequencies are cyclic (`f = ω/2π`) in MHz and times are in μs; the
//! evolution routines apply the phase `2π·f·t`.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{site_mask, SectorBasis};
use crate::error::{Error, Result};
use crate::linalg::{ensure_hermitian, CMatrix, SparseMatrix, C64};

/// Qubit-resonator couplings `g_i/2π` (MHz), Q1..Q10.
pub const DEFAULT_G: [f64; 10] = [14.2, 20.5, 19.9, 20.2, 15.2, 19.9, 19.6, 18.9, 19.8, 16.3];
/// Crosstalk `λᶜ_{i,i+1}/2π` (MHz) for pairs 1-2 .. 9-10 and the closing 10-1.
pub const DEFAULT_LAMBDA_C: [f64; 10] = [1.8, 1.9, 1.9, 1.8, 0.1, 1.8, 1.8, 1.9, 1.8, 0.0];
/// Energy lifetimes `T1` (μs), Q1..Q10.
pub const DEFAULT_T1: [f64; 10] = [25.6, 21.6, 9.8, 14.3, 14.2, 32.5, 11.9, 9.4, 17.9, 30.6];
/// Common qubit-resonator detuning `Δ/2π` (MHz).
pub const DEFAULT_DELTA: f64 = -650.0;
/// Pure dephasing time used for coupled dynamics (μs).
pub const DEFAULT_T_PHI: f64 = 30.0;

/// Measured chip constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceParams {
    pub n_sites: usize,
    /// `g_i/2π` in MHz.
    pub g: Vec<f64>,
    /// `λᶜ/2π` in MHz in ring order; entry `i` couples sites `i+1` and `i+2`
    /// (1-based), the last entry closes the ring.
    pub lambda_c: Vec<f64>,
    /// `Δ/2π` in MHz.
    pub delta: f64,
    /// `T1` per site, μs.
    pub t1: Vec<f64>,
    /// `Tφ` per site, μs.
    pub t_phi: Vec<f64>,
}

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            n_sites: 10,
            g: DEFAULT_G.to_vec(),
            lambda_c: DEFAULT_LAMBDA_C.to_vec(),
            delta: DEFAULT_DELTA,
            t1: DEFAULT_T1.to_vec(),
            t_phi: vec![DEFAULT_T_PHI; 10],
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let n = self.n_sites;
        if n < 2 {
            return Err(Error::InvalidArgument(format!("n_sites = {n} < 2")));
        }
        for (name, v) in [
            ("g", &self.g),
            ("lambda_c", &self.lambda_c),
            ("t1", &self.t1),
            ("t_phi", &self.t_phi),
        ] {
            if v.len() != n {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {} entries, expected {n}",
                    v.len()
                )));
            }
        }
        if !self.g.iter().all(|&x| x > 0.0 && x.is_finite()) {
            return Err(Error::InvalidArgument("g must be positive".into()));
        }
        if !self.lambda_c.iter().all(|&x| x >= 0.0 && x.is_finite()) {
            return Err(Error::InvalidArgument("lambda_c must be non-negative".into()));
        }
        // T1/Tφ may be infinite (no dissipation) but must be positive.
        if !self.t1.iter().chain(&self.t_phi).all(|&x| x > 0.0) {
            return Err(Error::InvalidArgument("t1 and t_phi must be positive".into()));
        }
        if self.delta == 0.0 || !self.delta.is_finite() {
            return Err(Error::InvalidArgument("detuning delta must be nonzero".into()));
        }
        Ok(())
    }

    /// Read a JSON document; missing keys fall back to the measured defaults.
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let params: DeviceParams = serde_json::from_str(&text)?;
        params.validate()?;
        Ok(params)
    }

    /// Restrict to a contiguous run of sites (1-based, inclusive), as an
    /// open chain with the closing crosstalk set to zero.
    pub fn subchain(&self, first: usize, last: usize) -> Result<Self> {
        self.validate()?;
        if first == 0 || last > self.n_sites || last <= first {
            return Err(Error::InvalidArgument(format!(
                "sub-chain {first}..={last} outside 1..={}",
                self.n_sites
            )));
        }
        let r = first - 1..last;
        let mut lambda_c: Vec<f64> = self.lambda_c[first - 1..last - 1].to_vec();
        lambda_c.push(0.0);
        Ok(DeviceParams {
            n_sites: last - first + 1,
            g: self.g[r.clone()].to_vec(),
            lambda_c,
            delta: self.delta,
            t1: self.t1[r.clone()].to_vec(),
            t_phi: self.t_phi[r].to_vec(),
        })
    }
}

/// Disorder protocol: per-site offsets drawn uniformly from `[-bound, bound]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisorderSpec {
    /// Half-width `δh/2π` in MHz.
    pub bound: f64,
    pub n_realizations: usize,
    pub seed: u64,
}

impl DisorderSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.bound >= 0.0 && self.bound.is_finite()) {
            return Err(Error::InvalidArgument(format!("disorder bound {} < 0", self.bound)));
        }
        if self.n_realizations == 0 {
            return Err(Error::InvalidArgument("n_realizations must be at least 1".into()));
        }
        Ok(())
    }
}

/// Draw the offsets `δh_i` of realization `k` (1-based) for `n_sites` sites.
///
/// Each value is addressed by the counter `(seed, k, i)`: stream `k` of a
/// ChaCha generator keyed by `seed`, word position `2i`. The bound only
/// scales the draw, so realizations at different bounds share the same
/// underlying uniforms.
pub fn sample_disorder(spec: &DisorderSpec, k: usize, n_sites: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if k == 0 || k > spec.n_realizations {
        return Err(Error::InvalidArgument(format!(
            "realization index {k} outside 1..={}",
            spec.n_realizations
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(k as u64);
    Ok((0..n_sites)
        .map(|i| {
            rng.set_word_pos(2 * i as u128);
            let u: f64 = rng.random();
            spec.bound * (2.0 * u - 1.0)
        })
        .collect())
}

/// Effective XY model: couplings, inherent fields and one disorder draw.
#[derive(Clone, Debug, PartialEq)]
pub struct SpinModel {
    /// `J_ij/2π` in MHz; symmetric with zero diagonal.
    pub j: DMatrix<f64>,
    /// `h_i/2π` in MHz.
    pub h: Vec<f64>,
    /// `δh_i/2π` in MHz.
    pub dh: Vec<f64>,
}

impl SpinModel {
    pub fn new(j: DMatrix<f64>, h: Vec<f64>, dh: Vec<f64>) -> Result<Self> {
        let n = h.len();
        if j.nrows() != n || j.ncols() != n || dh.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "J is {}x{}, h has {n}, dh has {}",
                j.nrows(),
                j.ncols(),
                dh.len()
            )));
        }
        for a in 0..n {
            if j[(a, a)] != 0.0 {
                return Err(Error::InvalidArgument("J must have zero diagonal".into()));
            }
            for b in 0..a {
                if j[(a, b)] != j[(b, a)] {
                    return Err(Error::InvalidArgument("J must be symmetric".into()));
                }
            }
        }
        Ok(SpinModel { j, h, dh })
    }

    pub fn n_sites(&self) -> usize {
        self.h.len()
    }

    /// Same couplings and fields with a new disorder draw.
    pub fn with_disorder(&self, dh: Vec<f64>) -> Result<Self> {
        if dh.len() != self.n_sites() {
            return Err(Error::DimensionMismatch(format!(
                "{} disorder offsets for {} sites",
                dh.len(),
                self.n_sites()
            )));
        }
        Ok(SpinModel {
            j: self.j.clone(),
            h: self.h.clone(),
            dh,
        })
    }

    /// Total on-site field `h_i + δh_i` (0-based site index).
    pub fn field(&self, i: usize) -> f64 {
        self.h[i] + self.dh[i]
    }

    /// Coupling between 1-based sites.
    pub fn coupling(&self, a: usize, b: usize) -> f64 {
        self.j[(a - 1, b - 1)]
    }
}

/// Whether 0-based sites `a`, `b` are neighbours on the open chain.
pub fn chain_adjacent(a: usize, b: usize) -> bool {
    a.abs_diff(b) == 1
}

/// Effective couplings after eliminating the bus resonator:
/// `J_ij = λᶜ_ij + g_i g_j / Δ` and `h_i = g_i² / Δ`.
pub fn derive_couplings(params: &DeviceParams) -> Result<SpinModel> {
    params.validate()?;
    let n = params.n_sites;
    let delta = params.delta;
    let mut j = DMatrix::from_fn(n, n, |a, b| {
        if a == b {
            0.0
        } else {
            params.g[a] * params.g[b] / delta
        }
    });
    for a in 0..n {
        let b = (a + 1) % n;
        if a == b || (n == 2 && a == 1) {
            continue;
        }
        j[(a, b)] += params.lambda_c[a];
        j[(b, a)] += params.lambda_c[a];
    }
    let h = params.g.iter().map(|g| g * g / delta).collect();
    SpinModel::new(j, h, vec![0.0; n])
}

/// Drop every coupling between sites that are not chain neighbours. The
/// closing pair `(n, 1)` has no direct crosstalk, so its super-exchange
/// term goes too and the result is an open chain.
pub fn restrict_nearest_neighbor(model: &SpinModel) -> SpinModel {
    let n = model.n_sites();
    let j = DMatrix::from_fn(n, n, |a, b| {
        if chain_adjacent(a, b) {
            model.j[(a, b)]
        } else {
            0.0
        }
    });
    SpinModel {
        j,
        h: model.h.clone(),
        dh: model.dh.clone(),
    }
}

/// Hermitian Hamiltonian matrix (cyclic MHz) in a given basis.
#[derive(Clone, Debug)]
pub struct HamiltonianMatrix {
    basis: Arc<SectorBasis>,
    entries: CMatrix,
}

impl HamiltonianMatrix {
    /// Wrap an explicit matrix, checking shape and Hermiticity.
    pub fn new(basis: Arc<SectorBasis>, entries: CMatrix) -> Result<Self> {
        if entries.nrows() != basis.dim() || entries.ncols() != basis.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} matrix for basis of dimension {}",
                entries.nrows(),
                entries.ncols(),
                basis.dim()
            )));
        }
        ensure_hermitian(&entries, 1e-12)?;
        Ok(HamiltonianMatrix { basis, entries })
    }

    pub fn basis(&self) -> &Arc<SectorBasis> {
        &self.basis
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn sparse(&self) -> SparseMatrix {
        SparseMatrix::from_dense(&self.entries, 0.0)
    }

    /// Block of this matrix on the configurations of `sub`, which must all
    /// belong to this matrix's basis.
    pub fn restrict(&self, sub: Arc<SectorBasis>) -> Result<HamiltonianMatrix> {
        let idx: Vec<usize> = sub
            .states()
            .iter()
            .map(|&c| {
                self.basis.index_of(c).ok_or_else(|| {
                    Error::DimensionMismatch("sub-basis not contained in basis".into())
                })
            })
            .collect::<Result<_>>()?;
        let d = idx.len();
        let entries = CMatrix::from_fn(d, d, |a, b| self.entries[(idx[a], idx[b])]);
        Ok(HamiltonianMatrix { basis: sub, entries })
    }

    /// Largest matrix element connecting configurations with different
    /// excitation numbers.
    pub fn excitation_leakage(&self) -> f64 {
        let states = self.basis.states();
        let mut worst = 0.0f64;
        for (a, &ca) in states.iter().enumerate() {
            for (b, &cb) in states.iter().enumerate() {
                if ca.count_ones() != cb.count_ones() {
                    worst = worst.max(self.entries[(a, b)].norm());
                }
            }
        }
        worst
    }
}

/// Assemble `H = Σ_{i<j} J_ij (σ⁺_i σ⁻_j + h.c.) + Σ_i (h_i + δh_i) n_i`.
pub fn build_hamiltonian(model: &SpinModel, basis: Arc<SectorBasis>) -> Result<HamiltonianMatrix> {
    let n = model.n_sites();
    if basis.n_sites() != n {
        return Err(Error::DimensionMismatch(format!(
            "basis has {} sites, model has {n}",
            basis.n_sites()
        )));
    }
    let dim = basis.dim();
    let fields: Vec<f64> = (0..n).map(|i| model.field(i)).collect();
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let jab = model.j[(a, b)];
            if jab != 0.0 {
                pairs.push((site_mask(n, a + 1) | site_mask(n, b + 1), jab));
            }
        }
    }
    let mut entries = CMatrix::zeros(dim, dim);
    for (col, &config) in basis.states().iter().enumerate() {
        let diag: f64 = (0..n)
            .filter(|&i| config & site_mask(n, i + 1) != 0)
            .map(|i| fields[i])
            .sum();
        entries[(col, col)] = C64::new(diag, 0.0);
        for &(mask, jab) in &pairs {
            // a hop needs exactly one of the two sites occupied
            if (config & mask).count_ones() == 1 {
                if let Some(row) = basis.index_of(config ^ mask) {
                    entries[(row, col)] += C64::new(jab, 0.0);
                }
            }
        }
    }
    Ok(HamiltonianMatrix { basis, entries })
}
