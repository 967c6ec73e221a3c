use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::basis::{site_mask, SectorBasis};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, SparseMatrix, C64, ZERO};
use crate::model::{DeviceParams, HamiltonianMatrix};

use super::state::{QuantumState, StateData, TimeGrid};
use super::trajectory::{trajectory_average, TrajectoryOptions};

/// Largest RK4 step (μs) used unless a finer one is requested.
pub const DEFAULT_MAX_STEP: f64 = 2.5e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelKind {
    /// Lowering operator `σ⁻`.
    Relaxation,
    /// Pauli `σ_z`.
    Dephasing,
}

/// One Lindblad operator acting on a single site.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseChannel {
    /// 1-based site.
    pub site: usize,
    pub kind: ChannelKind,
    /// Rate in 1/μs.
    pub rate: f64,
}

/// Relaxation at `1/T1` and `σ_z` dephasing at `1/(2Tφ)` for every site, so a
/// single-qubit coherence decays at `1/(2T1) + 1/Tφ`.
pub fn collapse_channels(params: &DeviceParams) -> Vec<CollapseChannel> {
    let mut out = Vec::with_capacity(2 * params.n_sites);
    for site in 1..=params.n_sites {
        out.push(CollapseChannel {
            site,
            kind: ChannelKind::Relaxation,
            rate: 1.0 / params.t1[site - 1],
        });
        out.push(CollapseChannel {
            site,
            kind: ChannelKind::Dephasing,
            rate: 1.0 / (2.0 * params.t_phi[site - 1]),
        });
    }
    out
}

/// Integrator for the master equation.
#[derive(Clone, Debug, PartialEq)]
pub enum LindbladMethod {
    /// Fixed-step RK4 on ρ with step at most `max_step` μs.
    DenseRk4 { max_step: f64 },
    /// Average of `n_traj` quantum-jump unravelings.
    Trajectory { n_traj: usize, seed: u64, max_step: f64 },
}

impl Default for LindbladMethod {
    fn default() -> Self {
        LindbladMethod::DenseRk4 {
            max_step: DEFAULT_MAX_STEP,
        }
    }
}

/// Integrate `dρ/dt = −i·2π[H,ρ] + Σ_c γ_c (L ρ L† − ½{L†L, ρ})` and return ρ
/// at every grid time, in the Hamiltonian's basis.
pub fn lindblad_evolve(
    h: &HamiltonianMatrix,
    rho0: &QuantumState,
    channels: &[CollapseChannel],
    grid: &TimeGrid,
    method: &LindbladMethod,
) -> Result<Vec<QuantumState>> {
    match method {
        LindbladMethod::DenseRk4 { .. } => {
            let mut out = Vec::with_capacity(grid.len());
            lindblad_observe(h, rho0, channels, grid, method, |_, s| out.push(s.clone()))?;
            Ok(out)
        }
        LindbladMethod::Trajectory {
            n_traj,
            seed,
            max_step,
        } => {
            let opts = TrajectoryOptions {
                n_traj: *n_traj,
                seed: *seed,
                max_step: *max_step,
            };
            let avg = trajectory_average(h, rho0, channels, grid, &opts, |psi| psi * psi.adjoint())?;
            Ok(avg
                .into_iter()
                .map(|rho| {
                    QuantumState::from_parts_unchecked(h.basis().clone(), StateData::Density(rho))
                })
                .collect())
        }
    }
}

/// Dense-RK4 integration handing each grid-time state to `observe` instead
/// of collecting them. Trajectory runs are delegated to
/// [`trajectory_average`] with the full outer product as the reduction.
pub fn lindblad_observe<F>(
    h: &HamiltonianMatrix,
    rho0: &QuantumState,
    channels: &[CollapseChannel],
    grid: &TimeGrid,
    method: &LindbladMethod,
    mut observe: F,
) -> Result<()>
where
    F: FnMut(usize, &QuantumState),
{
    validate_channels(h, channels)?;
    let max_step = match method {
        LindbladMethod::DenseRk4 { max_step } => *max_step,
        LindbladMethod::Trajectory { .. } => {
            for (k, s) in lindblad_evolve(h, rho0, channels, grid, method)?.iter().enumerate() {
                observe(k, s);
            }
            return Ok(());
        }
    };
    if !(max_step > 0.0) {
        return Err(Error::InvalidArgument("RK4 step must be positive".into()));
    }
    let rho0 = align_state(h, rho0)?;
    let solver = BlockSolver::new(h, channels, &rho0.density_matrix())?;
    let mut y = solver.pack(&rho0.density_matrix());
    let mut rk = Rk4Buffers::new(y.len());
    let mut t = 0.0;
    for (k, &target) in grid.times().iter().enumerate() {
        let span = target - t;
        if span > 0.0 {
            let n_steps = (span / max_step).ceil().max(1.0) as usize;
            let dt = span / n_steps as f64;
            for _ in 0..n_steps {
                rk.step(&mut y, dt, |x, out| solver.rhs(x, out));
            }
        }
        t = target;
        let state = QuantumState::from_parts_unchecked(
            h.basis().clone(),
            StateData::Density(solver.unpack(&y)),
        );
        observe(k, &state);
    }
    Ok(())
}

pub(crate) fn validate_channels(h: &HamiltonianMatrix, channels: &[CollapseChannel]) -> Result<()> {
    let n = h.basis().n_sites();
    for c in channels {
        if c.site == 0 || c.site > n {
            return Err(Error::InvalidArgument(format!("channel site {} outside 1..={n}", c.site)));
        }
        if !(c.rate >= 0.0 && c.rate.is_finite()) {
            return Err(Error::InvalidArgument(format!("channel rate {} must be ≥ 0", c.rate)));
        }
        if c.kind == ChannelKind::Relaxation && c.rate > 0.0 && !h.basis().is_full() {
            return Err(Error::InvalidArgument(
                "relaxation leaves the excitation sector; use the full basis".into(),
            ));
        }
    }
    Ok(())
}

/// Bring a state into the Hamiltonian's basis.
pub(crate) fn align_state(h: &HamiltonianMatrix, state: &QuantumState) -> Result<QuantumState> {
    if state.basis().as_ref() == h.basis().as_ref() {
        Ok(state.clone())
    } else {
        state.embed(h.basis().clone())
    }
}

/// Classic fixed-step RK4 on a flat complex vector.
pub(crate) struct Rk4Buffers {
    k1: Vec<C64>,
    k2: Vec<C64>,
    k3: Vec<C64>,
    k4: Vec<C64>,
    tmp: Vec<C64>,
}

impl Rk4Buffers {
    pub(crate) fn new(len: usize) -> Self {
        Rk4Buffers {
            k1: vec![ZERO; len],
            k2: vec![ZERO; len],
            k3: vec![ZERO; len],
            k4: vec![ZERO; len],
            tmp: vec![ZERO; len],
        }
    }

    pub(crate) fn step<F>(&mut self, y: &mut [C64], dt: f64, f: F)
    where
        F: Fn(&[C64], &mut [C64]),
    {
        f(y, &mut self.k1);
        axpy_into(&mut self.tmp, y, 0.5 * dt, &self.k1);
        f(&self.tmp, &mut self.k2);
        axpy_into(&mut self.tmp, y, 0.5 * dt, &self.k2);
        f(&self.tmp, &mut self.k3);
        axpy_into(&mut self.tmp, y, dt, &self.k3);
        f(&self.tmp, &mut self.k4);
        let w = dt / 6.0;
        for i in 0..y.len() {
            y[i] += w * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn axpy_into(out: &mut [C64], y: &[C64], a: f64, k: &[C64]) {
    for ((o, &yi), &ki) in out.iter_mut().zip(y).zip(k) {
        *o = yi + a * ki;
    }
}

/// Relaxation feed `ρ_dst[a,b] += γ ρ_src[a',b']` where `a'`, `b'` are the
/// raised configurations.
struct Feed {
    src: usize,
    rate: f64,
    rows: Vec<(usize, usize)>,
    cols: Vec<(usize, usize)>,
}

struct Block {
    row_part: usize,
    col_part: usize,
    offset: usize,
    nrows: usize,
    ncols: usize,
    /// Static decay `−½Σγ₁(n_a + n_b) − 2Σγ_φ[bits differ]`, row-major.
    decay: Vec<f64>,
    feeds: Vec<Feed>,
}

/// Master-equation right-hand side on ρ stored as blocks between subspaces
/// that the Hamiltonian leaves invariant. With an excitation-conserving
/// Hamiltonian the subspaces are the excitation sectors; relaxation only
/// links block `(m, m')` to `(m−1, m'−1)`, so only blocks reachable from the
/// initial state are stored.
struct BlockSolver {
    basis: Arc<SectorBasis>,
    parts: Vec<Vec<usize>>,
    part_h: Vec<SparseMatrix>,
    blocks: Vec<Block>,
    len: usize,
}

impl BlockSolver {
    fn new(h: &HamiltonianMatrix, channels: &[CollapseChannel], rho0: &CMatrix) -> Result<Self> {
        let basis = h.basis().clone();
        let n = basis.n_sites();
        let dim = basis.dim();

        // invariant subspaces of H
        let mut parts: Vec<Vec<usize>> = if h.excitation_leakage() == 0.0 {
            let mut by_m: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
            for (i, &c) in basis.states().iter().enumerate() {
                by_m.entry(c.count_ones()).or_default().push(i);
            }
            by_m.into_values().collect()
        } else {
            vec![(0..dim).collect()]
        };
        parts.retain(|p| !p.is_empty());
        let mut locate = vec![(0, 0); dim];
        for (p, idx) in parts.iter().enumerate() {
            for (k, &i) in idx.iter().enumerate() {
                locate[i] = (p, k);
            }
        }
        let part_h: Vec<SparseMatrix> = parts
            .iter()
            .map(|idx| {
                let d = idx.len();
                let m = CMatrix::from_fn(d, d, |a, b| h.entries()[(idx[a], idx[b])]);
                SparseMatrix::from_dense(&m, 0.0)
            })
            .collect();

        let mut gamma1 = vec![0.0; n + 1];
        let mut gamma_phi = vec![0.0; n + 1];
        for c in channels {
            match c.kind {
                ChannelKind::Relaxation => gamma1[c.site] += c.rate,
                ChannelKind::Dephasing => gamma_phi[c.site] += c.rate,
            }
        }

        // active blocks: those with initial weight plus everything relaxation feeds
        let np = parts.len();
        let mut active = vec![false; np * np];
        for a in 0..dim {
            for b in 0..dim {
                if rho0[(a, b)] != ZERO {
                    active[locate[a].0 * np + locate[b].0] = true;
                }
            }
        }
        let lowered_part = |p: usize, site: usize| -> Option<usize> {
            let mask = site_mask(n, site);
            parts[p]
                .iter()
                .find(|&&i| basis.state(i) & mask != 0)
                .and_then(|&i| basis.index_of(basis.state(i) ^ mask))
                .map(|j| locate[j].0)
        };
        let mut changed = true;
        while changed {
            changed = false;
            for p in 0..np {
                for q in 0..np {
                    if !active[p * np + q] {
                        continue;
                    }
                    for site in 1..=n {
                        if gamma1[site] == 0.0 {
                            continue;
                        }
                        if let (Some(lp), Some(lq)) = (lowered_part(p, site), lowered_part(q, site)) {
                            if !active[lp * np + lq] {
                                active[lp * np + lq] = true;
                                changed = true;
                            }
                        }
                    }
                }
            }
        }

        let mut block_index = vec![usize::MAX; np * np];
        let mut blocks = Vec::new();
        let mut offset = 0;
        for p in 0..np {
            for q in 0..np {
                if !active[p * np + q] {
                    continue;
                }
                let (nr, nc) = (parts[p].len(), parts[q].len());
                let rel = |i: usize| -> f64 {
                    let c = basis.state(i);
                    (1..=n).filter(|&s| c & site_mask(n, s) != 0).map(|s| gamma1[s]).sum()
                };
                let row_rel: Vec<f64> = parts[p].iter().map(|&i| rel(i)).collect();
                let col_rel: Vec<f64> = parts[q].iter().map(|&i| rel(i)).collect();
                let mut decay = Vec::with_capacity(nr * nc);
                for (a, &ia) in parts[p].iter().enumerate() {
                    let ca = basis.state(ia);
                    for (b, &ib) in parts[q].iter().enumerate() {
                        let diff = ca ^ basis.state(ib);
                        let deph: f64 = (1..=n)
                            .filter(|&s| diff & site_mask(n, s) != 0)
                            .map(|s| 2.0 * gamma_phi[s])
                            .sum();
                        decay.push(-0.5 * (row_rel[a] + col_rel[b]) - deph);
                    }
                }
                block_index[p * np + q] = blocks.len();
                blocks.push(Block {
                    row_part: p,
                    col_part: q,
                    offset,
                    nrows: nr,
                    ncols: nc,
                    decay,
                    feeds: Vec::new(),
                });
                offset += nr * nc;
            }
        }

        // relaxation feeds into each active block
        for bi in 0..blocks.len() {
            let (p, q) = (blocks[bi].row_part, blocks[bi].col_part);
            for site in 1..=n {
                let rate = gamma1[site];
                if rate == 0.0 {
                    continue;
                }
                let mask = site_mask(n, site);
                let raise = |part: usize| -> Vec<(usize, usize, usize)> {
                    parts[part]
                        .iter()
                        .enumerate()
                        .filter(|(_, &i)| basis.state(i) & mask == 0)
                        .filter_map(|(k, &i)| {
                            basis.index_of(basis.state(i) | mask).map(|j| (k, locate[j].0, locate[j].1))
                        })
                        .collect()
                };
                let rows = raise(p);
                let cols = raise(q);
                let row_parts: BTreeSet<usize> = rows.iter().map(|r| r.1).collect();
                let col_parts: BTreeSet<usize> = cols.iter().map(|c| c.1).collect();
                for &sp in &row_parts {
                    for &sq in &col_parts {
                        let src = block_index[sp * np + sq];
                        if src == usize::MAX {
                            continue;
                        }
                        blocks[bi].feeds.push(Feed {
                            src,
                            rate,
                            rows: rows.iter().filter(|r| r.1 == sp).map(|r| (r.0, r.2)).collect(),
                            cols: cols.iter().filter(|c| c.1 == sq).map(|c| (c.0, c.2)).collect(),
                        });
                    }
                }
            }
        }

        Ok(BlockSolver {
            basis,
            parts,
            part_h,
            blocks,
            len: offset,
        })
    }

    fn pack(&self, rho: &CMatrix) -> Vec<C64> {
        let mut y = vec![ZERO; self.len];
        for blk in &self.blocks {
            let (rp, cp) = (&self.parts[blk.row_part], &self.parts[blk.col_part]);
            for (a, &i) in rp.iter().enumerate() {
                for (b, &j) in cp.iter().enumerate() {
                    y[blk.offset + a * blk.ncols + b] = rho[(i, j)];
                }
            }
        }
        y
    }

    fn unpack(&self, y: &[C64]) -> CMatrix {
        let d = self.basis.dim();
        let mut rho = CMatrix::zeros(d, d);
        for blk in &self.blocks {
            let (rp, cp) = (&self.parts[blk.row_part], &self.parts[blk.col_part]);
            for (a, &i) in rp.iter().enumerate() {
                for (b, &j) in cp.iter().enumerate() {
                    rho[(i, j)] = y[blk.offset + a * blk.ncols + b];
                }
            }
        }
        rho
    }

    fn rhs(&self, y: &[C64], out: &mut [C64]) {
        let minus_i_2pi = C64::new(0.0, -2.0 * PI);
        for blk in &self.blocks {
            let nc = blk.ncols;
            let rho = &y[blk.offset..blk.offset + blk.nrows * nc];
            let dst = &mut out[blk.offset..blk.offset + blk.nrows * nc];
            for (d, (&r, &g)) in dst.iter_mut().zip(rho.iter().zip(&blk.decay)) {
                *d = g * r;
            }
            let hp = &self.part_h[blk.row_part];
            let hq = &self.part_h[blk.col_part];
            for a in 0..blk.nrows {
                let row_out = &mut dst[a * nc..(a + 1) * nc];
                // −i2π (H ρ)[a, :]
                for (c, v) in hp.row(a) {
                    let coef = minus_i_2pi * v;
                    let src = &rho[c * nc..(c + 1) * nc];
                    for (o, &s) in row_out.iter_mut().zip(src) {
                        *o += coef * s;
                    }
                }
                // +i2π (ρ H)[a, :]
                let rho_row = &rho[a * nc..(a + 1) * nc];
                for (c, &rc) in rho_row.iter().enumerate() {
                    if rc == ZERO {
                        continue;
                    }
                    let coef = -minus_i_2pi * rc;
                    for (b, v) in hq.row(c) {
                        row_out[b] += coef * v;
                    }
                }
            }
            for feed in &blk.feeds {
                let src_blk = &self.blocks[feed.src];
                let src = &y[src_blk.offset..src_blk.offset + src_blk.nrows * src_blk.ncols];
                let snc = src_blk.ncols;
                for &(a, sa) in &feed.rows {
                    for &(b, sb) in &feed.cols {
                        dst[a * nc + b] += feed.rate * src[sa * snc + sb];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::sector_basis;
    use crate::evolve::evolve_pure;
    use crate::model::{build_hamiltonian, derive_couplings, SpinModel};
    use nalgebra::DMatrix;

    fn single_qubit() -> HamiltonianMatrix {
        let model = SpinModel::new(DMatrix::zeros(1, 1), vec![0.4], vec![0.0]).unwrap();
        build_hamiltonian(&model, Arc::new(sector_basis(1, None).unwrap())).unwrap()
    }

    #[test]
    fn channel_rates_from_device() {
        let ch = collapse_channels(&DeviceParams::default());
        assert_eq!(ch.len(), 20);
        assert_eq!(ch[0].kind, ChannelKind::Relaxation);
        assert!((ch[0].rate - 0.03906).abs() < 5e-6);
        assert!((ch[1].rate - 1.0 / 60.0).abs() < 1e-15);
    }

    #[test]
    fn infinite_lifetimes_give_zero_rates() {
        let mut p = DeviceParams::default();
        p.t1 = vec![f64::INFINITY; 10];
        p.t_phi = vec![f64::INFINITY; 10];
        assert!(collapse_channels(&p).iter().all(|c| c.rate == 0.0));
    }

    #[test]
    fn relaxation_is_exponential() {
        let h = single_qubit();
        let rho0 = QuantumState::basis_state(h.basis().clone(), 1).unwrap();
        let gamma = 0.8;
        let ch = [CollapseChannel {
            site: 1,
            kind: ChannelKind::Relaxation,
            rate: gamma,
        }];
        let grid = TimeGrid::linear(1.0, 11).unwrap();
        let out = lindblad_evolve(&h, &rho0, &ch, &grid, &LindbladMethod::default()).unwrap();
        for (t, s) in grid.times().iter().zip(&out) {
            assert!((s.populations()[1] - (-gamma * t).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn dephasing_decays_coherence_at_one_over_t_phi() {
        let h = single_qubit();
        let t_phi = 0.5;
        let ch = [CollapseChannel {
            site: 1,
            kind: ChannelKind::Dephasing,
            rate: 1.0 / (2.0 * t_phi),
        }];
        let rho0 = QuantumState::density(
            h.basis().clone(),
            CMatrix::from_element(2, 2, C64::new(0.5, 0.0)),
        )
        .unwrap();
        let grid = TimeGrid::linear(1.0, 5).unwrap();
        let out = lindblad_evolve(&h, &rho0, &ch, &grid, &LindbladMethod::default()).unwrap();
        for (t, s) in grid.times().iter().zip(&out) {
            let coh = s.density_matrix()[(0, 1)].norm();
            assert!((coh - 0.5 * (-t / t_phi).exp()).abs() < 1e-10);
        }
    }

    #[test]
    fn closed_system_matches_unitary() {
        let params = DeviceParams::default().subchain(3, 7).unwrap();
        let model = derive_couplings(&params).unwrap();
        let h = build_hamiltonian(&model, Arc::new(sector_basis(5, None).unwrap())).unwrap();
        let psi0 = QuantumState::basis_state(h.basis().clone(), 0b01010).unwrap();
        let grid = TimeGrid::linear(0.5, 6).unwrap();
        let pure = evolve_pure(&h, &psi0, &grid).unwrap();
        let mixed = lindblad_evolve(&h, &psi0.to_density(), &[], &grid, &LindbladMethod::default()).unwrap();
        for (p, m) in pure.iter().zip(&mixed) {
            let err = (p.density_matrix() - m.density_matrix()).camax();
            assert!(err < 1e-8, "deviation {err:e}");
        }
    }

    #[test]
    fn sector_basis_with_relaxation_rejected() {
        let model = derive_couplings(&DeviceParams::default().subchain(1, 3).unwrap()).unwrap();
        let h = build_hamiltonian(&model, Arc::new(sector_basis(3, Some(1)).unwrap())).unwrap();
        let rho0 = QuantumState::basis_state(h.basis().clone(), 0b100).unwrap();
        let ch = [CollapseChannel {
            site: 1,
            kind: ChannelKind::Relaxation,
            rate: 0.1,
        }];
        let grid = TimeGrid::linear(0.1, 2).unwrap();
        assert!(lindblad_evolve(&h, &rho0, &ch, &grid, &LindbladMethod::default()).is_err());
        let bad_step = LindbladMethod::DenseRk4 { max_step: 0.0 };
        assert!(lindblad_evolve(&h, &rho0, &[], &grid, &bad_step).is_err());
    }

    #[test]
    fn non_conserving_hamiltonian_uses_single_block() {
        // transverse term mixes sectors; compare against direct dense RK4
        let basis = Arc::new(sector_basis(2, None).unwrap());
        let mut m = CMatrix::zeros(4, 4);
        m[(0, 1)] = C64::new(0.3, 0.0);
        m[(1, 0)] = C64::new(0.3, 0.0);
        m[(2, 3)] = C64::new(0.2, 0.1);
        m[(3, 2)] = C64::new(0.2, -0.1);
        m[(1, 2)] = C64::new(0.5, 0.0);
        m[(2, 1)] = C64::new(0.5, 0.0);
        let h = HamiltonianMatrix::new(basis.clone(), m.clone()).unwrap();
        let ch = collapse_channels(&DeviceParams::default().subchain(1, 2).unwrap());
        let rho0 = QuantumState::basis_state(basis, 0b11).unwrap();
        let grid = TimeGrid::linear(0.5, 3).unwrap();
        let out = lindblad_evolve(&h, &rho0, &ch, &grid, &LindbladMethod::default()).unwrap();
        for s in &out {
            assert!((s.density_matrix().trace().re - 1.0).abs() < 1e-10);
        }
        assert!(out[2].populations()[0b00] > 0.0);
    }
}
