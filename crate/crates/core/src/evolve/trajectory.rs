use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::basis::site_mask;
use crate::error::{Error, Result};
use crate::linalg::{eigh, CMatrix, CVector, SparseMatrix, C64, ZERO};
use crate::model::HamiltonianMatrix;

use super::lindblad::{align_state, validate_channels, ChannelKind, CollapseChannel, Rk4Buffers};
use super::state::{QuantumState, StateData, TimeGrid};

/// Trajectories are reduced in fixed-size chunks so the floating-point
/// summation order does not depend on the worker count.
const CHUNK: usize = 8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryOptions {
    pub n_traj: usize,
    pub seed: u64,
    /// RK4 step bound for the no-jump evolution, μs.
    pub max_step: f64,
}

struct Unraveling {
    h: SparseMatrix,
    n_sites: usize,
    states: Vec<usize>,
    lookup: Vec<Option<usize>>,
    /// `½ Σ_c γ_c ⟨c|L†L|c⟩` per basis configuration.
    damping: Vec<f64>,
    channels: Vec<CollapseChannel>,
}

impl Unraveling {
    fn deriv(&self, psi: &[C64], out: &mut [C64]) {
        self.h.matvec_into(psi, C64::new(0.0, -2.0 * PI), out);
        for ((o, &p), &d) in out.iter_mut().zip(psi).zip(&self.damping) {
            *o -= d * p;
        }
    }

    fn jump_weight(&self, ch: &CollapseChannel, psi: &[C64]) -> f64 {
        match ch.kind {
            ChannelKind::Dephasing => ch.rate * psi.iter().map(|z| z.norm_sqr()).sum::<f64>(),
            ChannelKind::Relaxation => {
                let mask = site_mask(self.n_sites, ch.site);
                ch.rate
                    * psi
                        .iter()
                        .zip(&self.states)
                        .filter(|(_, &c)| c & mask != 0)
                        .map(|(z, _)| z.norm_sqr())
                        .sum::<f64>()
            }
        }
    }

    fn apply_jump(&self, ch: &CollapseChannel, psi: &mut [C64]) {
        let mask = site_mask(self.n_sites, ch.site);
        match ch.kind {
            ChannelKind::Dephasing => {
                for (z, &c) in psi.iter_mut().zip(&self.states) {
                    if c & mask != 0 {
                        *z = -*z;
                    }
                }
            }
            ChannelKind::Relaxation => {
                let mut out = vec![ZERO; psi.len()];
                for (k, &c) in self.states.iter().enumerate() {
                    if c & mask != 0 {
                        if let Some(j) = self.lookup[c ^ mask] {
                            out[j] = psi[k];
                        }
                    }
                }
                psi.copy_from_slice(&out);
            }
        }
    }

    /// One unraveling; `record` receives the normalized state at each grid
    /// time.
    fn run<F>(&self, psi0: &[C64], grid: &TimeGrid, max_step: f64, rng: &mut ChaCha8Rng, mut record: F)
    where
        F: FnMut(usize, &CVector),
    {
        let mut psi = psi0.to_vec();
        let mut rk = Rk4Buffers::new(psi.len());
        let mut threshold: f64 = rng.random();
        let mut t = 0.0;
        for (k, &target) in grid.times().iter().enumerate() {
            let span = target - t;
            if span > 0.0 {
                let n_steps = (span / max_step).ceil().max(1.0) as usize;
                let dt = span / n_steps as f64;
                for _ in 0..n_steps {
                    rk.step(&mut psi, dt, |x, out| self.deriv(x, out));
                    let norm2: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
                    if norm2 <= threshold {
                        self.jump(&mut psi, rng);
                        threshold = rng.random();
                    }
                }
            }
            t = target;
            let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            let v = CVector::from_iterator(psi.len(), psi.iter().map(|z| z / norm));
            record(k, &v);
        }
    }

    fn jump(&self, psi: &mut [C64], rng: &mut ChaCha8Rng) {
        let weights: Vec<f64> = self.channels.iter().map(|c| self.jump_weight(c, psi)).collect();
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return;
        }
        let mut pick = rng.random::<f64>() * total;
        let mut chosen = self.channels.len() - 1;
        for (i, w) in weights.iter().enumerate() {
            if pick < *w {
                chosen = i;
                break;
            }
            pick -= w;
        }
        self.apply_jump(&self.channels[chosen], psi);
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        for z in psi.iter_mut() {
            *z /= norm;
        }
    }
}

/// Average a linear reduction of the state over quantum-jump trajectories.
///
/// Each trajectory starts from an eigenvector of `rho0` drawn with its
/// eigenvalue as probability, evolves under
/// `H_eff = 2πH − (i/2) Σ γ L†L` and jumps when the squared norm falls below
/// a uniform threshold. `reduce` maps the normalized state at each grid time
/// to a matrix (the full `|ψ⟩⟨ψ|`, a reduced density matrix, site
/// probabilities, ...); the result is its trajectory mean per grid time.
/// Trajectory `k` draws from stream `k` of a ChaCha generator keyed by the
/// seed, so results do not depend on scheduling.
pub fn trajectory_average<F>(
    h: &HamiltonianMatrix,
    rho0: &QuantumState,
    channels: &[CollapseChannel],
    grid: &TimeGrid,
    opts: &TrajectoryOptions,
    reduce: F,
) -> Result<Vec<CMatrix>>
where
    F: Fn(&CVector) -> CMatrix + Sync,
{
    validate_channels(h, channels)?;
    if opts.n_traj == 0 {
        return Err(Error::InvalidArgument("trajectory count must be positive".into()));
    }
    if !(opts.max_step > 0.0) {
        return Err(Error::InvalidArgument("trajectory step must be positive".into()));
    }
    let rho0 = align_state(h, rho0)?;
    let basis = h.basis();
    let n = basis.n_sites();

    // initial ensemble: eigen-decomposition of ρ₀ (a single vector if pure)
    let ensemble: Vec<(f64, CVector)> = match rho0.data() {
        StateData::Pure(v) => vec![(1.0, v.clone())],
        StateData::Density(rho) => {
            let (vals, vecs) = eigh(rho);
            vals.iter()
                .enumerate()
                .filter(|(_, &p)| p > 1e-14)
                .map(|(i, &p)| (p, vecs.column(i).into_owned()))
                .collect()
        }
    };
    let total_weight: f64 = ensemble.iter().map(|e| e.0).sum();

    let mut damping = vec![0.0; basis.dim()];
    for (d, &c) in damping.iter_mut().zip(basis.states()) {
        for ch in channels {
            let ll = match ch.kind {
                ChannelKind::Dephasing => 1.0,
                ChannelKind::Relaxation => {
                    if c & site_mask(n, ch.site) != 0 {
                        1.0
                    } else {
                        0.0
                    }
                }
            };
            *d += 0.5 * ch.rate * ll;
        }
    }
    let mut lookup = vec![None; 1usize << n];
    for (i, &c) in basis.states().iter().enumerate() {
        lookup[c] = Some(i);
    }
    let unravel = Unraveling {
        h: h.sparse(),
        n_sites: n,
        states: basis.states().to_vec(),
        lookup,
        damping,
        channels: channels.iter().copied().filter(|c| c.rate > 0.0).collect(),
    };

    let n_times = grid.len();
    let chunks: Vec<std::ops::Range<usize>> = (0..opts.n_traj)
        .step_by(CHUNK)
        .map(|s| s..(s + CHUNK).min(opts.n_traj))
        .collect();
    let partial: Vec<Vec<Option<CMatrix>>> = chunks
        .par_iter()
        .map(|range| {
            let mut acc: Vec<Option<CMatrix>> = vec![None; n_times];
            for k in range.clone() {
                let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
                rng.set_stream(k as u64);
                let psi0 = pick_initial(&ensemble, total_weight, &mut rng);
                let psi0: Vec<C64> = psi0.iter().copied().collect();
                unravel.run(&psi0, grid, opts.max_step, &mut rng, |ti, psi| {
                    let r = reduce(psi);
                    match &mut acc[ti] {
                        Some(m) => *m += r,
                        slot @ None => *slot = Some(r),
                    }
                });
            }
            acc
        })
        .collect();

    let scale = 1.0 / opts.n_traj as f64;
    let mut out: Vec<Option<CMatrix>> = vec![None; n_times];
    for chunk in partial {
        for (slot, m) in out.iter_mut().zip(chunk) {
            if let Some(m) = m {
                match slot {
                    Some(acc) => *acc += m,
                    None => *slot = Some(m),
                }
            }
        }
    }
    Ok(out
        .into_iter()
        .map(|m| m.expect("every trajectory records every grid time") * C64::new(scale, 0.0))
        .collect())
}

fn pick_initial<'a>(ensemble: &'a [(f64, CVector)], total: f64, rng: &mut ChaCha8Rng) -> &'a CVector {
    if ensemble.len() == 1 {
        return &ensemble[0].1;
    }
    let mut pick = rng.random::<f64>() * total;
    for (p, v) in ensemble {
        if pick < *p {
            return v;
        }
        pick -= p;
    }
    &ensemble[ensemble.len() - 1].1
}
