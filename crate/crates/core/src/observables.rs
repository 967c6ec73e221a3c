//! Measured quantities: site occupations, imbalance, post-selection,
//! reduced density matrices, entanglement entropy, ensemble statistics and
//! finite-shot readout.

use std::collections::BTreeMap;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{occupied, site_mask};
use crate::error::{Error, Result};
use crate::evolve::{QuantumState, StateData, TimeGrid};
use crate::linalg::{eigvalsh, hermitian_deviation, CMatrix, CVector, C64, ZERO};

/// Eigenvalues below this floor contribute nothing to the entropy.
pub const ENTROPY_FLOOR: f64 = 1e-12;

/// Excited-state probability `P_i = ⟨n_i⟩` per site (index 0 is site 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteProbabilities(pub Vec<f64>);

impl SiteProbabilities {
    pub fn n_sites(&self) -> usize {
        self.0.len()
    }

    pub fn total(&self) -> f64 {
        self.0.iter().sum()
    }

    /// Probability of 1-based `site`.
    pub fn site(&self, site: usize) -> f64 {
        self.0[site - 1]
    }

    /// Reverse the site order.
    pub fn mirrored(&self) -> SiteProbabilities {
        SiteProbabilities(self.0.iter().rev().copied().collect())
    }
}

/// Occupations from basis-configuration populations.
pub fn site_probabilities_from_populations(
    states: &[usize],
    populations: &[f64],
    n_sites: usize,
) -> SiteProbabilities {
    let mut p = vec![0.0; n_sites];
    for (&c, &w) in states.iter().zip(populations) {
        if w == 0.0 {
            continue;
        }
        for (i, pi) in p.iter_mut().enumerate() {
            if occupied(c, n_sites, i + 1) {
                *pi += w;
            }
        }
    }
    SiteProbabilities(p)
}

pub fn site_probabilities(state: &QuantumState) -> SiteProbabilities {
    site_probabilities_from_populations(state.basis().states(), &state.populations(), state.n_sites())
}

fn normalized_difference(a: f64, b: f64) -> Result<f64> {
    let total = a + b;
    if total.abs() < 1e-300 {
        return Err(Error::Undefined("imbalance of a state with no excitations".into()));
    }
    Ok((a - b) / total)
}

/// `(N_e − N_o)/(N_e + N_o)` with even/odd counted on 1-based site labels.
pub fn imbalance_neel(p: &SiteProbabilities) -> Result<f64> {
    let even: f64 = p.0.iter().skip(1).step_by(2).sum();
    let odd: f64 = p.0.iter().step_by(2).sum();
    normalized_difference(even, odd)
}

/// `(N_L − N_R)/(N_L + N_R)`, left being the first half of the chain.
pub fn imbalance_domain(p: &SiteProbabilities) -> Result<f64> {
    let half = p.n_sites() / 2;
    let left: f64 = p.0[..half].iter().sum();
    let right: f64 = p.0[half..].iter().sum();
    normalized_difference(left, right)
}

/// Distance `√Σ (0.5 − P_i)²` from the infinite-temperature occupations.
pub fn delta_n(p: &SiteProbabilities) -> f64 {
    p.0.iter().map(|x| (0.5 - x).powi(2)).sum::<f64>().sqrt()
}

/// Project a full-basis state onto the `m`-excitation sector and renormalize.
pub fn post_select(state: &QuantumState, m: usize) -> Result<QuantumState> {
    if !state.basis().is_full() {
        return Err(Error::InvalidArgument("post-selection needs a full-basis state".into()));
    }
    let keep: Vec<bool> = state
        .basis()
        .states()
        .iter()
        .map(|c| c.count_ones() as usize == m)
        .collect();
    match state.data() {
        StateData::Pure(v) => {
            let projected = CVector::from_iterator(
                v.len(),
                v.iter().zip(&keep).map(|(&z, &k)| if k { z } else { ZERO }),
            );
            let norm = projected.norm();
            if norm < 1e-12 {
                return Err(Error::Undefined(format!("no weight in the {m}-excitation sector")));
            }
            QuantumState::pure(state.basis().clone(), projected / C64::new(norm, 0.0))
        }
        StateData::Density(rho) => {
            let d = rho.nrows();
            let projected =
                CMatrix::from_fn(d, d, |a, b| if keep[a] && keep[b] { rho[(a, b)] } else { ZERO });
            let tr = projected.trace().re;
            if tr < 1e-12 {
                return Err(Error::Undefined(format!("no weight in the {m}-excitation sector")));
            }
            QuantumState::density(state.basis().clone(), projected / C64::new(tr, 0.0))
        }
    }
}

fn check_subset(keep: &[usize], n_sites: usize) -> Result<()> {
    if keep.is_empty() {
        return Err(Error::InvalidArgument("empty subsystem".into()));
    }
    for (k, &s) in keep.iter().enumerate() {
        if s == 0 || s > n_sites {
            return Err(Error::InvalidArgument(format!("site {s} outside 1..={n_sites}")));
        }
        if keep[..k].contains(&s) {
            return Err(Error::InvalidArgument(format!("site {s} listed twice")));
        }
    }
    Ok(())
}

/// Split a configuration into (kept index, traced index). Kept sites are
/// packed in the order given, the first one most significant.
fn split_config(c: usize, n_sites: usize, keep: &[usize], rest: &[usize]) -> (usize, usize) {
    let pack = |sites: &[usize]| {
        sites
            .iter()
            .fold(0usize, |acc, &s| (acc << 1) | usize::from(c & site_mask(n_sites, s) != 0))
    };
    (pack(keep), pack(rest))
}

fn complement(keep: &[usize], n_sites: usize) -> Vec<usize> {
    (1..=n_sites).filter(|s| !keep.contains(s)).collect()
}

/// Reduced density matrix of the sites in `keep` (1-based). The reduced
/// basis is ordered like a bitstring over `keep` in the order given.
pub fn partial_trace(state: &QuantumState, keep: &[usize]) -> Result<CMatrix> {
    let n = state.n_sites();
    check_subset(keep, n)?;
    let rest = complement(keep, n);
    let dk = 1usize << keep.len();
    let states = state.basis().states();
    match state.data() {
        StateData::Pure(v) => {
            let dr = 1usize << rest.len();
            let mut m = CMatrix::zeros(dk, dr);
            for (&c, &z) in states.iter().zip(v.iter()) {
                let (k, r) = split_config(c, n, keep, &rest);
                m[(k, r)] = z;
            }
            Ok(&m * m.adjoint())
        }
        StateData::Density(rho) => {
            let mut groups: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
            for (i, &c) in states.iter().enumerate() {
                let (k, r) = split_config(c, n, keep, &rest);
                groups.entry(r).or_default().push((i, k));
            }
            let mut out = CMatrix::zeros(dk, dk);
            for members in groups.values() {
                for &(a, ka) in members {
                    for &(b, kb) in members {
                        out[(ka, kb)] += rho[(a, b)];
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Partial trace of a raw density matrix over a full `2^n_sites` register.
pub fn reduce_density(rho: &CMatrix, n_sites: usize, keep: &[usize]) -> Result<CMatrix> {
    if rho.nrows() != 1usize << n_sites || rho.ncols() != rho.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{}x{} matrix is not a {n_sites}-site register",
            rho.nrows(),
            rho.ncols()
        )));
    }
    check_subset(keep, n_sites)?;
    let rest = complement(keep, n_sites);
    let dk = 1usize << keep.len();
    let dr = 1usize << rest.len();
    let mut index = vec![vec![0usize; dk]; dr];
    for c in 0..rho.nrows() {
        let (k, r) = split_config(c, n_sites, keep, &rest);
        index[r][k] = c;
    }
    let mut out = CMatrix::zeros(dk, dk);
    for row in &index {
        for ka in 0..dk {
            for kb in 0..dk {
                out[(ka, kb)] += rho[(row[ka], row[kb])];
            }
        }
    }
    Ok(out)
}

/// `S = −tr(ρ ln ρ)` in nats.
pub fn von_neumann_entropy(rho: &CMatrix) -> Result<f64> {
    if rho.nrows() != rho.ncols() {
        return Err(Error::DimensionMismatch("entropy of a non-square matrix".into()));
    }
    let scale = rho.iter().fold(1.0f64, |m, z| m.max(z.norm()));
    let dev = hermitian_deviation(rho);
    if dev > 1e-9 * scale {
        return Err(Error::NotHermitian(dev));
    }
    Ok(eigvalsh(rho)
        .into_iter()
        .filter(|&l| l > ENTROPY_FLOOR)
        .map(|l| -l * l.ln())
        .sum::<f64>()
        .max(0.0))
}

/// Every `size`-element subset of `1..=n`, lexicographic.
pub fn subsets(n: usize, size: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, size: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == size {
            out.push(cur.clone());
            return;
        }
        for s in start..=n {
            if n - s + 1 < size - cur.len() {
                break;
            }
            cur.push(s);
            rec(s + 1, n, size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if size <= n {
        rec(1, n, size, &mut Vec::new(), &mut out);
    }
    out
}

/// Mean entropy over every `n_sub`-site subset of a block density matrix.
pub fn site_averaged_entropy(rho_block: &CMatrix, n_sub: usize) -> Result<f64> {
    let dim = rho_block.nrows();
    if !dim.is_power_of_two() || dim < 2 {
        return Err(Error::DimensionMismatch(format!("{dim} is not a qubit-register dimension")));
    }
    let k = dim.trailing_zeros() as usize;
    if n_sub == 0 || n_sub > k {
        return Err(Error::InvalidArgument(format!("subset size {n_sub} outside 1..={k}")));
    }
    let choices = subsets(k, n_sub);
    let mut total = 0.0;
    for a in &choices {
        let r = if n_sub == k {
            rho_block.clone()
        } else {
            reduce_density(rho_block, k, a)?
        };
        total += von_neumann_entropy(&r)?;
    }
    Ok(total / choices.len() as f64)
}

/// Time series of one observable across disorder realizations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableSeries {
    pub times: Vec<f64>,
    /// `values[k][t]`: realization `k` at grid time `t`.
    pub values: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    /// Population standard deviation across realizations.
    pub sd: Vec<f64>,
}

impl ObservableSeries {
    pub fn n_realizations(&self) -> usize {
        self.values.len()
    }
}

/// Pointwise mean and population SD over realizations.
pub fn ensemble_stats(grid: &TimeGrid, values: Vec<Vec<f64>>) -> Result<ObservableSeries> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no realizations".into()));
    }
    let nt = grid.len();
    if let Some(bad) = values.iter().find(|v| v.len() != nt) {
        return Err(Error::DimensionMismatch(format!(
            "realization has {} samples, grid has {nt}",
            bad.len()
        )));
    }
    let k = values.len() as f64;
    let mut mean = vec![0.0; nt];
    let mut sd = vec![0.0; nt];
    for t in 0..nt {
        let m = values.iter().map(|v| v[t]).sum::<f64>() / k;
        let var = values.iter().map(|v| (v[t] - m).powi(2)).sum::<f64>() / k;
        mean[t] = m;
        sd[t] = var.sqrt();
    }
    Ok(ObservableSeries {
        times: grid.times().to_vec(),
        values,
        mean,
        sd,
    })
}

/// Outcome counts keyed by configuration; outcomes never seen are absent.
pub type ShotCounts = BTreeMap<usize, u64>;

/// Draw `n_shots` readouts from a distribution over configurations
/// (`p[c]` is the probability of configuration `c`).
pub fn sample_shots(p: &[f64], n_shots: u64, seed: u64) -> Result<ShotCounts> {
    if p.is_empty() || p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("probabilities sum to {total}")));
    }
    let mut counts = ShotCounts::new();
    if n_shots == 0 {
        return Ok(counts);
    }
    let dist = WeightedIndex::new(p).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_shots {
        *counts.entry(dist.sample(&mut rng)).or_insert(0) += 1;
    }
    Ok(counts)
}

/// Site occupations estimated from shot counts.
pub fn site_probabilities_from_counts(counts: &ShotCounts, n_sites: usize) -> Result<SiteProbabilities> {
    let total: u64 = counts.values().sum();
    if total == 0 {
        return Err(Error::Undefined("no shots recorded".into()));
    }
    let states: Vec<usize> = counts.keys().copied().collect();
    let weights: Vec<f64> = counts.values().map(|&n| n as f64 / total as f64).collect();
    Ok(site_probabilities_from_populations(&states, &weights, n_sites))
}

/// Readout distribution over all `2^n` configurations, indexed by
/// configuration.
pub fn outcome_distribution(state: &QuantumState) -> Vec<f64> {
    let mut p = vec![0.0; 1usize << state.n_sites()];
    for (&c, w) in state.basis().states().iter().zip(state.populations()) {
        p[c] = w.max(0.0);
    }
    let total: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= total);
    p
}
