use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{format_bitstring, occupied, SectorBasis};
use crate::error::{Error, Result};
use crate::evolve::{
    collapse_channels, evolve_pure_with, lindblad_observe, trajectory_average, CollapseChannel,
    LindbladMethod, QuantumState, Spectrum, StateData, TimeGrid, TrajectoryOptions,
    DEFAULT_MAX_STEP,
};
use crate::fermion::{entropy_from_correlation, initial_correlation, FermionPropagator, SingleParticleHamiltonian};
use crate::linalg::{trace_distance, CMatrix, C64};
use crate::model::{
    build_hamiltonian, chain_adjacent, derive_couplings, restrict_nearest_neighbor,
    sample_disorder, DisorderSpec, SpinModel,
};
use crate::observables::{
    delta_n, ensemble_stats, imbalance_domain, imbalance_neel, outcome_distribution,
    partial_trace, sample_shots, site_averaged_entropy, site_probabilities,
    site_probabilities_from_counts, von_neumann_entropy, ObservableSeries, SiteProbabilities,
};

use super::config::{in_window, EvolutionMode, ExperimentConfig, ExperimentKind, InitialState};
use super::output::{header, Cell, MatrixJson, RunOutput};
use super::summary::{logfit_entropy, quasi_steady_summary};

/// File-name tag for a disorder bound, e.g. `dh12`.
pub fn bound_tag(bound: f64) -> String {
    format!("dh{bound}")
}

/// Independent 64-bit seed for a `(seed, a, b)` triple (SplitMix64 mixing).
pub(crate) fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        ^ a.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_add(1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Quantities recorded at one sample time. All are linear in ρ, so
/// trajectory averages of them are exact averages over the unraveling.
#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Observation {
    pub probs: Vec<f64>,
    /// Weight on configurations with the initial excitation number.
    pub kept_weight: f64,
    /// Site occupations restricted to those configurations, unnormalized.
    pub kept_probs: Vec<f64>,
    pub reduced: Vec<CMatrix>,
    pub outcomes: Option<Vec<f64>>,
}

impl Observation {
    fn post_selected(&self) -> Result<Vec<f64>> {
        if !(self.kept_weight > 0.0) {
            return Err(Error::Undefined("no weight left in the initial excitation sector".into()));
        }
        Ok(self.kept_probs.iter().map(|p| p / self.kept_weight).collect())
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Probe {
    pub n_sites: usize,
    pub excitations: usize,
    pub subsystems: Vec<Vec<usize>>,
    pub outcomes: bool,
}

impl Probe {
    fn observe(&self, s: &QuantumState) -> Result<Observation> {
        let n = self.n_sites;
        let mut kept_weight = 0.0;
        let mut kept_probs = vec![0.0; n];
        for (&c, w) in s.basis().states().iter().zip(s.populations()) {
            if c.count_ones() as usize != self.excitations {
                continue;
            }
            kept_weight += w;
            for (site, p) in kept_probs.iter_mut().enumerate() {
                if occupied(c, n, site + 1) {
                    *p += w;
                }
            }
        }
        Ok(Observation {
            probs: site_probabilities(s).0,
            kept_weight,
            kept_probs,
            reduced: self
                .subsystems
                .iter()
                .map(|sub| partial_trace(s, sub))
                .collect::<Result<_>>()?,
            outcomes: self.outcomes.then(|| outcome_distribution(s)),
        })
    }

    fn pack(&self, o: &Observation) -> CMatrix {
        let mut v: Vec<C64> = Vec::new();
        v.extend(o.probs.iter().map(|&p| C64::new(p, 0.0)));
        v.push(C64::new(o.kept_weight, 0.0));
        v.extend(o.kept_probs.iter().map(|&p| C64::new(p, 0.0)));
        for r in &o.reduced {
            v.extend(r.iter().copied());
        }
        if let Some(p) = &o.outcomes {
            v.extend(p.iter().map(|&x| C64::new(x, 0.0)));
        }
        CMatrix::from_vec(v.len(), 1, v)
    }

    fn unpack(&self, col: &CMatrix) -> Observation {
        let n = self.n_sites;
        let mut it = col.iter().copied();
        let mut real = |k: usize| (0..k).map(|_| it.next().expect("packed length").re).collect::<Vec<_>>();
        let probs = real(n);
        let kept_weight = real(1)[0];
        let kept_probs = real(n);
        let reduced = self
            .subsystems
            .iter()
            .map(|sub| {
                let d = 1usize << sub.len();
                let entries: Vec<C64> = (0..d * d).map(|_| it.next().expect("packed length")).collect();
                CMatrix::from_vec(d, d, entries)
            })
            .collect();
        let outcomes = self
            .outcomes
            .then(|| (0..1usize << n).map(|_| it.next().expect("packed length").re).collect());
        Observation {
            probs,
            kept_weight,
            kept_probs,
            reduced,
            outcomes,
        }
    }
}

/// Evolve one realization from configuration `init` and record `probe` at
/// every grid time.
pub(crate) fn evolve_observe(
    model: &SpinModel,
    init: usize,
    grid: &TimeGrid,
    mode: &EvolutionMode,
    channels: &[CollapseChannel],
    probe: &Probe,
    traj_seed: u64,
) -> Result<Vec<Observation>> {
    let n = model.n_sites();
    match mode {
        EvolutionMode::UnitarySector => {
            let basis = Arc::new(SectorBasis::excitations(n, init.count_ones() as usize)?);
            let h = build_hamiltonian(model, basis.clone())?;
            let psi0 = QuantumState::basis_state(basis, init)?;
            evolve_pure_with(&Spectrum::new(&h)?, &psi0, grid)?
                .iter()
                .map(|s| probe.observe(s))
                .collect()
        }
        EvolutionMode::LindbladDense { max_step } => {
            let basis = Arc::new(SectorBasis::full(n)?);
            let h = build_hamiltonian(model, basis.clone())?;
            let rho0 = QuantumState::basis_state(basis, init)?;
            let mut out = Vec::with_capacity(grid.len());
            let method = LindbladMethod::DenseRk4 { max_step: *max_step };
            lindblad_observe(&h, &rho0, channels, grid, &method, |_, s| out.push(probe.observe(s)))?;
            out.into_iter().collect()
        }
        EvolutionMode::LindbladTrajectory { n_traj, max_step } => {
            let basis = Arc::new(SectorBasis::full(n)?);
            let h = build_hamiltonian(model, basis.clone())?;
            let rho0 = QuantumState::basis_state(basis.clone(), init)?;
            let opts = TrajectoryOptions {
                n_traj: *n_traj,
                seed: traj_seed,
                max_step: *max_step,
            };
            let avg = trajectory_average(&h, &rho0, channels, grid, &opts, |psi| {
                let s = QuantumState::from_parts_unchecked(basis.clone(), StateData::Pure(psi.clone()));
                probe.pack(&probe.observe(&s).expect("subsystems are validated"))
            })?;
            Ok(avg.iter().map(|col| probe.unpack(col)).collect())
        }
    }
}

/// Apply `f` to every disorder realization at `bound`, in parallel; the
/// result is in realization order.
pub(crate) fn ensemble<T, F>(cfg: &ExperimentConfig, base: &SpinModel, bound: f64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &SpinModel) -> Result<T> + Sync + Send,
{
    let spec = DisorderSpec {
        bound,
        n_realizations: cfg.n_realizations,
        seed: cfg.seed,
    };
    let n = base.n_sites();
    (1..=cfg.n_realizations)
        .into_par_iter()
        .map(|k| {
            let model = base.with_disorder(sample_disorder(&spec, k, n)?)?;
            f(k, &model)
        })
        .collect()
}

fn series_of(grid: &TimeGrid, runs: &[Vec<Observation>], f: impl Fn(&Observation) -> Result<f64>) -> Result<ObservableSeries> {
    let values = runs
        .iter()
        .map(|r| r.iter().map(&f).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    ensemble_stats(grid, values)
}

fn imbalance_for(state: &InitialState) -> fn(&SiteProbabilities) -> Result<f64> {
    match state {
        InitialState::DomainWall => imbalance_domain,
        _ => imbalance_neel,
    }
}

fn occupied_sites(config: usize, n: usize) -> Vec<usize> {
    (1..=n).filter(|&s| occupied(config, n, s)).collect()
}

fn window_indices(grid: &TimeGrid, window: [f64; 2]) -> Vec<usize> {
    (0..grid.len())
        .filter(|&i| in_window(grid.times()[i], window[0], window[1]))
        .collect()
}

/// δn of the ensemble-mean occupations averaged over `idx`, with the
/// ensemble SD of the per-site window means propagated to first order.
fn delta_n_summary(sites: &[ObservableSeries], idx: &[usize]) -> (f64, f64) {
    let mut mean = Vec::with_capacity(sites.len());
    let mut sd = Vec::with_capacity(sites.len());
    for s in sites {
        let per: Vec<f64> = s
            .values
            .iter()
            .map(|v| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64)
            .collect();
        let k = per.len() as f64;
        let m = per.iter().sum::<f64>() / k;
        mean.push(m);
        sd.push((per.iter().map(|x| (x - m).powi(2)).sum::<f64>() / k).sqrt());
    }
    let dn = delta_n(&SiteProbabilities(mean.clone()));
    let err = if dn > 0.0 {
        mean.iter()
            .zip(&sd)
            .map(|(m, s)| ((m - 0.5) / dn * s).powi(2))
            .sum::<f64>()
            .sqrt()
    } else {
        0.0
    };
    (dn, err)
}

fn open_channels(cfg: &ExperimentConfig) -> Vec<CollapseChannel> {
    if cfg.evolution.is_open() {
        collapse_channels(&cfg.device)
    } else {
        Vec::new()
    }
}

fn imbalance_sweep(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let n = cfg.device.n_sites;
    let base = derive_couplings(&cfg.device)?;
    let grid = cfg.time_grid.build()?;
    let state = cfg.initial_state();
    let init = state.config(n)?;
    let imbalance = imbalance_for(&state);
    let channels = open_channels(cfg);
    let probe = Probe {
        n_sites: n,
        excitations: init.count_ones() as usize,
        subsystems: Vec::new(),
        outcomes: cfg.shots.enabled,
    };
    let window = window_indices(&grid, cfg.quasi_steady_window);
    let last = grid.len() - 1;
    let mut rows = Vec::new();
    for (bi, &bound) in cfg.bounds().iter().enumerate() {
        let tag = bound_tag(bound);
        let runs = ensemble(cfg, &base, bound, |k, m| {
            evolve_observe(m, init, &grid, &cfg.evolution, &channels, &probe, stream_seed(cfg.seed, bi as u64, k as u64))
        })?;
        let sites = (0..n)
            .map(|i| series_of(&grid, &runs, |o| Ok(o.probs[i])))
            .collect::<Result<Vec<_>>>()?;
        let mut head = vec!["time_us".to_string()];
        head.extend((1..=n).map(|i| format!("p{i}_mean")));
        head.extend((1..=n).map(|i| format!("p{i}_sd")));
        let prob_rows: Vec<Vec<Cell>> = (0..grid.len())
            .map(|t| {
                let mut row = vec![Cell::F(grid.times()[t])];
                row.extend(sites.iter().map(|s| Cell::F(s.mean[t])));
                row.extend(sites.iter().map(|s| Cell::F(s.sd[t])));
                row
            })
            .collect();
        out.table(&format!("probabilities_{tag}.csv"), &head, &prob_rows)?;

        let imb = series_of(&grid, &runs, |o| imbalance(&SiteProbabilities(o.probs.clone())))?;
        out.series(&format!("imbalance_{tag}.csv"), &imb)?;
        let dn_rows: Vec<Vec<Cell>> = (0..grid.len())
            .map(|t| {
                let p = SiteProbabilities(sites.iter().map(|s| s.mean[t]).collect());
                vec![Cell::F(grid.times()[t]), Cell::F(delta_n(&p))]
            })
            .collect();
        out.table(&format!("delta_n_{tag}.csv"), &header(&["time_us", "delta_n"]), &dn_rows)?;

        if cfg.shots.enabled {
            let values = runs
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    r.iter()
                        .enumerate()
                        .map(|(t, o)| {
                            let p = o.outcomes.as_ref().expect("probe records outcomes");
                            let seed = stream_seed(stream_seed(cfg.seed, bi as u64, k as u64), 1, t as u64);
                            let counts = sample_shots(p, cfg.shots.n_shots, seed)?;
                            imbalance(&site_probabilities_from_counts(&counts, n)?)
                        })
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()?;
            out.series(&format!("imbalance_shots_{tag}.csv"), &ensemble_stats(&grid, values)?)?;
        }

        let qs = quasi_steady_summary(&imb, cfg.quasi_steady_window)?;
        let (dn_qs, dn_qs_sd) = delta_n_summary(&sites, &window);
        let (dn_fin, dn_fin_sd) = delta_n_summary(&sites, &[last]);
        rows.push(vec![
            Cell::F(bound),
            Cell::F(qs.mean),
            Cell::F(qs.sd),
            Cell::F(imb.mean[last]),
            Cell::F(imb.sd[last]),
            Cell::F(dn_qs),
            Cell::F(dn_qs_sd),
            Cell::F(dn_fin),
            Cell::F(dn_fin_sd),
        ]);
    }
    out.table(
        "crossover.csv",
        &header(&[
            "bound_mhz",
            "imbalance_qs_mean",
            "imbalance_qs_sd",
            "imbalance_final_mean",
            "imbalance_final_sd",
            "delta_n_qs",
            "delta_n_qs_sd",
            "delta_n_final",
            "delta_n_final_sd",
        ]),
        &rows,
    )
}

/// The closed-system variant, plus the configured open variant if any.
fn variants(cfg: &ExperimentConfig) -> Vec<(&'static str, EvolutionMode)> {
    let mut v = vec![("closed", EvolutionMode::UnitarySector)];
    if cfg.evolution.is_open() {
        v.push(("decoherent", cfg.evolution.clone()));
    }
    v
}

#[derive(Serialize)]
struct EthEntry {
    time_us: f64,
    sites: Vec<usize>,
    /// Ensemble-averaged reduced density matrix.
    averaged: MatrixJson,
    /// Element-wise modulus of `averaged`.
    abs_of_average: Vec<Vec<f64>>,
    /// Ensemble average of element-wise moduli (alternative reading).
    average_of_abs: Vec<Vec<f64>>,
}

fn rows_of(m: &nalgebra::DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn eth_matrices(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let n = cfg.device.n_sites;
    let base = derive_couplings(&cfg.device)?;
    let init = cfg.initial_state().config(n)?;
    let sub = cfg.subsystem.sites();
    let mut subsystems = vec![vec![sub[0]], vec![sub[0], sub[1]]];
    if sub.len() > 2 {
        subsystems.push(sub.clone());
    }
    let mut times = cfg.matrix_times.clone();
    times.push(0.0);
    times.sort_by(f64::total_cmp);
    times.dedup();
    let grid = TimeGrid::new(times)?;
    let probe = Probe {
        n_sites: n,
        excitations: init.count_ones() as usize,
        subsystems: subsystems.clone(),
        outcomes: false,
    };
    let initial = probe.observe(&QuantumState::basis_state(
        Arc::new(SectorBasis::excitations(n, init.count_ones() as usize)?),
        init,
    )?)?;
    let channels = collapse_channels(&cfg.device);
    let mut rows = Vec::new();
    for (variant, mode) in variants(cfg) {
        for (bi, &bound) in cfg.bounds().iter().enumerate() {
            let runs = ensemble(cfg, &base, bound, |k, m| {
                evolve_observe(m, init, &grid, &mode, &channels, &probe, stream_seed(cfg.seed, bi as u64, k as u64))
            })?;
            let kf = runs.len() as f64;
            let mut entries = Vec::new();
            for (t, &time) in grid.times().iter().enumerate() {
                for (si, sites) in subsystems.iter().enumerate() {
                    let d = 1usize << sites.len();
                    let mut avg = CMatrix::zeros(d, d);
                    let mut avg_abs = nalgebra::DMatrix::<f64>::zeros(d, d);
                    let (mut td_mixed_each, mut td_init_each) = (0.0, 0.0);
                    let mixed = CMatrix::identity(d, d) / C64::new(d as f64, 0.0);
                    let rho_init = &initial.reduced[si];
                    for r in &runs {
                        let rho = &r[t].reduced[si];
                        avg += rho;
                        avg_abs += rho.map(|z| z.norm());
                        td_mixed_each += trace_distance(rho, &mixed)?;
                        td_init_each += trace_distance(rho, rho_init)?;
                    }
                    avg /= C64::new(kf, 0.0);
                    avg_abs /= kf;
                    rows.push(vec![
                        Cell::S(variant.into()),
                        Cell::F(bound),
                        Cell::F(time),
                        Cell::U(sites.len()),
                        Cell::F(trace_distance(&avg, &mixed)?),
                        Cell::F(trace_distance(&avg, rho_init)?),
                        Cell::F(td_mixed_each / kf),
                        Cell::F(td_init_each / kf),
                    ]);
                    entries.push(EthEntry {
                        time_us: time,
                        sites: sites.clone(),
                        averaged: MatrixJson::from(&avg),
                        abs_of_average: rows_of(&avg.map(|z| z.norm())),
                        average_of_abs: rows_of(&avg_abs),
                    });
                }
            }
            out.json(&format!("eth_{variant}_{}.json", bound_tag(bound)), &entries)?;
        }
    }
    out.table(
        "eth_distances.csv",
        &header(&[
            "variant",
            "bound_mhz",
            "time_us",
            "n_qubits",
            "td_mixed",
            "td_initial",
            "td_mixed_per_realization",
            "td_initial_per_realization",
        ]),
        &rows,
    )
}

fn entropy_series(grid: &TimeGrid, runs: &[Vec<Observation>]) -> Result<ObservableSeries> {
    series_of(grid, runs, |o| von_neumann_entropy(&o.reduced[0]))
}

fn logfit_row(label: &str, bound: f64, s: &ObservableSeries, window: [f64; 2]) -> Result<Vec<Cell>> {
    let fit = logfit_entropy(s, window)?;
    Ok(vec![
        Cell::S(label.into()),
        Cell::F(bound),
        Cell::F(fit.slope),
        Cell::F(fit.slope_sigma),
        Cell::F(fit.intercept),
        Cell::U(fit.n_points),
    ])
}

const LOGFIT_HEADER: [&str; 6] = ["model", "bound_mhz", "slope", "slope_sigma", "intercept", "n_points"];

fn half_chain_entropy(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let n = cfg.device.n_sites;
    let base = derive_couplings(&cfg.device)?;
    let init = cfg.initial_state().config(n)?;
    let sub = cfg.subsystem.sites();
    let grid = cfg.time_grid.build()?;
    let log_grid = cfg.log_grid.build()?;
    let channels = collapse_channels(&cfg.device);
    let probe = Probe {
        n_sites: n,
        excitations: init.count_ones() as usize,
        subsystems: vec![sub.clone()],
        outcomes: false,
    };
    let last = grid.len() - 1;
    let mut fits = Vec::new();
    let mut averaged = Vec::new();
    for (variant, mode) in variants(cfg) {
        for (bi, &bound) in cfg.bounds().iter().enumerate() {
            let tag = bound_tag(bound);
            let run = |g: &TimeGrid| {
                ensemble(cfg, &base, bound, |k, m| {
                    evolve_observe(m, init, g, &mode, &channels, &probe, stream_seed(cfg.seed, bi as u64, k as u64))
                })
            };
            let runs = run(&grid)?;
            let s = entropy_series(&grid, &runs)?;
            out.series(&format!("entropy_{variant}_{tag}.csv"), &s)?;
            if !mode.is_open() {
                let s_log = entropy_series(&log_grid, &run(&log_grid)?)?;
                out.series(&format!("entropy_log_{variant}_{tag}.csv"), &s_log)?;
            }
            fits.push(logfit_row(variant, bound, &s, cfg.quasi_steady_window)?);
            for size in 1..=sub.len() {
                let values = runs
                    .iter()
                    .map(|r| site_averaged_entropy(&r[last].reduced[0], size))
                    .collect::<Result<Vec<f64>>>()?;
                let k = values.len() as f64;
                let m = values.iter().sum::<f64>() / k;
                let sd = (values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / k).sqrt();
                averaged.push(vec![
                    Cell::S(variant.into()),
                    Cell::F(bound),
                    Cell::U(size),
                    Cell::F(m),
                    Cell::F(sd),
                    Cell::F(size as f64 * std::f64::consts::LN_2),
                ]);
            }
        }
    }
    out.table("entropy_logfit.csv", &header(&LOGFIT_HEADER), &fits)?;
    out.table(
        "site_averaged_entropy.csv",
        &header(&["variant", "bound_mhz", "n_sites", "mean", "sd", "thermal"]),
        &averaged,
    )
}

/// Free-fermion entropy of `sub` for the nearest-neighbour image of `model`.
fn anderson_entropy(model: &SpinModel, init: usize, sub: &[usize], grid: &TimeGrid) -> Result<Vec<f64>> {
    let n = model.n_sites();
    let h = SingleParticleHamiltonian::from_spin_model(&restrict_nearest_neighbor(model))?;
    let prop = FermionPropagator::new(&h);
    let c0 = initial_correlation(n, &occupied_sites(init, n))?;
    grid.times()
        .iter()
        .map(|&t| entropy_from_correlation(&prop.evolve(&c0, t), sub))
        .collect()
}

fn entropy_comparison(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let n = cfg.device.n_sites;
    let base = derive_couplings(&cfg.device)?;
    let init = cfg.initial_state().config(n)?;
    let sub = cfg.subsystem.sites();
    let grid = cfg.time_grid.build()?;
    let log_grid = cfg.log_grid.build()?;
    let channels = collapse_channels(&cfg.device);
    let probe = Probe {
        n_sites: n,
        excitations: init.count_ones() as usize,
        subsystems: vec![sub.clone()],
        outcomes: false,
    };
    let mut fits = Vec::new();
    for (bi, &bound) in cfg.bounds().iter().enumerate() {
        let tag = bound_tag(bound);
        for (suffix, g) in [("", &grid), ("_log", &log_grid)] {
            let runs = ensemble(cfg, &base, bound, |k, m| {
                evolve_observe(m, init, g, &EvolutionMode::UnitarySector, &[], &probe, stream_seed(cfg.seed, bi as u64, k as u64))
            })?;
            let mbl = entropy_series(g, &runs)?;
            let values = ensemble(cfg, &base, bound, |_, m| anderson_entropy(m, init, &sub, g))?;
            let anderson = ensemble_stats(g, values)?;
            out.series(&format!("entropy_mbl{suffix}_{tag}.csv"), &mbl)?;
            out.series(&format!("entropy_anderson{suffix}_{tag}.csv"), &anderson)?;
            if suffix.is_empty() {
                fits.push(logfit_row("mbl", bound, &mbl, cfg.quasi_steady_window)?);
                fits.push(logfit_row("anderson", bound, &anderson, cfg.quasi_steady_window)?);
            }
        }
        if cfg.evolution.is_open() {
            let runs = ensemble(cfg, &base, bound, |k, m| {
                evolve_observe(m, init, &grid, &cfg.evolution, &channels, &probe, stream_seed(cfg.seed, bi as u64, k as u64))
            })?;
            let s = entropy_series(&grid, &runs)?;
            out.series(&format!("entropy_mbl_decoherent_{tag}.csv"), &s)?;
            fits.push(logfit_row("mbl-decoherent", bound, &s, cfg.quasi_steady_window)?);
        }
    }
    out.table("entropy_logfit.csv", &header(&LOGFIT_HEADER), &fits)
}

/// Damped swap from the first site of `first..=last` for each dephasing
/// time, plus the closed-system reference.
pub(crate) fn damped_swap(
    cfg: &ExperimentConfig,
    first: usize,
    last: usize,
    grid: &TimeGrid,
) -> Result<Vec<(String, Vec<Vec<f64>>)>> {
    let params = cfg.device.subchain(first, last)?;
    let n = params.n_sites;
    let model = derive_couplings(&params)?;
    let basis = Arc::new(SectorBasis::full(n)?);
    let h = build_hamiltonian(&model, basis.clone())?;
    let init = 1usize << (n - 1);
    let rho0 = QuantumState::basis_state(basis, init)?;
    let step = match cfg.evolution {
        EvolutionMode::LindbladDense { max_step } => max_step,
        _ => DEFAULT_MAX_STEP,
    };
    let mut curves = Vec::new();
    let closed = evolve_pure_with(&Spectrum::new(&h)?, &rho0, grid)?
        .iter()
        .map(|s| site_probabilities(s).0)
        .collect();
    curves.push(("closed".to_string(), closed));
    for &t_phi in &cfg.t_phi_values {
        let mut p = params.clone();
        p.t_phi = vec![t_phi; n];
        let mut probs = Vec::with_capacity(grid.len());
        lindblad_observe(
            &h,
            &rho0,
            &collapse_channels(&p),
            grid,
            &LindbladMethod::DenseRk4 { max_step: step },
            |_, s| probs.push(site_probabilities(s).0),
        )?;
        curves.push((format!("tphi{t_phi}"), probs));
    }
    Ok(curves)
}

fn dephasing_calibration(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let grid = cfg.time_grid.build()?;
    for (first, last) in [(7, 8), (7, 9)] {
        let curves = damped_swap(cfg, first, last, &grid)?;
        let sites: Vec<usize> = (first..=last).collect();
        let mut head = vec!["time_us".to_string()];
        for (label, _) in &curves {
            head.extend(sites.iter().map(|s| format!("{label}_p{s}")));
        }
        let rows: Vec<Vec<Cell>> = (0..grid.len())
            .map(|t| {
                let mut row = vec![Cell::F(grid.times()[t])];
                for (_, c) in &curves {
                    row.extend(c[t].iter().map(|&p| Cell::F(p)));
                }
                row
            })
            .collect();
        let name = sites.iter().map(|s| format!("q{s}")).collect::<Vec<_>>().join("_");
        out.table(&format!("swap_{name}.csv"), &head, &rows)?;
    }
    Ok(())
}

fn post_selection(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let n = cfg.device.n_sites;
    let base = derive_couplings(&cfg.device)?;
    let grid = cfg.time_grid.build()?;
    let state = cfg.initial_state();
    let init = state.config(n)?;
    let imbalance = imbalance_for(&state);
    let channels = collapse_channels(&cfg.device);
    let probe = Probe {
        n_sites: n,
        excitations: init.count_ones() as usize,
        subsystems: Vec::new(),
        outcomes: false,
    };
    for (bi, &bound) in cfg.bounds().iter().enumerate() {
        let runs = ensemble(cfg, &base, bound, |k, m| {
            evolve_observe(m, init, &grid, &cfg.evolution, &channels, &probe, stream_seed(cfg.seed, bi as u64, k as u64))
        })?;
        let kf = runs.len() as f64;
        let mut head = vec!["time_us".to_string(), "kept_weight".into()];
        head.extend((1..=n).map(|i| format!("raw_p{i}")));
        head.extend((1..=n).map(|i| format!("post_p{i}")));
        head.push("raw_imbalance".into());
        head.push("post_imbalance".into());
        let mut rows = Vec::with_capacity(grid.len());
        for t in 0..grid.len() {
            let mut kept = 0.0;
            let mut raw = vec![0.0; n];
            let mut post = vec![0.0; n];
            for r in &runs {
                let o = &r[t];
                kept += o.kept_weight / kf;
                for (acc, p) in raw.iter_mut().zip(&o.probs) {
                    *acc += p / kf;
                }
                for (acc, p) in post.iter_mut().zip(o.post_selected()?) {
                    *acc += p / kf;
                }
            }
            let raw_imb = imbalance(&SiteProbabilities(raw.clone()))?;
            let post_imb = imbalance(&SiteProbabilities(post.clone()))?;
            let mut row = vec![Cell::F(grid.times()[t]), Cell::F(kept)];
            row.extend(raw.into_iter().map(Cell::F));
            row.extend(post.into_iter().map(Cell::F));
            row.push(Cell::F(raw_imb));
            row.push(Cell::F(post_imb));
            rows.push(row);
        }
        out.table(&format!("post_selection_{}.csv", bound_tag(bound)), &head, &rows)?;
    }
    Ok(())
}

fn coupling_matrix(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    let p = &cfg.device;
    let n = p.n_sites;
    let model = derive_couplings(p)?;
    let mut head = vec!["site".to_string()];
    head.extend((1..=n).map(|j| format!("j{j}")));
    let rows: Vec<Vec<Cell>> = (0..n)
        .map(|a| {
            let mut row = vec![Cell::U(a + 1)];
            row.extend((0..n).map(|b| Cell::F(model.j[(a, b)])));
            row
        })
        .collect();
    out.table("coupling_matrix.csv", &head, &rows)?;
    let fields: Vec<Vec<Cell>> = (0..n)
        .map(|i| {
            vec![
                Cell::U(i + 1),
                Cell::F(model.h[i]),
                Cell::F(p.g[i]),
                Cell::F(p.t1[i]),
                Cell::F(p.t_phi[i]),
            ]
        })
        .collect();
    out.table("fields.csv", &header(&["site", "h_mhz", "g_mhz", "t1_us", "t_phi_us"]), &fields)?;

    let mut nearest = Vec::new();
    let mut long_range = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            let j = model.j[(a, b)];
            if chain_adjacent(a, b) {
                nearest.push((a + 1, j));
            } else {
                long_range.push(j);
            }
        }
    }
    let range = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    // the weakest neighbour pair is reported on its own
    let weakest = nearest
        .iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .copied()
        .ok_or_else(|| Error::InvalidArgument("chain has no neighbour pairs".into()))?;
    let rest: Vec<f64> = nearest.iter().filter(|x| x.0 != weakest.0).map(|x| x.1).collect();
    let mut summary = Vec::new();
    for (label, v) in [
        ("nearest-neighbour".to_string(), rest),
        (format!("nearest-neighbour-{}-{}", weakest.0, weakest.0 + 1), vec![weakest.1]),
        ("long-range".to_string(), long_range),
        ("field".to_string(), model.h.clone()),
    ] {
        if v.is_empty() {
            continue;
        }
        let (lo, hi) = range(&v);
        summary.push(vec![Cell::S(label), Cell::F(lo), Cell::F(hi)]);
    }
    out.table("coupling_ranges.csv", &header(&["class", "min_mhz", "max_mhz"]), &summary)?;
    out.json(
        "device.json",
        &serde_json::json!({
            "device": p,
            "initial_state": format_bitstring(cfg.initial_state().config(n)?, n),
        }),
    )
}

pub(crate) fn dispatch(cfg: &ExperimentConfig, out: &mut RunOutput) -> Result<()> {
    match cfg.experiment {
        ExperimentKind::ImbalanceNeel | ExperimentKind::ImbalanceDomainWall => imbalance_sweep(cfg, out),
        ExperimentKind::EthMatrices => eth_matrices(cfg, out),
        ExperimentKind::HalfChainEntropy => half_chain_entropy(cfg, out),
        ExperimentKind::EntropyComparison => entropy_comparison(cfg, out),
        ExperimentKind::DephasingCalibration => dephasing_calibration(cfg, out),
        ExperimentKind::PostSelection => post_selection(cfg, out),
        ExperimentKind::CouplingMatrix => coupling_matrix(cfg, out),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DeviceParams;

    fn small_model() -> SpinModel {
        derive_couplings(&DeviceParams::default().subchain(1, 4).unwrap()).unwrap()
    }

    #[test]
    fn stream_seeds_differ() {
        let a = stream_seed(1, 0, 0);
        assert_ne!(a, stream_seed(1, 0, 1));
        assert_ne!(a, stream_seed(1, 1, 0));
        assert_ne!(a, stream_seed(2, 0, 0));
        assert_eq!(a, stream_seed(1, 0, 0));
    }

    #[test]
    fn pack_round_trip() {
        let probe = Probe {
            n_sites: 4,
            excitations: 2,
            subsystems: vec![vec![2], vec![1, 3]],
            outcomes: true,
        };
        let basis = Arc::new(SectorBasis::full(4).unwrap());
        let psi = crate::linalg::CVector::from_fn(16, |i, _| C64::new(i as f64, 1.0 - i as f64));
        let psi = &psi / C64::new(psi.norm(), 0.0);
        let s = QuantumState::pure(basis, psi).unwrap();
        let o = probe.observe(&s).unwrap();
        assert_eq!(probe.unpack(&probe.pack(&o)), o);
    }

    #[test]
    fn modes_agree_without_channels() {
        let model = small_model();
        let grid = TimeGrid::linear(0.3, 7).unwrap();
        let probe = Probe {
            n_sites: 4,
            excitations: 2,
            subsystems: vec![vec![1, 2]],
            outcomes: false,
        };
        let init = 0b0101;
        let closed = evolve_observe(&model, init, &grid, &EvolutionMode::UnitarySector, &[], &probe, 0).unwrap();
        let dense = evolve_observe(
            &model,
            init,
            &grid,
            &EvolutionMode::LindbladDense { max_step: DEFAULT_MAX_STEP },
            &[],
            &probe,
            0,
        )
        .unwrap();
        let traj = evolve_observe(
            &model,
            init,
            &grid,
            &EvolutionMode::LindbladTrajectory { n_traj: 3, max_step: 1e-3 },
            &[],
            &probe,
            0,
        )
        .unwrap();
        for ((a, b), c) in closed.iter().zip(&dense).zip(&traj) {
            for i in 0..4 {
                assert!((a.probs[i] - b.probs[i]).abs() < 1e-8);
                assert!((a.probs[i] - c.probs[i]).abs() < 1e-7);
            }
            assert!((&a.reduced[0] - &b.reduced[0]).norm() < 1e-8);
            assert!((a.kept_weight - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn delta_n_of_thermal_ensemble_is_zero() {
        let grid = TimeGrid::linear(1.0, 3).unwrap();
        let s = ensemble_stats(&grid, vec![vec![0.5; 3], vec![0.5; 3]]).unwrap();
        assert_eq!(delta_n_summary(&[s.clone(), s], &[1, 2]), (0.0, 0.0));
    }

    #[test]
    fn anderson_entropy_starts_at_zero() {
        let grid = TimeGrid::linear(0.5, 5).unwrap();
        let s = anderson_entropy(&small_model(), 0b0101, &[1, 2], &grid).unwrap();
        assert!(s[0].abs() < 1e-9);
        assert!(s[4] > 0.0);
    }
}
