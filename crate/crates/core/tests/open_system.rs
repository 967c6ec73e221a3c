use std::sync::Arc;

use mblsim::basis::{sector_basis, site_mask};
use mblsim::evolve::{
    collapse_channels, lindblad_evolve, trajectory_average, LindbladMethod, QuantumState, TimeGrid,
    TrajectoryOptions, DEFAULT_MAX_STEP,
};
use mblsim::linalg::{CMatrix, C64};
use mblsim::model::{build_hamiltonian, derive_couplings, DeviceParams, HamiltonianMatrix};
use mblsim::observables::{sample_shots, site_probabilities, site_probabilities_from_counts};

/// Q3-Q5 with fast decay so jumps actually happen within 1 μs.
fn lossy_chain() -> (HamiltonianMatrix, DeviceParams) {
    let mut p = DeviceParams::default().subchain(3, 5).unwrap();
    p.t1 = vec![1.5, 2.0, 1.0];
    p.t_phi = vec![2.0, 3.0, 1.5];
    let model = derive_couplings(&p).unwrap();
    let h = build_hamiltonian(&model, Arc::new(sector_basis(3, None).unwrap())).unwrap();
    (h, p)
}

fn occupations(s: &QuantumState) -> Vec<f64> {
    site_probabilities(s).0
}

#[test]
fn trajectories_match_dense_within_three_standard_errors() {
    let (h, p) = lossy_chain();
    let channels = collapse_channels(&p);
    let rho0 = QuantumState::basis_state(h.basis().clone(), 0b101).unwrap();
    let grid = TimeGrid::linear(1.0, 11).unwrap();
    let dense = lindblad_evolve(&h, &rho0, &channels, &grid, &LindbladMethod::default()).unwrap();

    // per-trajectory site occupations and their squares, to estimate the SE
    let n = 3;
    let basis = h.basis().clone();
    let opts = TrajectoryOptions {
        n_traj: 800,
        seed: 11,
        max_step: 1e-3,
    };
    let moments = trajectory_average(&h, &rho0, &channels, &grid, &opts, |psi| {
        let mut col = CMatrix::zeros(2 * n, 1);
        for site in 1..=n {
            let mask = site_mask(n, site);
            let occ: f64 = basis
                .states()
                .iter()
                .zip(psi.iter())
                .filter(|(c, _)| *c & mask != 0)
                .map(|(_, z)| z.norm_sqr())
                .sum();
            col[(site - 1, 0)] = C64::new(occ, 0.0);
            col[(n + site - 1, 0)] = C64::new(occ * occ, 0.0);
        }
        col
    })
    .unwrap();
    let mut worst: f64 = 0.0;
    for (s, m) in dense.iter().zip(&moments) {
        for (i, exact) in occupations(s).iter().enumerate() {
            let mean = m[(i, 0)].re;
            let var = (m[(n + i, 0)].re - mean * mean).max(0.0);
            let se = (var / opts.n_traj as f64).sqrt().max(1e-6);
            worst = worst.max((mean - exact).abs() / se);
        }
    }
    assert!(worst < 3.0, "max deviation {worst:.2} standard errors");
}

#[test]
fn dense_rk4_step_halving_is_stable() {
    let (h, p) = lossy_chain();
    let channels = collapse_channels(&p);
    let rho0 = QuantumState::basis_state(h.basis().clone(), 0b011).unwrap();
    let grid = TimeGrid::linear(1.0, 5).unwrap();
    let coarse = lindblad_evolve(&h, &rho0, &channels, &grid, &LindbladMethod::default()).unwrap();
    let fine = lindblad_evolve(
        &h,
        &rho0,
        &channels,
        &grid,
        &LindbladMethod::DenseRk4 {
            max_step: DEFAULT_MAX_STEP / 2.0,
        },
    )
    .unwrap();
    for (a, b) in coarse.iter().zip(&fine) {
        assert!((a.density_matrix() - b.density_matrix()).camax() < 1e-6);
    }
}

#[test]
fn trace_is_preserved_over_one_microsecond() {
    let (h, p) = lossy_chain();
    let channels = collapse_channels(&p);
    let rho0 = QuantumState::basis_state(h.basis().clone(), 0b111).unwrap();
    let grid = TimeGrid::linear(1.0, 21).unwrap();
    for method in [
        LindbladMethod::default(),
        LindbladMethod::Trajectory {
            n_traj: 40,
            seed: 3,
            max_step: 1e-3,
        },
    ] {
        for s in lindblad_evolve(&h, &rho0, &channels, &grid, &method).unwrap() {
            let rho = s.density_matrix();
            assert!((rho.trace().re - 1.0).abs() < 1e-6);
            assert!((&rho - rho.adjoint()).camax() < 1e-10);
        }
    }
}

#[test]
fn shot_noise_shrinks_as_inverse_square_root() {
    // fixed 3-site distribution; RMS site error over 16 seeds at each budget
    let p = [0.05, 0.1, 0.2, 0.05, 0.25, 0.1, 0.15, 0.1];
    let exact = site_probabilities_from_counts(
        &p.iter()
            .enumerate()
            .map(|(c, &w)| (c, (w * 1e6) as u64))
            .collect(),
        3,
    )
    .unwrap();
    let rms = |shots: u64| {
        let mut acc = 0.0;
        for seed in 0..16 {
            let counts = sample_shots(&p, shots, seed).unwrap();
            let est = site_probabilities_from_counts(&counts, 3).unwrap();
            acc += est.0.iter().zip(&exact.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        (acc / 48.0).sqrt()
    };
    let errs: Vec<f64> = [300, 3000, 30000].iter().map(|&s| rms(s)).collect();
    for (e, shots) in errs.iter().zip([300.0f64, 3000.0, 30000.0]) {
        // binomial SD is at most 0.5/√N per site
        assert!(*e < 2.0 * 0.5 / shots.sqrt(), "rms {e} at {shots} shots");
    }
    assert!(errs[0] > errs[1] && errs[1] > errs[2], "{errs:?}");
    let ratio = errs[0] / errs[2];
    assert!((4.0..25.0).contains(&ratio), "ratio {ratio}");
}
