//! Free-fermion engine against exact spin dynamics on nearest-neighbour chains.

use std::sync::Arc;

use proptest::prelude::*;

use mblsim::basis::{neel_config, SectorBasis};
use mblsim::evolve::{evolve_pure, QuantumState, TimeGrid};
use mblsim::fermion::{entropy_from_correlation, initial_correlation, FermionPropagator, SingleParticleHamiltonian};
use mblsim::model::{build_hamiltonian, derive_couplings, restrict_nearest_neighbor, DeviceParams};
use mblsim::observables::{partial_trace, site_probabilities, von_neumann_entropy};

const TOL: f64 = 1e-8;

fn check(n: usize, dh: Vec<f64>, mut times: Vec<f64>, block: (usize, usize)) -> Result<(), TestCaseError> {
    let params = DeviceParams::default().subchain(1, n).unwrap();
    let model = restrict_nearest_neighbor(&derive_couplings(&params).unwrap().with_disorder(dh).unwrap());
    let init = neel_config(n);
    let basis = Arc::new(SectorBasis::excitations(n, n / 2).unwrap());
    let h = build_hamiltonian(&model, basis.clone()).unwrap();
    times.sort_by(f64::total_cmp);
    times.dedup();
    times.insert(0, 0.0);
    let grid = TimeGrid::new(times).unwrap();
    let spins = evolve_pure(&h, &QuantumState::basis_state(basis, init).unwrap(), &grid).unwrap();

    let prop = FermionPropagator::new(&SingleParticleHamiltonian::from_spin_model(&model).unwrap());
    let occupied: Vec<usize> = (1..=n).filter(|s| s % 2 == 0).collect();
    let c0 = initial_correlation(n, &occupied).unwrap();
    let (lo, hi) = block;
    let sub: Vec<usize> = (lo..=hi).collect();
    for (&t, s) in grid.times().iter().zip(&spins) {
        let c = prop.evolve(&c0, t);
        let p = site_probabilities(s);
        for (i, occ) in c.occupations().iter().enumerate() {
            prop_assert!((occ - p.0[i]).abs() < TOL, "site {} at t={t}: {occ} vs {}", i + 1, p.0[i]);
        }
        let s_spin = von_neumann_entropy(&partial_trace(s, &sub).unwrap()).unwrap();
        let s_ferm = entropy_from_correlation(&c, &sub).unwrap();
        prop_assert!((s_spin - s_ferm).abs() < TOL, "block {sub:?} at t={t}: {s_spin} vs {s_ferm}");
    }
    Ok(())
}

fn case(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, (usize, usize))> {
    (
        prop::collection::vec(-12.0f64..12.0, n),
        prop::collection::vec(0.0f64..1.0, 20),
        (1..=n).prop_flat_map(move |lo| (Just(lo), lo..=n)),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn four_sites((dh, times, block) in case(4)) { check(4, dh, times, block)?; }

    #[test]
    fn six_sites((dh, times, block) in case(6)) { check(6, dh, times, block)?; }

    #[test]
    fn eight_sites((dh, times, block) in case(8)) { check(8, dh, times, block)?; }

    #[test]
    fn ten_sites((dh, times, block) in case(10)) { check(10, dh, times, block)?; }
}
