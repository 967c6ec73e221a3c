#![allow(dead_code)]

use std::sync::Arc;

use nalgebra::DMatrix;
use proptest::prelude::*;

use mblsim::basis::{site_mask, SectorBasis};
use mblsim::evolve::QuantumState;
use mblsim::linalg::{CMatrix, CVector, C64};
use mblsim::model::SpinModel;

/// All-to-all couplings and fields on `n` sites, in MHz.
pub fn model_strategy(n: usize) -> impl Strategy<Value = SpinModel> {
    let pairs = n * (n - 1) / 2;
    (
        prop::collection::vec(-2.0f64..2.0, pairs),
        prop::collection::vec(-1.0f64..1.0, n),
        prop::collection::vec(-12.0f64..12.0, n),
    )
        .prop_map(move |(js, h, dh)| {
            let mut j = DMatrix::zeros(n, n);
            let mut it = js.into_iter();
            for a in 0..n {
                for b in a + 1..n {
                    let v = it.next().unwrap();
                    j[(a, b)] = v;
                    j[(b, a)] = v;
                }
            }
            SpinModel::new(j, h, dh).unwrap()
        })
}

/// Normalized random pure state on the full `n`-site register.
pub fn pure_state_strategy(n: usize) -> impl Strategy<Value = QuantumState> {
    prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1 << n).prop_filter_map(
        "nonzero vector",
        move |parts| {
            let v = CVector::from_iterator(parts.len(), parts.into_iter().map(|(re, im)| C64::new(re, im)));
            let norm = v.norm();
            (norm > 1e-3).then(|| {
                QuantumState::pure(Arc::new(SectorBasis::full(n).unwrap()), v / C64::new(norm, 0.0)).unwrap()
            })
        },
    )
}

/// `U = [[cos θ, −e^{iλ} sin θ], [e^{iφ} sin θ, e^{i(φ+λ)} cos θ]]`.
pub fn qubit_unitary(theta: f64, phi: f64, lambda: f64) -> [[C64; 2]; 2] {
    let (s, c) = theta.sin_cos();
    [
        [C64::new(c, 0.0), -C64::from_polar(s, lambda)],
        [C64::from_polar(s, phi), C64::from_polar(c, phi + lambda)],
    ]
}

/// Apply a single-qubit gate to `site` (1-based) of a full-register vector.
pub fn apply_local(psi: &CVector, n: usize, site: usize, u: [[C64; 2]; 2]) -> CVector {
    let mask = site_mask(n, site);
    let mut out = psi.clone();
    for c in 0..psi.len() {
        if c & mask != 0 {
            continue;
        }
        let (a0, a1) = (psi[c], psi[c | mask]);
        out[c] = u[0][0] * a0 + u[0][1] * a1;
        out[c | mask] = u[1][0] * a0 + u[1][1] * a1;
    }
    out
}

pub fn max_abs(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).camax()
}
