//! Small dense and sparse helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

/// Largest `|A_ij - conj(A_ji)|`.
pub fn hermitian_deviation(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Reject non-square or non-Hermitian input; `rel_tol` is relative to the
/// largest entry magnitude (absolute below unit scale).
pub fn ensure_hermitian(a: &CMatrix, rel_tol: f64) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "expected square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let scale = a.iter().fold(1.0f64, |m, z| m.max(z.norm()));
    let dev = hermitian_deviation(a);
    if dev > rel_tol * scale {
        return Err(Error::NotHermitian(dev));
    }
    Ok(())
}

/// Eigendecomposition of a Hermitian matrix: ascending real eigenvalues and
/// the matching orthonormal eigenvectors as columns.
///
/// Real-valued input takes the faster real symmetric path.
pub fn eigh(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    let (values, vectors) = if a.iter().all(|z| z.im == 0.0) {
        let re = DMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)].re + a[(j, i)].re));
        let eig = SymmetricEigen::new(re);
        let vecs = eig.eigenvectors.map(|x| C64::new(x, 0.0));
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), vecs)
    } else {
        let sym = CMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)].conj()));
        let eig = SymmetricEigen::new(sym);
        (eig.eigenvalues.iter().copied().collect::<Vec<_>>(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let sorted_values = order.iter().map(|&i| values[i]).collect();
    let sorted_vectors = CMatrix::from_fn(n, n, |r, c| vectors[(r, order[c])]);
    (sorted_values, sorted_vectors)
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn eigvalsh(a: &CMatrix) -> Vec<f64> {
    let n = a.nrows();
    let sym = CMatrix::from_fn(n, n, |i, j| 0.5 * (a[(i, j)] + a[(j, i)].conj()));
    let mut vals: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals
}

/// Trace distance `½ ‖ρ − σ‖₁` between two Hermitian matrices.
pub fn trace_distance(rho: &CMatrix, sigma: &CMatrix) -> Result<f64> {
    if rho.shape() != sigma.shape() {
        return Err(Error::DimensionMismatch(format!(
            "trace distance between {:?} and {:?}",
            rho.shape(),
            sigma.shape()
        )));
    }
    let diff = rho - sigma;
    Ok(0.5 * eigvalsh(&diff).iter().map(|v| v.abs()).sum::<f64>())
}

/// Compressed-row sparse complex matrix.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseMatrix {
    /// Keep entries with magnitude above `threshold`.
    pub fn from_dense(a: &CMatrix, threshold: f64) -> Self {
        let dim = a.nrows();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for i in 0..dim {
            for j in 0..a.ncols() {
                let v = a[(i, j)];
                if v.norm() > threshold {
                    cols.push(j);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        SparseMatrix {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Nonzeros of row `i` as `(column, value)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    /// `out = scale * A x`.
    pub fn matvec_into(&self, x: &[C64], scale: C64, out: &mut [C64]) {
        for (i, o) in out.iter_mut().enumerate().take(self.dim) {
            let mut acc = ZERO;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[k] * x[self.cols[k]];
            }
            *o = scale * acc;
        }
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut a = CMatrix::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                a[(i, j)] += v;
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigh_reconstructs_complex_hermitian() {
        let a = CMatrix::from_row_slice(
            3,
            3,
            &[
                C64::new(1.0, 0.0),
                C64::new(0.5, 0.2),
                C64::new(0.0, -1.0),
                C64::new(0.5, -0.2),
                C64::new(-2.0, 0.0),
                C64::new(0.3, 0.0),
                C64::new(0.0, 1.0),
                C64::new(0.3, 0.0),
                C64::new(0.7, 0.0),
            ],
        );
        let (vals, vecs) = eigh(&a);
        assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = CMatrix::from_diagonal(&CVector::from_iterator(3, vals.iter().map(|&v| C64::new(v, 0.0))));
        let back = &vecs * d * vecs.adjoint();
        assert!((back - &a).norm() < 1e-12);
    }

    #[test]
    fn trace_distance_of_orthogonal_projectors_is_one() {
        let p = CMatrix::from_diagonal(&CVector::from_vec(vec![ONE, ZERO]));
        let q = CMatrix::from_diagonal(&CVector::from_vec(vec![ZERO, ONE]));
        assert!((trace_distance(&p, &q).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_hermitian() {
        let a = CMatrix::from_row_slice(2, 2, &[ONE, ONE, ZERO, ONE]);
        assert!(matches!(ensure_hermitian(&a, 1e-12), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn sparse_matvec_matches_dense() {
        let a = CMatrix::from_fn(4, 4, |i, j| {
            if (i + j) % 3 == 0 { C64::new(i as f64, j as f64) } else { ZERO }
        });
        let s = SparseMatrix::from_dense(&a, 0.0);
        let x: Vec<C64> = (0..4).map(|k| C64::new(k as f64 + 1.0, -1.0)).collect();
        let mut y = vec![ZERO; 4];
        s.matvec_into(&x, ONE, &mut y);
        let dense = &a * CVector::from_vec(x);
        for k in 0..4 {
            assert!((y[k] - dense[k]).norm() < 1e-14);
        }
        assert_eq!(s.to_dense(), a);
    }
}
