//! Dense complex linear algebra helpers shared across the crate.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
pub struct HermitianEig {
    pub values: Vec<f64>,
    /// Column `j` is the eigenvector of `values[j]`.
    pub vectors: CMatrix,
}

/// Hermitian eigendecomposition with eigenpairs sorted by ascending eigenvalue.
pub fn hermitian_eig(m: &CMatrix) -> HermitianEig {
    let dim = m.nrows();
    let se = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].partial_cmp(&se.eigenvalues[b]).unwrap());
    let values: Vec<f64> = order.iter().map(|&j| se.eigenvalues[j]).collect();
    let mut vectors = CMatrix::zeros(dim, dim);
    for (k, &j) in order.iter().enumerate() {
        vectors.set_column(k, &se.eigenvectors.column(j));
    }
    HermitianEig { values, vectors }
}
