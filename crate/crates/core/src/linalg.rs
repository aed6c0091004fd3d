//! Small dense complex linear-algebra helpers shared by the solvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

/// Largest entrywise deviation of `m` from its conjugate transpose.
pub fn hermitian_defect(m: &CMat) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

pub fn is_hermitian(m: &CMat, tol: f64) -> bool {
    m.is_square() && hermitian_defect(m) <= tol * (1.0 + max_abs(m))
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0_f64, |acc, z| acc.max(z.norm()))
}

/// Returns `(m + m†)/2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted descending.
/// Columns of the returned matrix are the matching unit eigenvectors.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let eig = SymmetricEigen::new(hermitian_part(m));
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = CMat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn real_symmetric_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut v: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Eigenvalues this far below the largest are treated as zero.
pub const EIGEN_NOISE: f64 = 1e-12;

/// Factor `L` with `L L† = m`, built from the eigenpairs with negative or
/// round-off sized eigenvalues clipped to zero. Works for rank-deficient inputs.
pub fn psd_factor(m: &CMat) -> CMat {
    let (values, vectors) = hermitian_eigen(m);
    let floor = EIGEN_NOISE * values.first().copied().unwrap_or(0.0).max(0.0);
    let mut l = vectors;
    for (j, &lam) in values.iter().enumerate() {
        let s = if lam > floor { lam.sqrt() } else { 0.0 };
        for i in 0..l.nrows() {
            l[(i, j)] *= s;
        }
    }
    l
}

/// Hermitian square root of a PSD matrix.
pub fn psd_sqrt(m: &CMat) -> CMat {
    let (values, vectors) = hermitian_eigen(m);
    let d = CMat::from_diagonal(&DVector::from_iterator(
        values.len(),
        values.iter().map(|v| C64::new(v.max(0.0).sqrt(), 0.0)),
    ));
    &vectors * d * vectors.adjoint()
}

/// Real part of `Tr(a b)`.
pub fn re_trace_product(a: &CMat, b: &CMat) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            let x = a[(i, k)] * b[(k, i)];
            acc += x.re;
        }
    }
    acc
}

pub fn outer(v: &CVec) -> CMat {
    v * v.adjoint()
}

/// `|a† b|²`
pub fn inner_gain(a: &CVec, b: &CVec) -> f64 {
    a.dotc(b).norm_sqr()
}
