//! Real-symmetric embedding of Hermitian matrices and the scaled
//! upper-triangular vectorization used by the cone interface.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{is_hermitian, CMat, C64};

/// Tolerance for accepting a matrix as Hermitian.
pub const HERMITIAN_TOL: f64 = 1e-9;

/// `[[Re H, -Im H], [Im H, Re H]]`. Rejects non-Hermitian input.
pub fn hermitian_embed(h: &CMat) -> Result<DMatrix<f64>> {
    if !is_hermitian(h, HERMITIAN_TOL) {
        return Err(Error::invalid("hermitian_embed: input is not Hermitian"));
    }
    Ok(complex_embed(h))
}

/// The same block map applied to any complex matrix. It is a ring
/// homomorphism: `embed(A B) = embed(A) embed(B)` and `embed(A†) = embed(A)ᵀ`.
pub fn complex_embed(a: &CMat) -> DMatrix<f64> {
    let (r, c) = a.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let z = a[(i, j)];
            out[(i, j)] = z.re;
            out[(i + r, j + c)] = z.re;
            out[(i, j + c)] = -z.im;
            out[(i + r, j)] = z.im;
        }
    }
    out
}

/// Projects a real symmetric `2n x 2n` matrix onto the embedded-Hermitian
/// subspace and returns the Hermitian matrix: the diagonal blocks are
/// averaged and the off-diagonal blocks antisymmetrized.
pub fn hermitian_extract(y: &DMatrix<f64>) -> CMat {
    let n = y.nrows() / 2;
    CMat::from_fn(n, n, |i, j| {
        let re = 0.5 * (y[(i, j)] + y[(i + n, j + n)]);
        let im = 0.5 * (y[(i + n, j)] - y[(i, j + n)]);
        C64::new(re, im)
    })
}

pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Upper triangle, column by column, off-diagonals scaled by √2, so that
/// `svec(A)·svec(B) = Tr(AB)` for symmetric `A`, `B`.
pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, j)]);
            } else {
                out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
    }
    out
}

pub fn smat(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, j)] = v[idx];
            } else {
                let x = v[idx] * std::f64::consts::FRAC_1_SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            idx += 1;
        }
    }
    m
}

/// Row/column pair addressed by an svec coordinate.
pub fn svec_index(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in 0..=j {
            out.push((i, j));
        }
    }
    out
}
