//! Vectorization helpers for symmetric-matrix regression.
//!
//! A symmetric n-by-n matrix P has N = n(n+1)/2 free entries. `vec_plus`
//! packs them columnwise from the lower triangle with off-diagonal entries
//! doubled, and `duplication` builds the n^2-by-N matrix W that satisfies
//!
//! ```text
//! vec(P) = W * vec_plus(P)          for every symmetric P.
//! ```
//!
//! The doubling convention makes quadratic forms linear in the packed
//! vector: x'Px = (x (x) x)' W vec_plus(P) for any state x, where (x)
//! denotes the Kronecker product. Cost-difference samples therefore act as
//! rows of a linear regression in vec_plus(P).

use nalgebra::{DMatrix, DVector};

use crate::error::Error;

/// Number of free entries of a symmetric n-by-n matrix.
pub fn half_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Columnwise stacking of a matrix into a vector.
pub fn vec_of(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// Inverse of [`vec_of`]: reshapes a length r*c vector into r-by-c.
pub fn unvec(v: &DVector<f64>, rows: usize) -> Result<DMatrix<f64>, Error> {
    if rows == 0 || !v.len().is_multiple_of(rows) {
        return Err(Error::ShapeMismatch {
            context: format!("unvec: length {} is not a multiple of {rows} rows", v.len()),
        });
    }
    Ok(DMatrix::from_column_slice(rows, v.len() / rows, v.as_slice()))
}

/// Relative asymmetry ||P - P'|| / max(1, ||P||) in the Frobenius norm.
fn asymmetry(p: &DMatrix<f64>) -> f64 {
    (p - p.transpose()).norm() / 1f64.max(p.norm())
}

/// Packs a symmetric matrix into its lower triangle, columnwise, with
/// off-diagonal entries doubled.
///
/// For n = 2 the order is [p11, 2*p21, p22]. Rejects matrices whose
/// relative asymmetry exceeds 1e-9.
pub fn vec_plus(p: &DMatrix<f64>) -> Result<DVector<f64>, Error> {
    let n = p.nrows();
    if p.ncols() != n {
        return Err(Error::ShapeMismatch {
            context: format!("vec_plus: expected square matrix, got {}x{}", p.nrows(), p.ncols()),
        });
    }
    let asym = asymmetry(p);
    if asym > 1e-9 {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let mut out = DVector::zeros(half_len(n));
    let mut idx = 0;
    for j in 0..n {
        for i in j..n {
            out[idx] = if i == j { p[(i, j)] } else { p[(i, j)] + p[(j, i)] };
            idx += 1;
        }
    }
    Ok(out)
}

/// Rebuilds the symmetric matrix packed by [`vec_plus`].
pub fn inv_vec_plus(v: &DVector<f64>) -> Result<DMatrix<f64>, Error> {
    let len = v.len();
    let n = ((((8 * len + 1) as f64).sqrt() as usize) - 1) / 2;
    if half_len(n) != len {
        return Err(Error::ShapeMismatch {
            context: format!("inv_vec_plus: length {len} is not a triangular number"),
        });
    }
    let mut p = DMatrix::zeros(n, n);
    let mut idx = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                p[(i, j)] = v[idx];
            } else {
                p[(i, j)] = v[idx] / 2.0;
                p[(j, i)] = v[idx] / 2.0;
            }
            idx += 1;
        }
    }
    Ok(p)
}

/// The n^2-by-N duplication matrix W with vec(P) = W * vec_plus(P) for
/// symmetric P.
///
/// Each packed entry maps back to its one (diagonal) or two (off-diagonal)
/// positions in vec(P); off-diagonal weights are 1/2 to undo the doubling.
pub fn duplication(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(n * n, half_len(n));
    let mut idx = 0;
    for j in 0..n {
        for i in j..n {
            if i == j {
                w[(j * n + i, idx)] = 1.0;
            } else {
                w[(j * n + i, idx)] = 0.5;
                w[(i * n + j, idx)] = 0.5;
            }
            idx += 1;
        }
    }
    w
}
