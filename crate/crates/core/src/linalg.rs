//! Small dense linear-algebra helpers: half-vectorization, the extension
//! (duplication) matrix, commutation matrix and guarded inversion.

use nalgebra::{DMatrix, DVector};

use crate::error::{LqError, Result};

/// Condition numbers above this are reported as ill-conditioned.
pub const CONDITION_WARN: f64 = 1e12;

/// Length of `vech` for a `p x p` symmetric matrix.
pub fn vech_len(p: usize) -> usize {
    p * (p + 1) / 2
}

/// Recovers `p` from `p(p+1)/2`.
pub fn dim_from_vech_len(len: usize) -> Option<usize> {
    let p = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (vech_len(p) == len).then_some(p)
}

/// Stacks the on-and-below-diagonal part of each column.
pub fn vech(m: &DMatrix<f64>) -> DVector<f64> {
    let p = m.nrows();
    let mut out = DVector::zeros(vech_len(p));
    let mut k = 0;
    for j in 0..p {
        for i in j..p {
            out[k] = m[(i, j)];
            k += 1;
        }
    }
    out
}

/// Inverse of [`vech`]; the result is symmetric.
pub fn unvech(v: &[f64], p: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), vech_len(p), "vech length does not match dimension");
    let mut m = DMatrix::zeros(p, p);
    let mut k = 0;
    for j in 0..p {
        for i in j..p {
            m[(i, j)] = v[k];
            m[(j, i)] = v[k];
            k += 1;
        }
    }
    m
}

/// `(row, col)` pairs in `vech` order.
pub fn vech_indices(p: usize) -> Vec<(usize, usize)> {
    let mut idx = Vec::with_capacity(vech_len(p));
    for j in 0..p {
        for i in j..p {
            idx.push((i, j));
        }
    }
    idx
}

/// Column-major vectorization.
pub fn vec(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

/// The 0/1 extension matrix `G` (p² x p(p+1)/2) with `vec M = G vech M` for
/// every symmetric `M`.
pub fn extension_matrix(p: usize) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(p * p, vech_len(p));
    for (k, (i, j)) in vech_indices(p).into_iter().enumerate() {
        g[(i + j * p, k)] = 1.0;
        g[(j + i * p, k)] = 1.0;
    }
    g
}

/// The commutation matrix `K_{p,p}` with `K vec A = vec Aᵀ`.
pub fn commutation_matrix(p: usize) -> DMatrix<f64> {
    let mut k = DMatrix::zeros(p * p, p * p);
    for i in 0..p {
        for j in 0..p {
            k[(j + i * p, i + j * p)] = 1.0;
        }
    }
    k
}

/// Ratio of extreme singular values; `inf` for singular input.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let sv = m.clone().singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Inverts a symmetric matrix that is expected to be definite (either sign).
/// Uses a Cholesky factorization of `±m`; falls back to LU.
pub fn symmetric_inverse(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    if let Some(ch) = sym.clone().cholesky() {
        return Some(ch.inverse());
    }
    if let Some(ch) = (-&sym).cholesky() {
        return Some(-ch.inverse());
    }
    let inv = sym.lu().try_inverse()?;
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

/// Inverse of a symmetric positive definite matrix together with its
/// log-determinant.
pub fn spd_inverse_logdet(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let ch = m
        .clone()
        .cholesky()
        .ok_or_else(|| LqError::domain("matrix is not symmetric positive definite"))?;
    let logdet = 2.0 * ch.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok((ch.inverse(), logdet))
}

pub fn is_spd(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

pub fn max_abs(v: &DVector<f64>) -> f64 {
    v.amax()
}

/// Largest relative entrywise difference, with `floor` guarding tiny entries.
pub fn max_rel_diff(a: &DMatrix<f64>, b: &DMatrix<f64>, floor: f64) -> f64 {
    let scale = b.amax().max(floor);
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / scale)
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extension_matrix_small_cases() {
        assert_eq!(extension_matrix(1), DMatrix::from_element(1, 1, 1.0));
        let g = extension_matrix(2);
        let expected = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        assert_eq!(g, expected);
    }

    #[test]
    fn extension_matrix_reproduces_vec_for_symmetric() {
        let p = 4;
        let a = DMatrix::from_fn(p, p, |i, j| ((i * 7 + j * 3) % 5) as f64 - 1.3);
        let m = &a + a.transpose();
        assert_eq!(extension_matrix(p) * vech(&m), vec(&m));
    }

    #[test]
    fn commutation_fixes_extension() {
        for p in 1..6 {
            let g = extension_matrix(p);
            assert_eq!(commutation_matrix(p) * &g, g);
        }
    }

    #[test]
    fn vech_round_trip() {
        let m = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0]);
        assert_eq!(unvech(vech(&m).as_slice(), 3), m);
        assert_eq!(dim_from_vech_len(6), Some(3));
        assert_eq!(dim_from_vech_len(5), None);
    }

    #[test]
    fn symmetric_inverse_handles_negative_definite() {
        let m = DMatrix::from_row_slice(2, 2, &[-2.0, 0.3, 0.3, -1.0]);
        let inv = symmetric_inverse(&m).unwrap();
        let id = &m * inv;
        assert!((id - DMatrix::identity(2, 2)).amax() < 1e-14);
    }
}
