//! Pointwise dense linear algebra on matrices of fields.

use num_complex::Complex64 as C64;

use crate::field_core::{Field, FieldError};

const ONE: C64 = C64::new(1.0, 0.0);

/// Row-major `n x n` matrix of fields.
pub type FieldMatrix<F> = Vec<F>;

/// Inverse by Gauss-Jordan without pivoting; valid for matrices whose leading
/// minors never vanish (positive-definite Hermitian, or `g`-like blocks).
pub fn inverse<F: Field>(a: &[F], n: usize) -> Result<FieldMatrix<F>, FieldError> {
    let chart = a[0].chart().clone();
    let mut m: Vec<F> = a.to_vec();
    let mut inv: Vec<F> = (0..n * n)
        .map(|k| {
            F::constant(
                &chart,
                if k / n == k % n {
                    ONE
                } else {
                    C64::new(0.0, 0.0)
                },
            )
        })
        .collect();
    for col in 0..n {
        let p = m[col * n + col].recip()?;
        for j in 0..n {
            m[col * n + j] = m[col * n + j].mul(&p);
            inv[col * n + j] = inv[col * n + j].mul(&p);
        }
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = m[row * n + col].clone();
            for j in 0..n {
                let (mr, ir) = (m[col * n + j].clone(), inv[col * n + j].clone());
                m[row * n + j].fma(-ONE, &factor, &mr);
                inv[row * n + j].fma(-ONE, &factor, &ir);
            }
        }
    }
    Ok(inv)
}

/// `a · b` for `n x n` matrices.
pub fn matmul<F: Field>(a: &[F], b: &[F], n: usize) -> FieldMatrix<F> {
    let chart = a[0].chart().clone();
    let mut out = vec![F::zeros(&chart); n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                out[i * n + j].fma(ONE, &a[i * n + k], &b[k * n + j]);
            }
        }
    }
    out
}

pub fn transpose<F: Field>(a: &[F], n: usize) -> FieldMatrix<F> {
    (0..n * n).map(|k| a[(k % n) * n + k / n].clone()).collect()
}

/// Constant matrix as fields.
pub fn constant<F: Field>(
    chart: &std::sync::Arc<crate::field_core::Chart>,
    vals: &[f64],
) -> FieldMatrix<F> {
    vals.iter()
        .map(|&v| F::constant(chart, C64::new(v, 0.0)))
        .collect()
}

/// Per-node real symmetric eigenvalue minimum of a matrix of fields.
pub fn min_eigenvalues<F: Field>(a: &[F], n: usize) -> Vec<f64> {
    let vals: Vec<Vec<C64>> = a.iter().map(|f| f.values()).collect();
    let nodes = vals[0].len();
    (0..nodes)
        .map(|node| {
            let m = nalgebra::DMatrix::from_fn(n, n, |i, j| {
                0.5 * (vals[i * n + j][node].re + vals[j * n + i][node].re)
            });
            m.symmetric_eigenvalues()
                .iter()
                .copied()
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

/// Per-node determinant of a real matrix of fields.
pub fn determinants<F: Field>(a: &[F], n: usize) -> Vec<f64> {
    let vals: Vec<Vec<C64>> = a.iter().map(|f| f.values()).collect();
    let nodes = vals[0].len();
    (0..nodes)
        .map(|node| nalgebra::DMatrix::from_fn(n, n, |i, j| vals[i * n + j][node].re).determinant())
        .collect()
}
