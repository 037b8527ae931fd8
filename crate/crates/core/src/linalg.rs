//! Small dense symmetric-matrix kernels used by PCA and Mahalanobis
//! fitting. Matrices here are at most a few hundred rows, so plain
//! cyclic-Jacobi and Cholesky routines are both fast enough and easy to
//! keep deterministic.

use crate::Real;

/// Eigendecomposition of a symmetric matrix (row-major, n*n), via cyclic
/// Jacobi rotations. Returns eigenvalues in descending order and the
/// matching eigenvectors as rows.
pub(crate) fn sym_eigen<S: Real>(a: &[S], n: usize) -> (Vec<S>, Vec<S>) {
    assert_eq!(a.len(), n * n);
    let mut a = a.to_vec();
    // v starts as identity; rows accumulate the rotations.
    let mut v = vec![S::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = S::one();
    }

    let eps = S::epsilon();
    let half = S::from_f64_lossy(0.5);
    for _sweep in 0..64 {
        let mut off = S::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        let mut diag = S::zero();
        for p in 0..n {
            diag += a[p * n + p] * a[p * n + p];
        }
        if off <= eps * eps * (diag + off) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == S::zero() {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                // Skip rotations that cannot change anything at this precision.
                if apq.abs() <= eps * (app.abs() + aqq.abs()) * half {
                    a[p * n + q] = S::zero();
                    a[q * n + p] = S::zero();
                    continue;
                }
                let tau = (aqq - app) / (S::from_f64_lossy(2.0) * apq);
                let t = if tau >= S::zero() {
                    S::one() / (tau + (S::one() + tau * tau).sqrt())
                } else {
                    -S::one() / (-tau + (S::one() + tau * tau).sqrt())
                };
                let c = S::one() / (S::one() + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vpk = v[p * n + k];
                    let vqk = v[q * n + k];
                    v[p * n + k] = c * vpk - s * vqk;
                    v[q * n + k] = s * vpk + c * vqk;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j]
            .partial_cmp(&a[i * n + i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<S> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut eigenvectors = vec![S::zero(); n * n];
    for (row, &i) in order.iter().enumerate() {
        eigenvectors[row * n..(row + 1) * n].copy_from_slice(&v[i * n..(i + 1) * n]);
    }
    (eigenvalues, eigenvectors)
}

/// Cholesky factor L (lower, row-major) of a symmetric positive-definite
/// matrix; `None` if a pivot is not strictly positive and finite.
pub(crate) fn cholesky<S: Real>(a: &[S], n: usize) -> Option<Vec<S>> {
    assert_eq!(a.len(), n * n);
    let mut l = vec![S::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > S::zero()) || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky
/// factor. The result is explicitly symmetrized.
pub(crate) fn spd_inverse<S: Real>(a: &[S], n: usize) -> Option<Vec<S>> {
    let l = cholesky(a, n)?;
    let mut inv = vec![S::zero(); n * n];
    let mut col = vec![S::zero(); n];
    for j in 0..n {
        // Solve L y = e_j, then L^T x = y.
        for i in 0..n {
            let mut sum = if i == j { S::one() } else { S::zero() };
            for k in 0..i {
                sum -= l[i * n + k] * col[k];
            }
            col[i] = sum / l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut sum = col[i];
            for k in (i + 1)..n {
                sum -= l[k * n + i] * col[k];
            }
            col[i] = sum / l[i * n + i];
        }
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let m = (inv[i * n + j] + inv[j * n + i]) * S::from_f64_lossy(0.5);
            inv[i * n + j] = m;
            inv[j * n + i] = m;
        }
    }
    Some(inv)
}

pub(crate) fn dot<S: Real>(a: &[S], b: &[S]) -> S {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_diagonal_matrix() {
        let a: Vec<f64> = vec![3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let (vals, vecs) = sym_eigen(&a, 3);
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 2.0).abs() < 1e-12);
        assert!((vals[2] - 1.0).abs() < 1e-12);
        // Leading eigenvector is +/- e0.
        assert!((vecs[0].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_symmetric_matrix() {
        let a: Vec<f64> = vec![
            4.0, 1.0, -2.0, 0.5, //
            1.0, 3.0, 0.0, 1.5, //
            -2.0, 0.0, 5.0, -1.0, //
            0.5, 1.5, -1.0, 2.0,
        ];
        let n = 4;
        let (vals, vecs) = sym_eigen(&a, n);
        // A == sum_i lambda_i v_i v_i^T
        for i in 0..n {
            for j in 0..n {
                let mut r = 0.0;
                for k in 0..n {
                    r += vals[k] * vecs[k * n + i] * vecs[k * n + j];
                }
                assert!((r - a[i * n + j]).abs() < 1e-12, "({i},{j}): {r}");
            }
        }
        // Rows orthonormal.
        for i in 0..n {
            for j in 0..n {
                let d = dot(&vecs[i * n..(i + 1) * n], &vecs[j * n..(j + 1) * n]);
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn spd_inverse_matches_identity() {
        let a: Vec<f64> = vec![4.0, 1.0, 0.5, 1.0, 3.0, -0.2, 0.5, -0.2, 2.0];
        let n = 3;
        let inv = spd_inverse(&a, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                let mut r = 0.0;
                for k in 0..n {
                    r += a[i * n + k] * inv[k * n + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((r - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let a: Vec<f64> = vec![1.0, 2.0, 2.0, 1.0]; // eigenvalues 3, -1
        assert!(cholesky(&a, 2).is_none());
        let zero = vec![0.0f64; 4];
        assert!(cholesky(&zero, 2).is_none());
    }
}
