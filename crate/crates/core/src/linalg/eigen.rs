//! Symmetric eigendecomposition by cyclic Jacobi rotations. Supports the
//! covariance square roots in the metrics module.

use super::{LinalgError, Matrix};

const MAX_SWEEPS: usize = 100;

/// Eigendecomposition `A = Q · diag(λ) · Qᵀ` of a symmetric matrix.
///
/// The input is symmetrized before iterating, so mild floating-point
/// asymmetry is tolerated. Eigenvalues are returned in descending order with
/// matching eigenvector columns in `q`.
pub fn sym_eigen(a: &Matrix) -> Result<(Vec<f64>, Matrix), LinalgError> {
    if a.rows() != a.cols() {
        return Err(LinalgError::DimensionMismatch {
            context: format!("sym_eigen needs a square matrix, got {}x{}", a.rows(), a.cols()),
        });
    }
    let n = a.rows();
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            m.set(i, j, 0.5 * (a.get(i, j) + a.get(j, i)));
        }
    }
    let mut q = Matrix::identity(n);
    let scale = m.frobenius_norm().max(f64::MIN_POSITIVE);

    let mut converged = false;
    let mut sweeps_used = 0;
    for _ in 0..MAX_SWEEPS {
        sweeps_used += 1;
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m.get(i, j).powi(2);
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for qi in (p + 1)..n {
                let apq = m.get(p, qi);
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(qi, qi);
                let tau = (aqq - app) / (2.0 * apq);
                let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                // Two-sided rotation on rows/columns p and q.
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, qi);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, qi, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(qi, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(qi, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let qkp = q.get(k, p);
                    let qkq = q.get(k, qi);
                    q.set(k, p, c * qkp - s * qkq);
                    q.set(k, qi, s * qkp + c * qkq);
                }
            }
        }
    }
    if !converged {
        return Err(LinalgError::EigenNoConvergence { sweeps: sweeps_used });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| diag[i]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, col, q.get(i, src));
        }
    }
    Ok((eigenvalues, vectors))
}
