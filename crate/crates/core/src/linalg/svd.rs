//! One-sided Jacobi SVD, used as the exact oracle that independent checks
//! are measured against. Accuracy over speed; inputs are desk scale only.

use super::{dot, norm2, LinalgError, Matrix};

const MAX_SWEEPS: usize = 60;
const CONVERGENCE_TOL: f64 = 1e-14;

/// Thin SVD `A = U · diag(s) · Vᵀ` with `k = min(rows, cols)`.
///
/// `u` is `rows × k`, `v` is `cols × k`, both with orthonormal columns;
/// `s` is sorted descending and non-negative.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdResult {
    /// `U · diag(s) · Vᵀ`, for reconstruction checks.
    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        let mut scaled = self.u.clone();
        for i in 0..scaled.rows() {
            for (j, &sv) in self.s.iter().enumerate().take(k) {
                let val = scaled.get(i, j) * sv;
                scaled.set(i, j, val);
            }
        }
        scaled.matmul_transb(&self.v)
    }
}

/// Full singular value decomposition by one-sided Jacobi rotations.
///
/// Returns an error for inputs beyond desk scale (min dimension > 512) or if
/// the rotation sweeps fail to converge, which signals a degenerate input
/// rather than a library bug.
pub fn svd_oracle(a: &Matrix) -> Result<SvdResult, LinalgError> {
    let k = a.rows().min(a.cols());
    if k > 512 {
        return Err(LinalgError::OracleTooLarge(k));
    }
    svd_with_sweep_cap(a, MAX_SWEEPS)
}

pub(crate) fn svd_with_sweep_cap(a: &Matrix, max_sweeps: usize) -> Result<SvdResult, LinalgError> {
    if a.rows() < a.cols() {
        // Work on the transpose and swap the factors back.
        let r = svd_with_sweep_cap(&a.transpose(), max_sweeps)?;
        return Ok(SvdResult { u: r.v, s: r.s, v: r.u });
    }

    let m = a.rows();
    let n = a.cols();

    // Store columns of A as rows of `b` so rotations touch contiguous memory.
    let mut b = a.transpose(); // n × m, row i = column i of A
    let mut vt = Matrix::identity(n); // row i = column i of V

    // Columns this far below the matrix scale are numerically zero; pairing
    // them keeps chasing rounding noise (their squared norms underflow), so
    // they are frozen instead. Rank-deficient inputs hit this routinely.
    let dead = a.frobenius_norm() * 1e-18;

    let mut converged = false;
    let mut sweeps_used = 0;
    for _ in 0..max_sweeps {
        sweeps_used += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(b.row(p), b.row(p));
                let beta = dot(b.row(q), b.row(q));
                let gamma = dot(b.row(p), b.row(q));
                if gamma == 0.0 || alpha.sqrt() <= dead || beta.sqrt() <= dead {
                    continue;
                }
                if gamma.abs() <= CONVERGENCE_TOL * alpha.sqrt() * beta.sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_rows(&mut b, p, q, c, s);
                rotate_rows(&mut vt, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::SvdNoConvergence { sweeps: sweeps_used });
    }

    // Singular values are the column norms of the rotated matrix.
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|i| norm2(b.row(i))).collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let s: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut deficient = Vec::new();
    for (col, &src) in order.iter().enumerate() {
        // Frozen numerically-zero columns have meaningless directions; their
        // left vectors are rebuilt by basis completion below.
        if norms[src] > dead * 10.0 && norms[src] > 0.0 {
            for (i, &val) in b.row(src).iter().enumerate() {
                u.set(i, col, val / norms[src]);
            }
        } else {
            deficient.push(col);
        }
        for (i, &val) in vt.row(src).iter().enumerate() {
            v.set(i, col, val);
        }
    }
    if !deficient.is_empty() {
        complete_basis(&mut u, &deficient);
    }

    Ok(SvdResult { u, s, v })
}

fn rotate_rows(m: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let cols = m.cols();
    let (pr, qr) = if p < q {
        let (head, tail) = m.values_mut().split_at_mut(q * cols);
        (&mut head[p * cols..(p + 1) * cols], &mut tail[..cols])
    } else {
        unreachable!("rotation pairs are ordered")
    };
    for (a, b) in pr.iter_mut().zip(qr.iter_mut()) {
        let ap = *a;
        let aq = *b;
        *a = c * ap - s * aq;
        *b = s * ap + c * aq;
    }
}

/// Fill the listed columns of `u` with unit vectors orthogonal to all other
/// columns (Gram-Schmidt against coordinate candidates). Only reached for
/// rank-deficient inputs, where left singular vectors of zero singular
/// values are arbitrary up to orthonormality.
fn complete_basis(u: &mut Matrix, missing: &[usize]) {
    let m = u.rows();
    let n = u.cols();
    for &col in missing {
        let filled: Vec<usize> = (0..n).filter(|j| !missing.contains(j) || *j < col).collect();
        let orthogonalize = |cand: &mut Vec<f64>| {
            for &j in &filled {
                let proj: f64 = (0..m).map(|i| cand[i] * u.get(i, j)).sum();
                for (i, c) in cand.iter_mut().enumerate() {
                    *c -= proj * u.get(i, j);
                }
            }
        };
        // The coordinate vector with the largest residual against the span
        // of the filled columns; since that span has dimension < m, the best
        // residual norm is at least 1/√m.
        let mut best: Option<(f64, Vec<f64>)> = None;
        for t in 0..m {
            let mut cand = vec![0.0; m];
            cand[t] = 1.0;
            orthogonalize(&mut cand);
            let nrm = norm2(&cand);
            if best.as_ref().is_none_or(|(b, _)| nrm > *b) {
                best = Some((nrm, cand));
            }
        }
        let (nrm, mut cand) = best.expect("matrix has at least one row");
        assert!(nrm > 0.0, "no candidate left outside the span");
        for c in &mut cand {
            *c /= nrm;
        }
        // Second pass tightens orthogonality when the residual was small.
        orthogonalize(&mut cand);
        let nrm = norm2(&cand);
        for (i, c) in cand.iter().enumerate() {
            u.set(i, col, c / nrm);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn max_offdiag_from_identity(g: &Matrix) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..g.rows() {
            for j in 0..g.cols() {
                let expected = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - expected).abs());
            }
        }
        worst
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let r = svd_oracle(&Matrix::identity(3)).unwrap();
        for &s in &r.s {
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn diagonal_matrix() {
        let r = svd_oracle(&Matrix::diag(&[3.0, 1.0])).unwrap();
        assert!((r.s[0] - 3.0).abs() < 1e-14);
        assert!((r.s[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn random_32x32_factors_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Matrix::new(32, 32, (0..32 * 32).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        let r = svd_oracle(&a).unwrap();
        assert!(max_offdiag_from_identity(&r.u.transa_matmul(&r.u)) < 1e-10);
        assert!(max_offdiag_from_identity(&r.v.transa_matmul(&r.v)) < 1e-10);
    }

    #[test]
    fn reconstruction_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for &(m, n) in &[(5, 9), (9, 5), (16, 16), (1, 7)] {
            let a = Matrix::new(m, n, (0..m * n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap();
            let r = svd_oracle(&a).unwrap();
            let err = r.reconstruct().sub(&a).frobenius_norm();
            assert!(err <= 1e-10 * a.frobenius_norm().max(1.0), "reconstruction error {err}");
        }
    }

    #[test]
    fn rank_one_input_reports_single_nonzero_value() {
        let a = Matrix::outer(&[1.0, 2.0, -1.0], &[0.5, 0.5, 1.0, -2.0]);
        let r = svd_oracle(&a).unwrap();
        let expected = norm2(&[1.0, 2.0, -1.0]) * norm2(&[0.5, 0.5, 1.0, -2.0]);
        assert!((r.s[0] - expected).abs() < 1e-12);
        for &s in &r.s[1..] {
            assert!(s < 1e-12);
        }
        // Orthonormality must hold even for the completed null columns.
        assert!(max_offdiag_from_identity(&r.u.transa_matmul(&r.u)) < 1e-10);
        let err = r.reconstruct().sub(&a).frobenius_norm();
        assert!(err <= 1e-10 * a.frobenius_norm().max(1.0));
    }

    #[test]
    fn zero_matrix_decomposes_cleanly() {
        let r = svd_oracle(&Matrix::zeros(3, 2)).unwrap();
        assert!(r.s.iter().all(|&s| s == 0.0));
        assert!(max_offdiag_from_identity(&r.u.transa_matmul(&r.u)) < 1e-12);
    }

    #[test]
    fn oversized_input_is_rejected() {
        let a = Matrix::zeros(513, 513);
        assert!(matches!(svd_oracle(&a), Err(LinalgError::OracleTooLarge(513))));
    }

    #[test]
    fn sweep_cap_reports_nonconvergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Matrix::new(12, 12, (0..144).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
        assert!(matches!(
            svd_with_sweep_cap(&a, 1),
            Err(LinalgError::SvdNoConvergence { sweeps: 1 })
        ));
    }
}
