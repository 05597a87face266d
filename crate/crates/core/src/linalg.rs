//! Small dense linear-algebra helpers used by the dynamics and frames layers.
//!
//! Everything here operates on heap-allocated `nalgebra` matrices; the systems
//! of interest are tiny (n + k rarely above 10), so simple dense
//! factorizations are the right tool.

use crate::error::{CoreError, Result};
use nalgebra::{DMatrix, DVector};

/// Relative singular-value cutoff below which a constraint matrix is treated
/// as rank-deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Orthonormal basis of `ker S` as the columns of the returned matrix.
///
/// Errors if `S` does not have full row rank (ratio test against [`RANK_TOL`]).
pub fn kernel_basis(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = s.nrows();
    let n = s.ncols();
    if k == 0 {
        return Ok(DMatrix::identity(n, n));
    }
    if k >= n {
        return Ok(DMatrix::zeros(n, 0));
    }
    // nalgebra's SVD is thin; pad with zero rows to recover the full V.
    let mut padded = DMatrix::zeros(n, n);
    padded.view_mut((0, 0), (k, n)).copy_from(s);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    // Singular values are sorted descending; the first k belong to S.
    let sigma_max = svd.singular_values[0];
    let sigma_min = svd.singular_values[k - 1];
    if !(sigma_min > RANK_TOL * sigma_max) {
        return Err(CoreError::SingularConstraint {
            ratio: if sigma_max > 0.0 {
                sigma_min / sigma_max
            } else {
                0.0
            },
        });
    }
    // Rows k..n of V^T span the kernel; transpose them into columns.
    let mut basis = DMatrix::zeros(n, n - k);
    for j in 0..(n - k) {
        for i in 0..n {
            basis[(i, j)] = v_t[(k + j, i)];
        }
    }
    Ok(basis)
}

/// Minimum-Euclidean-norm solution of `S x = rhs` for full-row-rank `S`.
pub fn min_norm_solve(s: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    let k = s.nrows();
    let n = s.ncols();
    if k == 0 {
        return Ok(DVector::zeros(n));
    }
    check_full_row_rank(s)?;
    let gram = s * s.transpose();
    let y = gram
        .lu()
        .solve(rhs)
        .ok_or(CoreError::SingularConstraint { ratio: 0.0 })?;
    Ok(s.transpose() * y)
}

fn check_full_row_rank(s: &DMatrix<f64>) -> Result<()> {
    let svd = s.clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    let sigma_min = svd.singular_values.min();
    if !(sigma_min > RANK_TOL * sigma_max) {
        return Err(CoreError::SingularConstraint {
            ratio: if sigma_max > 0.0 {
                sigma_min / sigma_max
            } else {
                0.0
            },
        });
    }
    Ok(())
}

/// Solve the saddle-point system
///
/// ```text
/// [ M  -S^T ] [ qddot  ]   [ f ]
/// [ S   0   ] [ lambda ] = [ g ]
/// ```
///
/// Uses a dense LU on the full block matrix for small systems and a Schur
/// complement `S M^{-1} S^T` for larger ones.
pub fn saddle_solve(
    m: &DMatrix<f64>,
    s: &DMatrix<f64>,
    f: &DVector<f64>,
    g: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = m.nrows();
    let k = s.nrows();
    if k == 0 {
        let qddot = m.clone().lu().solve(f).ok_or(CoreError::DegenerateSaddle)?;
        return Ok((qddot, DVector::zeros(0)));
    }
    if n + k <= 64 {
        let mut block = DMatrix::zeros(n + k, n + k);
        block.view_mut((0, 0), (n, n)).copy_from(m);
        block.view_mut((0, n), (n, k)).copy_from(&(-s.transpose()));
        block.view_mut((n, 0), (k, n)).copy_from(s);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(f);
        rhs.rows_mut(n, k).copy_from(g);
        let sol = block.lu().solve(&rhs).ok_or(CoreError::DegenerateSaddle)?;
        Ok((sol.rows(0, n).into_owned(), sol.rows(n, k).into_owned()))
    } else {
        // Schur complement path: lambda from S M^{-1} S^T lambda = g - S M^{-1} f.
        let chol = m.clone().cholesky().ok_or(CoreError::DegenerateSaddle)?;
        let minv_f = chol.solve(f);
        let minv_st = chol.solve(&s.transpose());
        let schur = s * &minv_st;
        let rhs = g - s * &minv_f;
        let lambda = schur.lu().solve(&rhs).ok_or(CoreError::DegenerateSaddle)?;
        let qddot = minv_f + minv_st * &lambda;
        Ok((qddot, lambda))
    }
}

/// Largest principal-angle sine between the column spans of two matrices with
/// orthonormal columns. Zero iff the subspaces coincide.
pub fn subspace_distance(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    // ||(I - A A^T) B||_2 = sin of the largest principal angle.
    let proj = b - a * (a.transpose() * b);
    let svd = proj.svd(false, false);
    svd.singular_values.max()
}

/// Central-difference step for coordinate `x`: `max(1e-6, 1e-6 |x|)`.
pub fn fd_step(x: f64) -> f64 {
    (1e-6 * x.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_basis_is_orthonormal_and_annihilated() {
        let s = DMatrix::from_row_slice(2, 5, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let basis = kernel_basis(&s).unwrap();
        assert_eq!(basis.ncols(), 3);
        let prod = &s * &basis;
        assert!(prod.amax() < 1e-12);
        let gram = basis.transpose() * &basis;
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn min_norm_solution_is_orthogonal_to_kernel() {
        let s = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let rhs = DVector::from_vec(vec![2.0]);
        let xi = min_norm_solve(&s, &rhs).unwrap();
        assert!((xi - DVector::from_vec(vec![2.0, 0.0])).amax() < 1e-14);
    }

    #[test]
    fn saddle_solve_matches_unconstrained_when_k_zero() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0]));
        let s = DMatrix::zeros(0, 2);
        let f = DVector::from_vec(vec![2.0, 8.0]);
        let g = DVector::zeros(0);
        let (qddot, lambda) = saddle_solve(&m, &s, &f, &g).unwrap();
        assert!((qddot - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-14);
        assert_eq!(lambda.len(), 0);
    }

    #[test]
    fn saddle_solve_satisfies_both_blocks() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1.0, 0.4, 0.4, 0.4]));
        let s = DMatrix::from_row_slice(2, 5, &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let f = DVector::from_vec(vec![0.1, -0.2, 0.0, 0.3, 0.0]);
        let g = DVector::from_vec(vec![0.5, -0.5]);
        let (qddot, lambda) = saddle_solve(&m, &s, &f, &g).unwrap();
        let res1 = &m * &qddot - s.transpose() * &lambda - &f;
        let res2 = &s * &qddot - &g;
        assert!(res1.amax() < 1e-12);
        assert!(res2.amax() < 1e-12);
    }

    #[test]
    fn saddle_solve_schur_path_matches_block_path() {
        // n + k > 64 routes through the Schur complement; both paths must
        // satisfy the same blocks.
        let n = 70;
        let mut rng_state = 0x9E3779B97F4A7C15u64;
        let mut next = move || {
            rng_state ^= rng_state << 13;
            rng_state ^= rng_state >> 7;
            rng_state ^= rng_state << 17;
            (rng_state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        let m = DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| 1.0 + 0.01 * i as f64));
        let s = DMatrix::from_fn(2, n, |_, _| next());
        let f = DVector::from_fn(n, |_, _| next());
        let g = DVector::from_fn(2, |_, _| next());
        let (qddot, lambda) = saddle_solve(&m, &s, &f, &g).unwrap();
        let res1 = &m * &qddot - s.transpose() * &lambda - &f;
        let res2 = &s * &qddot - &g;
        assert!(res1.amax() < 1e-10);
        assert!(res2.amax() < 1e-10);
    }

    #[test]
    fn subspace_distance_detects_rotation() {
        let a = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let b = DMatrix::from_column_slice(2, 1, &[0.0, 1.0]);
        assert!((subspace_distance(&a, &b) - 1.0).abs() < 1e-14);
        assert!(subspace_distance(&a, &a) < 1e-14);
    }
}
