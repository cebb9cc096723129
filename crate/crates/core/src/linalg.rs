//! Small dense linear-algebra helpers: cyclic-Jacobi symmetric
//! eigendecomposition and principal angles between subspaces.
//!
//! These run on matrices no bigger than a Gram matrix of a subsampled
//! cloud, so an O(n^3) textbook method with deterministic sweep order is
//! the right tool.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order with matching eigenvector
/// columns. Symmetry is enforced by averaging `a` with its transpose.
pub fn jacobi_eigh(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "jacobi_eigh needs a square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("eigendecomposition input is non-finite".into()));
    }
    let mut m = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (a[(i, j)] + a[(j, i)]));
    let mut v = Array2::eye(n);

    let scale = m.iter().map(|x| x.abs()).fold(0.0f64, f64::max).max(1.0);
    let tol = 1e-14 * scale;
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(m[(p, q)].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                if apq.abs() <= tol * 1e-2 {
                    continue;
                }
                // Classic Jacobi rotation zeroing m[p,q].
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let (mip, miq) = (m[(i, p)], m[(i, q)]);
                    m[(i, p)] = c * mip - s * miq;
                    m[(i, q)] = s * mip + c * miq;
                }
                for i in 0..n {
                    let (mpi, mqi) = (m[(p, i)], m[(q, i)]);
                    m[(p, i)] = c * mpi - s * mqi;
                    m[(q, i)] = s * mpi + c * mqi;
                }
                for i in 0..n {
                    let (vip, viq) = (v[(i, p)], v[(i, q)]);
                    v[(i, p)] = c * vip - s * viq;
                    v[(i, q)] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[(i, i)].partial_cmp(&m[(j, j)]).expect("finite eigenvalues"));
    let eigenvalues = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let eigenvectors = Array2::from_shape_fn((n, n), |(i, j)| v[(i, order[j])]);
    Ok((eigenvalues, eigenvectors))
}

/// Orthonormalize the rows of `basis` by modified Gram-Schmidt. Errors if
/// the rows are linearly dependent (relative to the largest row norm).
pub fn orthonormalize_rows(basis: &Array2<f64>) -> Result<Array2<f64>> {
    let (k, d) = basis.dim();
    if k == 0 || d == 0 {
        return Err(Error::ShapeMismatch("empty basis".into()));
    }
    if k > d {
        return Err(Error::Validation(format!(
            "{k} rows cannot be independent in dimension {d}"
        )));
    }
    let mut q = basis.mapv(|v| v);
    let scale = q.iter().map(|v| v.abs()).fold(0.0f64, f64::max).max(1e-300);
    for i in 0..k {
        for j in 0..i {
            let proj = q.row(i).dot(&q.row(j));
            let qj = q.row(j).to_owned();
            q.row_mut(i).zip_mut_with(&qj, |a, b| *a -= proj * b);
        }
        let norm = q.row(i).dot(&q.row(i)).sqrt();
        if norm <= 1e-10 * scale {
            return Err(Error::Numeric(format!(
                "basis row {i} is linearly dependent on earlier rows"
            )));
        }
        q.row_mut(i).mapv_inplace(|v| v / norm);
    }
    Ok(q)
}

/// Principal angles (radians, ascending) between the row spaces of `a` and
/// `b`. Rows need not be orthonormal; both must have the same ambient
/// dimension and full row rank.
pub fn principal_angles(a: &Array2<f64>, b: &Array2<f64>) -> Result<Vec<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "ambient dims differ: {} vs {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let qa = orthonormalize_rows(a)?;
    let qb = orthonormalize_rows(b)?;
    // Cosines are the singular values of Qa Qb^T, obtained from the
    // eigenvalues of its (tiny) normal matrix.
    let m = qa.dot(&qb.t());
    let mtm = m.t().dot(&m);
    let (eigs, _) = jacobi_eigh(&mtm)?;
    let k = a.nrows().min(b.nrows());
    let mut angles: Vec<f64> = eigs
        .iter()
        .rev()
        .take(k)
        .map(|&l| l.max(0.0).sqrt().clamp(0.0, 1.0).acos())
        .collect();
    angles.sort_by(|x, y| x.partial_cmp(y).expect("finite angles"));
    Ok(angles)
}

/// Largest principal angle; 0 means identical subspaces.
pub fn max_principal_angle(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    Ok(*principal_angles(a, b)?
        .last()
        .expect("at least one angle"))
}
