//! Dense linear-algebra helpers shared by the embedding and alignment stages.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative cutoff below which a singular value counts as zero.
pub const RANK_TOL: f64 = 1e-10;

/// Relative residual an eigenpair must meet.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;

/// Eigenpairs of a symmetric matrix, ordered by decreasing magnitude.
#[derive(Debug, Clone)]
pub struct EigenPairs {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
    /// Largest relative residual `‖Mv − λv‖ / max(1, |λ|max)` over the kept pairs.
    pub residual: f64,
}

/// Top-`k` eigenpairs of symmetric `m` by |λ|. Ties in magnitude keep the
/// positive eigenvalue first.
pub fn top_eigenpairs(m: &DMatrix<f64>, k: usize) -> Result<EigenPairs> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} is not square",
            n,
            m.ncols()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "requested {k} eigenpairs of a {n}x{n} matrix"
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eigensolver input"));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (eig.eigenvalues[a], eig.eigenvalues[b]);
        lb.abs()
            .total_cmp(&la.abs())
            .then(lb.total_cmp(&la))
            .then(a.cmp(&b))
    });
    order.truncate(k);
    let values = DVector::from_iterator(k, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, k);
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    let scale = values.iter().fold(1.0f64, |acc, v| acc.max(v.abs()));
    let mv = m * &vectors;
    let mut residual = 0.0f64;
    for c in 0..k {
        let r = (mv.column(c) - vectors.column(c) * values[c]).norm() / scale;
        residual = residual.max(r);
    }
    if !(residual <= EIGEN_RESIDUAL_TOL) {
        return Err(Error::EigenNotConverged { residual });
    }
    Ok(EigenPairs {
        values,
        vectors,
        residual,
    })
}

/// Flip column signs so that each column's largest-magnitude entry is
/// positive. The first such entry wins when magnitudes tie exactly.
pub fn fix_column_signs(m: &mut DMatrix<f64>) {
    for c in 0..m.ncols() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in m.column(c).iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            m.column_mut(c).neg_mut();
        }
    }
}

/// Thin SVD with singular values sorted in decreasing order.
pub fn sorted_svd(m: &DMatrix<f64>) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let s = svd.singular_values;
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]).then(a.cmp(&b)));
    let mut us = DMatrix::zeros(u.nrows(), order.len());
    let mut vs = DMatrix::zeros(v_t.ncols(), order.len());
    for (c, &i) in order.iter().enumerate() {
        us.set_column(c, &u.column(i));
        vs.set_column(c, &v_t.row(i).transpose());
    }
    let ss = DVector::from_iterator(order.len(), order.iter().map(|&i| s[i]));
    (us, ss, vs)
}

/// Orthogonal polar factor of a square matrix: the maximizer of
/// `trace(Qᵀ M)` over orthogonal `Q`, i.e. `U Vᵀ` from `M = U Σ Vᵀ`.
///
/// When `M` is rank deficient the maximizer is not unique. Among all
/// maximizers the one closest to the identity is returned, so a symmetric
/// positive semidefinite `M` always yields `I`. The numerical rank is
/// returned alongside.
pub fn polar_factor(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let d = m.nrows();
    assert_eq!(d, m.ncols(), "polar factor needs a square matrix");
    if d == 0 {
        return (DMatrix::zeros(0, 0), 0);
    }
    let (u, s, v) = sorted_svd(m);
    let cutoff = RANK_TOL * s[0].max(f64::MIN_POSITIVE);
    let rank = if s[0] == 0.0 {
        0
    } else {
        s.iter().take_while(|&&x| x > cutoff).count()
    };
    let ur = u.columns(0, rank);
    let vr = v.columns(0, rank);
    let mut q = ur * vr.transpose();
    if rank < d {
        let un = u.columns(rank, d - rank);
        let vn = v.columns(rank, d - rank);
        let overlap = un.transpose() * vn;
        let (a, _, b) = sorted_svd(&overlap);
        let w = a * b.transpose();
        q += un * w * vn.transpose();
    }
    (q, rank)
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().fold(0.0f64, |a, &b| a.max(b))
}

/// `‖QᵀQ − I‖_F`.
pub fn orthogonality_residual(q: &DMatrix<f64>) -> f64 {
    let qtq = q.transpose() * q;
    (qtq - DMatrix::identity(q.ncols(), q.ncols())).norm()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenpairs_sorted_by_magnitude() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -3.0, 2.0, 0.5]));
        let e = top_eigenpairs(&m, 3).unwrap();
        assert_eq!(e.values.as_slice(), &[-3.0, 2.0, 1.0]);
        assert!(e.residual < 1e-12);
        assert!(top_eigenpairs(&m, 5).is_err());
    }

    #[test]
    fn sign_convention() {
        let mut m = DMatrix::from_row_slice(3, 2, &[0.1, 0.9, -0.8, -0.2, 0.3, 0.1]);
        fix_column_signs(&mut m);
        assert!(m[(1, 0)] > 0.0);
        assert!(m[(0, 1)] > 0.0);
    }

    #[test]
    fn polar_of_psd_is_identity_even_when_singular() {
        let v = DVector::from_vec(vec![1.0, 2.0, -1.0, 0.5]);
        let m = &v * v.transpose();
        let (q, rank) = polar_factor(&m);
        assert_eq!(rank, 1);
        assert!((q - DMatrix::<f64>::identity(4, 4)).norm() < 1e-10);
        let (q0, r0) = polar_factor(&DMatrix::zeros(3, 3));
        assert_eq!(r0, 0);
        assert!((q0 - DMatrix::<f64>::identity(3, 3)).norm() < 1e-12);
    }

    #[test]
    fn polar_factor_is_orthogonal_and_optimal_on_full_rank() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -1.0, 0.1, 1.0, 0.4, 0.7, -0.2, 3.0]);
        let (q, rank) = polar_factor(&m);
        assert_eq!(rank, 3);
        assert!(orthogonality_residual(&q) < 1e-12);
        // Q M^T Q is symmetric positive definite for the polar factor.
        let h = q.transpose() * &m;
        assert!((&h - h.transpose()).norm() < 1e-10);
        assert!(h.symmetric_eigenvalues().iter().all(|&l| l > 0.0));
    }
}
