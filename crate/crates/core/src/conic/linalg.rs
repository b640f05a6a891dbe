//! Dense symmetric-matrix utilities shared by the conic layer and the
//! certification code.
//!
//! Symmetric matrices are packed column-major over the upper triangle,
//! `(0,0), (0,1), (1,1), (0,2), (1,2), (2,2), ...`, with off-diagonal
//! entries multiplied by `sqrt(2)`. With this scaling the Euclidean inner
//! product of two packed vectors is the trace inner product `Tr(AB)`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Length of the packed vector for an `n x n` symmetric matrix.
pub fn svec_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Packed position of entry `(i, j)` (either triangle).
pub fn svec_index(i: usize, j: usize) -> usize {
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    c * (c + 1) / 2 + r
}

/// Recovers the matrix dimension from a packed length, if it is triangular.
pub fn svec_dim(len: usize) -> Option<usize> {
    let n = ((((8 * len + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
    (svec_len(n) == len).then_some(n)
}

pub fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(svec_len(n));
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                out.push(m[(i, i)]);
            } else {
                out.push(std::f64::consts::SQRT_2 * 0.5 * (m[(i, j)] + m[(j, i)]));
            }
        }
    }
    out
}

pub fn smat(v: &[f64]) -> Result<DMatrix<f64>> {
    let n = svec_dim(v.len()).ok_or_else(|| Error::invalid(format!("{} is not a triangular length", v.len())))?;
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            if i == j {
                m[(i, i)] = v[k];
            } else {
                let x = v[k] / std::f64::consts::SQRT_2;
                m[(i, j)] = x;
                m[(j, i)] = x;
            }
            k += 1;
        }
    }
    Ok(m)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigen-decomposition with eigenvalues sorted in decreasing order.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// True iff the smallest eigenvalue of `m` is at least `-tol * (1 + ||m||_2)`.
pub fn psd_check(m: &DMatrix<f64>, tol: f64) -> Result<bool> {
    if !m.is_square() {
        return Err(Error::dims("psd_check (square matrix)", m.nrows(), m.ncols()));
    }
    let scale = 1.0 + spectral_norm(m);
    let asym = (m - m.transpose()).abs().max();
    if asym > tol.max(1e-12) * scale {
        return Err(Error::invalid(format!("matrix is not symmetric (asymmetry {asym:.3e})")));
    }
    Ok(min_eigenvalue(m) >= -tol * scale)
}

/// Inverse square root of a symmetric positive semidefinite matrix.
///
/// Eigenvalues below `floor` are raised to `floor` before inversion; an
/// eigenvalue below `-floor` is an error.
pub fn inv_sqrt(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::dims("inv_sqrt (square matrix)", m.nrows(), m.ncols()));
    }
    if floor <= 0.0 {
        return Err(Error::invalid("inv_sqrt floor must be positive"));
    }
    let (values, vectors) = sym_eigen(m);
    if let Some(&bad) = values.iter().find(|&&v| v < -floor) {
        return Err(Error::NotPsd { min_eigenvalue: bad });
    }
    let scaled = DVector::from_iterator(values.len(), values.iter().map(|&v| 1.0 / v.max(floor).sqrt()));
    Ok(&vectors * DMatrix::from_diagonal(&scaled) * vectors.transpose())
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clipped).
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let roots = DVector::from_iterator(values.len(), values.iter().map(|&v| v.max(0.0).sqrt()));
    &vectors * DMatrix::from_diagonal(&roots) * vectors.transpose()
}

/// Orthonormal basis (as columns) of the column space of `m`.
///
/// Directions with singular value below `rel_tol * sigma_max` are dropped.
pub fn range_basis(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let rows = m.nrows();
    if rows == 0 || m.ncols() == 0 {
        return DMatrix::zeros(rows, 0);
    }
    let svd = m.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.max();
    if !(top > 0.0) {
        return DMatrix::zeros(rows, 0);
    }
    let keep: Vec<usize> = (0..svd.singular_values.len()).filter(|&i| svd.singular_values[i] > rel_tol * top).collect();
    let mut out = DMatrix::zeros(rows, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        out.set_column(c, &u.column(i));
    }
    out
}

/// Factor `t = F^T F` with `F` having one row per nonnegligible eigen-direction.
pub fn psd_factor(t: &DMatrix<f64>) -> DMatrix<f64> {
    let n = t.nrows();
    let (values, vectors) = sym_eigen(t);
    let top = values.iter().copied().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..n).filter(|&i| values[i] > 1e-13 * top.max(1e-300)).collect();
    let mut f = DMatrix::zeros(keep.len(), n);
    for (row, &i) in keep.iter().enumerate() {
        let s = values[i].sqrt();
        for c in 0..n {
            f[(row, c)] = s * vectors[(c, i)];
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn psd_check_examples() {
        assert!(psd_check(&DMatrix::identity(3, 3), 1e-9).unwrap());
        assert!(!psd_check(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.1])), 1e-9).unwrap());
        assert!(psd_check(&DMatrix::zeros(4, 4), 1e-9).unwrap());
        assert!(psd_check(&DMatrix::zeros(2, 3), 1e-9).is_err());
    }

    #[test]
    fn inv_sqrt_examples() {
        let r = inv_sqrt(&(DMatrix::identity(2, 2) * 4.0), 1e-12).unwrap();
        assert_relative_eq!(r, DMatrix::identity(2, 2) * 0.5, epsilon = 1e-14);
        let r = inv_sqrt(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 9.0])), 1e-12).unwrap();
        assert_relative_eq!(r[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(r[(1, 1)], 1.0 / 3.0, epsilon = 1e-14);
        assert_relative_eq!(r[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn inv_sqrt_clamps_and_rejects() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1e-20]));
        let r = inv_sqrt(&m, 1e-6).unwrap();
        assert_relative_eq!(r[(1, 1)], 1e3, max_relative = 1e-10);
        let bad = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(inv_sqrt(&bad, 1e-6), Err(Error::NotPsd { .. })));
    }

    #[test]
    fn svec_positions() {
        assert_eq!(svec_index(0, 0), 0);
        assert_eq!(svec_index(0, 1), 1);
        assert_eq!(svec_index(1, 1), 2);
        assert_eq!(svec_index(2, 1), 4);
        assert_eq!(svec_dim(6), Some(3));
        assert_eq!(svec_dim(5), None);
    }

    #[test]
    fn range_basis_finds_rank() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let tall = DMatrix::from_fn(200, 7, |_, _| rng.random_range(-1.0..1.0));
        let wide = &tall * DMatrix::from_fn(7, 40, |_, _| rng.random_range(-1.0..1.0));
        let u = range_basis(&wide, 1e-10);
        assert_eq!(u.ncols(), 7);
        assert!((u.transpose() * &u - DMatrix::identity(7, 7)).norm() < 1e-10);
        assert!((&u * (u.transpose() * &wide) - &wide).norm() < 1e-8 * wide.norm());
        assert_eq!(range_basis(&DMatrix::zeros(5, 3), 1e-10).ncols(), 0);
    }

    #[test]
    fn psd_factor_reconstructs() {
        let a = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 1.0, -1.0, 3.0]);
        let t = &a * a.transpose();
        let f = psd_factor(&t);
        assert_eq!(f.nrows(), 2);
        assert_relative_eq!(f.transpose() * &f, t, epsilon = 1e-10);
    }
}
