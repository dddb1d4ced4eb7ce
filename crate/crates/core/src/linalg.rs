//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

pub const RANK_TOL: f64 = 1e-10;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `m += scale * x xᵀ`
pub fn add_outer(m: &mut DMatrix<f64>, x: &[f64], scale: f64) {
    let d = x.len();
    for i in 0..d {
        let xi = scale * x[i];
        if xi == 0.0 {
            continue;
        }
        for j in 0..d {
            m[(i, j)] += xi * x[j];
        }
    }
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Orthonormal basis (columns) of the row span of `rows`, keeping singular
/// values above `rel_tol * σ_max`.
pub fn row_span_basis(rows: &[&[f64]], dim: usize, rel_tol: f64) -> DMatrix<f64> {
    if rows.is_empty() || dim == 0 {
        return DMatrix::zeros(dim, 0);
    }
    let x = DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j]);
    // thin SVD needs nrows >= 1; nalgebra handles wide matrices too
    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    if smax == 0.0 {
        return DMatrix::zeros(dim, 0);
    }
    let keep: Vec<usize> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > rel_tol * smax)
        .map(|(i, _)| i)
        .collect();
    DMatrix::from_fn(dim, keep.len(), |r, c| v_t[(keep[c], r)])
}

/// Pseudo-inverse of a symmetric PSD matrix restricted to eigenvalues above
/// `rel_tol * λ_max`.
pub fn pinv_sym(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::max);
    let mut out = DMatrix::zeros(n, n);
    if lmax <= 0.0 {
        return out;
    }
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        if l > rel_tol * lmax {
            let u = eig.eigenvectors.column(k);
            out += (u * u.transpose()) / l;
        }
    }
    out
}

/// Inverse square root of a symmetric positive definite matrix. Returns
/// `None` when the smallest eigenvalue is not safely positive.
pub fn inv_sqrt_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let eig = SymmetricEigen::new(m.clone());
    let lmax = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(lmin > 0.0) || lmin <= 1e-15 * lmax.max(f64::MIN_POSITIVE) {
        return None;
    }
    let mut out = DMatrix::zeros(n, n);
    for (k, &l) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(k);
        out += (u * u.transpose()) / l.sqrt();
    }
    Some(out)
}

pub fn max_eigenvalue_sym(m: &DMatrix<f64>) -> f64 {
    let mut s = m.clone();
    symmetrize(&mut s);
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for i in 0..n {
        if x[i] == 0.0 {
            continue;
        }
        let mut row = 0.0;
        for j in 0..n {
            row += m[(i, j)] * x[j];
        }
        acc += x[i] * row;
    }
    acc
}

pub fn to_dvector(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn span_basis_of_rank_one_set() {
        let a = [1.0, 1.0, 0.0];
        let b = [-2.0, -2.0, 0.0];
        let basis = row_span_basis(&[&a, &b], 3, RANK_TOL);
        assert_eq!(basis.ncols(), 1);
        let u = basis.column(0);
        assert!((u[0].abs() - 0.5_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn inverse_sqrt_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let r = inv_sqrt_spd(&m).unwrap();
        assert!((r[(0, 0)] - 0.5).abs() < 1e-14);
        assert!((r[(1, 1)] - 1.0 / 3.0).abs() < 1e-14);
        assert!(inv_sqrt_spd(&DMatrix::zeros(2, 2)).is_none());
    }

    #[test]
    fn pseudo_inverse_on_span() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let p = pinv_sym(&m, RANK_TOL);
        assert!((p[(0, 0)] - 0.5).abs() < 1e-14);
        assert_eq!(p[(1, 1)], 0.0);
    }
}
