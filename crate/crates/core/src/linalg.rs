//! Small dense linear-algebra helpers shared by the analysis modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Ascending eigenvalues and matching eigenvectors of a Hermitian matrix.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMatrix::from_fn(m.nrows(), order.len(), |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// Hermitian part `(M + M†)/2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()) * C64::new(0.5, 0.0)
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_hermitian_part_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(&hermitian_part(m)).into_iter().fold(f64::INFINITY, f64::min)
}

/// Largest singular value.
pub fn spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Orthonormal basis (as columns) of the null space of `m`, using
/// singular values below `rel_tol · σ_max` as the rank decision.
pub fn null_space(m: &CMatrix, rel_tol: f64) -> CMatrix {
    let n = m.ncols();
    // Pad to at least square so that the SVD returns a complete right basis.
    let rows = m.nrows().max(n);
    let mut padded = CMatrix::zeros(rows, n);
    padded.view_mut((0, 0), (m.nrows(), n)).copy_from(m);
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = rel_tol * smax;
    let keep: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] <= cut).collect();
    CMatrix::from_fn(n, keep.len(), |i, j| v_t[(keep[j], i)].conj())
}

/// Solves `m x = b` by LU, reporting a relative residual.
pub fn solve(m: &CMatrix, b: &CVector) -> Result<(CVector, f64)> {
    let lu = m.clone().lu();
    let x = lu.solve(b).ok_or(Error::Singular)?;
    let r = m * &x - b;
    let residual = r.norm() / b.norm().max(f64::MIN_POSITIVE);
    if !residual.is_finite() {
        return Err(Error::Singular);
    }
    Ok((x, residual))
}

fn to_faer(m: &CMatrix) -> faer::Mat<C64> {
    faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Solves `m X = B` for several right-hand sides with one partial-pivot LU.
/// Returns the solutions and the worst relative residual over the columns.
pub fn solve_many(m: &CMatrix, rhs: &CMatrix) -> Result<(CMatrix, f64)> {
    use faer::linalg::solvers::Solve;
    let fm = to_faer(m);
    let lu = fm.partial_piv_lu();
    let x = lu.solve(&to_faer(rhs));
    let out = CMatrix::from_fn(x.nrows(), x.ncols(), |i, j| x[(i, j)]);
    let r = m * &out - rhs;
    let mut worst: f64 = 0.0;
    for j in 0..rhs.ncols() {
        let scale = rhs.column(j).norm().max(f64::MIN_POSITIVE);
        worst = worst.max(r.column(j).norm() / scale);
    }
    if !worst.is_finite() {
        return Err(Error::Singular);
    }
    Ok((out, worst))
}

/// Ascending eigenvalues of a Hermitian matrix (only the lower triangle is read).
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    to_faer(m)
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .unwrap_or_else(|_| m.clone().symmetric_eigenvalues().iter().copied().collect())
}

/// Largest eigenvalue modulus of a real symmetric matrix.
pub fn symmetric_spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let fm = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    match fm.self_adjoint_eigenvalues(faer::Side::Lower) {
        Ok(v) => v.into_iter().fold(0.0, |a: f64, x| a.max(x.abs())),
        Err(_) => m.symmetric_eigenvalues().amax(),
    }
}

/// Lowest eigenvalue and a unit eigenvector of a real symmetric matrix.
pub fn symmetric_lowest(m: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let fm = faer::Mat::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    if let Ok(eig) = fm.self_adjoint_eigen(faer::Side::Lower) {
        let vals = eig.S().column_vector();
        let vecs = eig.U();
        // faer returns eigenvalues in ascending order.
        return (vals[0], (0..m.nrows()).map(|i| vecs[(i, 0)]).collect());
    }
    let eig = m.clone().symmetric_eigen();
    let k = eig.eigenvalues.imin();
    (eig.eigenvalues[k], eig.eigenvectors.column(k).iter().copied().collect())
}

/// Largest singular value of a complex matrix, computed densely.
pub fn dense_spectral_norm(m: &CMatrix) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    // The largest eigenvalue of the Gram matrix is much cheaper than a full SVD.
    let a = to_faer(m);
    let gram = a.adjoint() * &a;
    match gram.self_adjoint_eigenvalues(faer::Side::Lower) {
        Ok(v) => v.into_iter().fold(0.0, f64::max).sqrt(),
        Err(_) => spectral_norm(m),
    }
}

/// Value at zero of the polynomial through the points `(xs, ys)`.
pub fn extrapolate_to_zero(xs: &[f64], ys: &[C64]) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for (i, (&xi, &yi)) in xs.iter().zip(ys).enumerate() {
        let mut w = 1.0;
        for (j, &xj) in xs.iter().enumerate() {
            if i != j {
                w *= xj / (xj - xi);
            }
        }
        acc += yi * w;
    }
    acc
}

/// Result of a weighted straight-line fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LineFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept_stderr: f64,
    /// Reduced chi-square of the residuals.
    pub chi2_red: f64,
}

/// Weighted least squares `y ≈ a + b x` with weights `w` (inverse variances).
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> LineFit {
    let sw: f64 = w.iter().sum();
    let sx: f64 = w.iter().zip(x).map(|(w, x)| w * x).sum();
    let sy: f64 = w.iter().zip(y).map(|(w, y)| w * y).sum();
    let sxx: f64 = w.iter().zip(x).map(|(w, x)| w * x * x).sum();
    let sxy: f64 = w.iter().zip(x).zip(y).map(|((w, x), y)| w * x * y).sum();
    let det = sw * sxx - sx * sx;
    let slope = (sw * sxy - sx * sy) / det;
    let intercept = (sxx * sy - sx * sxy) / det;
    let chi2: f64 = w
        .iter()
        .zip(x)
        .zip(y)
        .map(|((w, x), y)| w * (y - intercept - slope * x).powi(2))
        .sum();
    let dof = (x.len() as f64 - 2.0).max(1.0);
    LineFit {
        intercept,
        slope,
        slope_stderr: (sw / det).sqrt(),
        intercept_stderr: (sxx / det).sqrt(),
        chi2_red: chi2 / dof,
    }
}

/// Ordinary least squares for `y ≈ Σ_k c_k f_k(x)` with the design matrix given column-wise.
pub fn least_squares(design: &DMatrix<f64>, y: &[f64]) -> Option<DVector<f64>> {
    let yv = DVector::from_column_slice(y);
    let normal = design.transpose() * design;
    let rhs = design.transpose() * yv;
    normal.cholesky().map(|c| c.solve(&rhs))
}

/// Largest singular value estimated by power iteration on `M†M`.
pub fn power_norm(apply: impl Fn(&CVector) -> CVector, apply_adj: impl Fn(&CVector) -> CVector, n: usize, iters: usize) -> f64 {
    let mut v = CVector::from_fn(n, |i, _| C64::new(1.0 + (i as f64 * 0.618).sin() * 0.1, 0.0));
    v /= C64::new(v.norm(), 0.0);
    let mut est = 0.0;
    for _ in 0..iters {
        let w = apply_adj(&apply(&v));
        let nw = w.norm();
        if nw == 0.0 {
            return 0.0;
        }
        est = nw.sqrt();
        v = w / C64::new(nw, 0.0);
    }
    est
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extrapolation_is_exact_for_quadratics() {
        let xs = [0.4, 0.2, 0.1];
        let ys: Vec<C64> = xs.iter().map(|&x| C64::new(2.0 + 3.0 * x - x * x, 0.0)).collect();
        assert!((extrapolate_to_zero(&xs, &ys) - 2.0).norm() < 1e-12);
    }

    #[test]
    fn line_fit_recovers_line() {
        let x: Vec<f64> = (0..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|x| 1.0 + 2.0 * x).collect();
        let f = weighted_line_fit(&x, &y, &vec![1.0; 10]);
        assert!((f.slope - 2.0).abs() < 1e-12);
        assert!((f.intercept - 1.0).abs() < 1e-12);
    }

    #[test]
    fn null_space_of_rank_one() {
        let m = CMatrix::from_fn(1, 3, |_, j| C64::new(1.0 + j as f64, 0.0));
        let n = null_space(&m, 1e-10);
        assert_eq!(n.ncols(), 2);
        assert!((&m * &n).norm() < 1e-12);
    }

    #[test]
    fn eigen_sorted() {
        let m = CMatrix::from_diagonal(&CVector::from_vec(vec![C64::new(3.0, 0.0), C64::new(-1.0, 0.0), C64::new(2.0, 0.0)]));
        let (v, _) = hermitian_eigen(&m);
        assert_eq!(v, vec![-1.0, 2.0, 3.0]);
    }

    #[test]
    fn solve_many_matches_lu() {
        let m = CMatrix::from_fn(5, 5, |i, j| C64::new(if i == j { 4.0 } else { 0.3 * (i + 2 * j) as f64 % 1.0 }, 0.1 * i as f64));
        let b = CMatrix::from_fn(5, 2, |i, j| C64::new(i as f64 - j as f64, 1.0));
        let (x, res) = solve_many(&m, &b).unwrap();
        assert!(res < 1e-12);
        let (x0, _) = solve(&m, &b.column(1).into_owned()).unwrap();
        assert!((x.column(1) - x0).norm() < 1e-12);
    }

    #[test]
    fn fast_eigenvalues_match() {
        let a = CMatrix::from_fn(6, 6, |i, j| C64::new(((i * 7 + j * 3) % 5) as f64, (i as f64 - j as f64) * 0.2));
        let h = hermitian_part(&a);
        let (v, _) = hermitian_eigen(&h);
        let w = hermitian_eigenvalues(&h);
        for (p, q) in v.iter().zip(&w) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn lowest_and_dense_norm() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let (v, w) = symmetric_lowest(&m);
        assert!((v - 1.0).abs() < 1e-12);
        assert!((w[0] + w[1]).abs() < 1e-12);
        let c = CMatrix::from_fn(3, 3, |i, j| C64::new((i + j) as f64, i as f64 - j as f64));
        assert!((dense_spectral_norm(&c) - spectral_norm(&c)).abs() < 1e-10);
    }

    #[test]
    fn power_norm_matches_svd() {
        let m = CMatrix::from_fn(4, 4, |i, j| C64::new((i * 3 + j) as f64 % 5.0 - 2.0, (i + j) as f64 * 0.1));
        let p = power_norm(|v| &m * v, |v| m.adjoint() * v, 4, 500);
        assert!((p - spectral_norm(&m)).abs() < 1e-8);
    }
}
