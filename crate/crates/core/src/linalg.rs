//! Dense linear-algebra helpers shared by the data and oracle layers.
//!
//! Singular values below `max(rows, cols) * sigma_max * rel_tol` are treated as
//! zero, both for numerical rank and for the pseudoinverse.

use nalgebra::linalg::Schur;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

/// Default relative tolerance of the rank / pseudoinverse threshold.
pub const RANK_TOL: f64 = 1e-12;

/// Rank, threshold and extreme singular values of a matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RankInfo {
    pub rank: usize,
    pub threshold: f64,
    pub sigma_max: f64,
    /// Smallest of the `min(rows, cols)` singular values.
    pub sigma_min: f64,
}

fn threshold(rows: usize, cols: usize, sigma_max: f64, rel_tol: f64) -> f64 {
    rows.max(cols) as f64 * sigma_max * rel_tol
}

pub fn rank_info(m: &DMatrix<f64>, rel_tol: f64) -> RankInfo {
    if m.is_empty() {
        return RankInfo {
            rank: 0,
            threshold: 0.0,
            sigma_max: 0.0,
            sigma_min: 0.0,
        };
    }
    let sv = m.singular_values();
    let sigma_max = sv.max();
    let sigma_min = sv.min();
    let thr = threshold(m.nrows(), m.ncols(), sigma_max, rel_tol);
    let rank = sv.iter().filter(|&&s| s > thr && s > 0.0).count();
    RankInfo {
        rank,
        threshold: thr,
        sigma_max,
        sigma_min,
    }
}

pub fn rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    rank_info(m, rel_tol).rank
}

/// Moore–Penrose pseudoinverse through the SVD.
pub fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    let (r, c) = m.shape();
    if m.is_empty() {
        return DMatrix::zeros(c, r);
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd computed with u");
    let vt = svd.v_t.as_ref().expect("svd computed with v_t");
    let sigma_max = svd.singular_values.max();
    let thr = threshold(r, c, sigma_max, rel_tol);
    let mut out = DMatrix::zeros(c, r);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > thr && s > 0.0 {
            // out += v_k * u_k^T / s
            let vk = vt.row(k).transpose();
            let uk = u.column(k);
            out += (vk * uk.transpose()) / s;
        }
    }
    out
}

/// Thin SVD restricted to the numerically nonzero singular values:
/// `m ≈ u * diag(s) * v^T` with `u: rows×r`, `v: cols×r`.
pub fn thin_svd(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, DVector<f64>, DMatrix<f64>) {
    let (r, c) = m.shape();
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd computed with u");
    let vt = svd.v_t.expect("svd computed with v_t");
    let sigma_max = svd.singular_values.max();
    let thr = threshold(r, c, sigma_max, rel_tol);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > thr && svd.singular_values[k] > 0.0)
        .collect();
    let u1 = u.select_columns(keep.iter());
    let s1 = DVector::from_iterator(keep.len(), keep.iter().map(|&k| svd.singular_values[k]));
    let v1 = vt.select_rows(keep.iter()).transpose();
    (u1, s1, v1)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Eigenvalues of the symmetric part, ascending.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    if m.is_empty() {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrize(m)).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn min_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).first().copied().unwrap_or(f64::INFINITY)
}

pub fn max_sym_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Symmetric square root of a positive semidefinite matrix (negative
/// eigenvalues from roundoff are clipped to zero).
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let d = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

/// Eigenvalues of a square matrix through the real Schur form.
///
/// The QR iteration can stall on some inputs (the zero matrix among them),
/// in which case it is rerun on shifted copies `M + cI`.
pub fn eigenvalues(m: &DMatrix<f64>) -> Vec<Complex64> {
    let n = m.nrows();
    if n == 0 {
        return Vec::new();
    }
    if m.amax() == 0.0 {
        return vec![Complex64::new(0.0, 0.0); n];
    }
    let scale = m.norm();
    for c in [0.0, 0.371, -0.613, 1.137, -1.529] {
        let shifted = m + DMatrix::identity(n, n) * (c * scale);
        if let Some(schur) = Schur::try_new(shifted, f64::EPSILON, 10_000) {
            return schur.complex_eigenvalues().iter().map(|z| z - c * scale).collect();
        }
    }
    vec![Complex64::new(f64::NAN, f64::NAN); n]
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    eigenvalues(m).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Largest real part among the eigenvalues of a square matrix.
pub fn spectral_abscissa(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return f64::NEG_INFINITY;
    }
    eigenvalues(m).iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max)
}

/// Stack matrices with equal column counts on top of each other.
pub fn vstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r0 = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vstack: column counts differ");
        out.view_mut((r0, 0), b.shape()).copy_from(b);
        r0 += b.nrows();
    }
    out
}

/// Place matrices with equal row counts side by side.
pub fn hstack(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map_or(0, |b| b.nrows());
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hstack: row counts differ");
        out.view_mut((0, c0), b.shape()).copy_from(b);
        c0 += b.ncols();
    }
    out
}

/// Build a matrix from row slices.
pub fn from_rows(rows: &[&[f64]]) -> DMatrix<f64> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    DMatrix::from_fn(r, c, |i, j| rows[i][j])
}

/// Matrix rows as nested vectors (row-major), for serialization.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// Columns of a sample sequence as a matrix `[z(0) z(1) ... ]`.
pub fn columns(samples: &[DVector<f64>]) -> DMatrix<f64> {
    let rows = samples.first().map_or(0, |s| s.len());
    DMatrix::from_fn(rows, samples.len(), |i, j| samples[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_of_full_row_rank_is_right_inverse() {
        let m = from_rows(&[&[1.0, 2.0, 0.5], &[0.0, 1.0, -1.0]]);
        let p = pinv(&m, RANK_TOL);
        let id = &m * &p;
        assert!((id - DMatrix::identity(2, 2)).norm() < 1e-12);
    }

    #[test]
    fn rank_of_duplicated_rows() {
        let m = from_rows(&[&[1.0, 0.0, 2.0], &[1.0, 0.0, 2.0]]);
        assert_eq!(rank(&m, RANK_TOL), 1);
        assert_eq!(rank(&DMatrix::zeros(3, 4), RANK_TOL), 0);
    }

    #[test]
    fn thin_svd_reconstructs() {
        let m = from_rows(&[&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0], &[0.0, 1.0, 1.0]]);
        let (u, s, v) = thin_svd(&m, RANK_TOL);
        assert_eq!(s.len(), 2);
        let rec = u * DMatrix::from_diagonal(&s) * v.transpose();
        assert!((rec - m).norm() < 1e-12);
    }

    #[test]
    fn psd_sqrt_squares_back() {
        let m = from_rows(&[&[2.0, 1.0], &[1.0, 2.0]]);
        let s = psd_sqrt(&m);
        assert!((&s * &s - m).norm() < 1e-12);
    }
}
