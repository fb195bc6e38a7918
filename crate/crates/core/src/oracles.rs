//! Model-based reference computations used to certify designs.
//!
//! These need the true plant matrices, so design routines never call them.

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{dims, Error, Result};
use crate::linalg::{psd_sqrt, symmetrize, vstack};

pub use crate::linalg::{spectral_abscissa, spectral_radius};

pub const DARE_MAX_ITER: usize = 100_000;

#[derive(Debug, Clone)]
pub struct DareSolution {
    pub x: DMatrix<f64>,
    /// `K = −(R + BᵀXB)⁻¹ BᵀXA`, so that `u = K x`.
    pub k: DMatrix<f64>,
    pub iterations: usize,
    /// Frobenius norm of the Riccati equation residual.
    pub residual: f64,
}

fn check_square(context: &'static str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(dims(context, format!("{n}×{n}"), format!("{:?}", m.shape())));
    }
    Ok(())
}

fn riccati_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, r: &DMatrix<f64>, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let btx = b.transpose() * x;
    let lhs = r + &btx * b;
    let rhs = &btx * a;
    let k = lhs
        .cholesky()
        .map(|c| c.solve(&rhs))
        .or_else(|| (r + &btx * b).lu().solve(&rhs))
        .ok_or(Error::Singular("R + BᵀXB"))?;
    Ok(-k)
}

/// `AᵀXA − X − AᵀXB(R + BᵀXB)⁻¹BᵀXA + Qx`.
pub fn riccati_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    qx: &DMatrix<f64>,
    r: &DMatrix<f64>,
    x: &DMatrix<f64>,
) -> Result<f64> {
    let k = riccati_gain(a, b, r, x)?;
    // AᵀXB (R+BᵀXB)⁻¹ BᵀXA = −AᵀXB K
    let atx = a.transpose() * x;
    let res = &atx * a - x + &atx * b * &k + qx;
    Ok(res.norm())
}

/// Discrete algebraic Riccati equation by value iteration from `X₀ = Qx`.
pub fn dare(a: &DMatrix<f64>, b: &DMatrix<f64>, qx: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DareSolution> {
    let n = a.nrows();
    check_square("dare A", a, n)?;
    if b.nrows() != n {
        return Err(dims("dare B", format!("{n} rows"), b.nrows()));
    }
    check_square("dare Qx", qx, n)?;
    check_square("dare R", r, b.ncols())?;
    let mut x = symmetrize(qx);
    for it in 1..=DARE_MAX_ITER {
        let k = riccati_gain(a, b, r, &x)?;
        let atx = a.transpose() * &x;
        let next = symmetrize(&(&atx * a + &atx * b * &k + qx));
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::NotConverged(it));
        }
        let step = (&next - &x).norm();
        let scale = x.norm();
        x = next;
        if !(scale.is_finite() && step.is_finite()) {
            return Err(Error::NotConverged(it));
        }
        if step <= 1e-12 * scale || step == 0.0 {
            let k = riccati_gain(a, b, r, &x)?;
            let residual = riccati_residual(a, b, qx, r, &x)?;
            let rho = spectral_radius(&(a + b * &k));
            if !(rho < 1.0) {
                return Err(Error::Unstable(rho));
            }
            return Ok(DareSolution {
                x,
                k,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NotConverged(DARE_MAX_ITER))
}

/// Solution of the Stein equation `A W Aᵀ − W + Q = 0`, summed as
/// `Σ Aᵏ Q Aᵏᵀ` with repeated squaring.
pub fn stein(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    check_square("stein A", a, n)?;
    check_square("stein Q", q, n)?;
    let rho = spectral_radius(a);
    if !(rho < 1.0) {
        return Err(Error::Unstable(rho));
    }
    let mut w = q.clone();
    let mut pow = a.clone();
    for it in 0..200 {
        let inc = &pow * &w * pow.transpose();
        let done = inc.norm() <= 1e-14 * w.norm();
        w += inc;
        if done {
            return Ok(symmetrize(&w));
        }
        pow = &pow * &pow;
        if !pow.iter().all(|v| v.is_finite()) {
            return Err(Error::NotConverged(it));
        }
    }
    Err(Error::NotConverged(200))
}

/// Closed-loop controllability Gramian: `A W Aᵀ − W + I = 0`.
pub fn dlyap(a_cl: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a_cl.nrows();
    stein(a_cl, &DMatrix::identity(n, n))
}

pub fn stein_residual(a: &DMatrix<f64>, q: &DMatrix<f64>, w: &DMatrix<f64>) -> f64 {
    (a * w * a.transpose() - w + q).norm()
}

fn check_h2_args(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    qx: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<()> {
    let n = a.nrows();
    check_square("h2 A", a, n)?;
    let m = b.ncols();
    if b.nrows() != n {
        return Err(dims("h2 B", format!("{n} rows"), b.nrows()));
    }
    if k.shape() != (m, n) {
        return Err(dims("h2 K", format!("{m}×{n}"), format!("{:?}", k.shape())));
    }
    check_square("h2 Qx", qx, n)?;
    check_square("h2 R", r, m)
}

/// `trace(Qx W_c) + trace(R^{1/2} K W_c Kᵀ R^{1/2})` for `A_cl = A + BK`.
pub fn lqr_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    qx: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<f64> {
    check_h2_args(a, b, k, qx, r)?;
    let wc = dlyap(&(a + b * k))?;
    Ok((qx * &wc).trace() + (k.transpose() * r * k * &wc).trace())
}

/// H2 norm from unit white state noise to `z = (Qx^{1/2} x, R^{1/2} u)` under `u = K x`.
pub fn h2_norm(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    qx: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<f64> {
    Ok(lqr_cost(a, b, k, qx, r)?.max(0.0).sqrt())
}

/// Same quantity as [`h2_norm`] from the frequency-domain definition,
/// integrated with the trapezoid rule on `points` equispaced frequencies.
pub fn h2_norm_frequency(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: &DMatrix<f64>,
    qx: &DMatrix<f64>,
    r: &DMatrix<f64>,
    points: usize,
) -> Result<f64> {
    check_h2_args(a, b, k, qx, r)?;
    let n = a.nrows();
    let a_cl = a + b * k;
    let rho = spectral_radius(&a_cl);
    if !(rho < 1.0) {
        return Err(Error::Unstable(rho));
    }
    let out = vstack(&[&psd_sqrt(qx), &(psd_sqrt(r) * k)]).map(|v| Complex64::new(v, 0.0));
    let a_c = a_cl.map(|v| Complex64::new(v, 0.0));
    let mut sum = 0.0;
    for i in 0..points {
        let theta = 2.0 * std::f64::consts::PI * i as f64 / points as f64;
        let z = Complex64::from_polar(1.0, theta);
        let resolvent = (DMatrix::<Complex64>::identity(n, n) * z - &a_c)
            .try_inverse()
            .ok_or(Error::Singular("zI − A_cl on the unit circle"))?;
        sum += (&out * resolvent).iter().map(|c| c.norm_sqr()).sum::<f64>();
    }
    Ok((sum / points as f64).sqrt())
}

/// Smallest `γ` with `P ⪯ γ S`, that is the largest generalized eigenvalue
/// of `(P, S)` on the range of `S`; `+∞` when `P` reaches outside it.
pub fn min_gamma(p: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    let n = s.nrows();
    check_square("min_gamma S", s, n)?;
    check_square("min_gamma P", p, n)?;
    let p = symmetrize(p);
    let scale_p = p.amax();
    if scale_p == 0.0 {
        return Ok(0.0);
    }
    let eig = SymmetricEigen::new(symmetrize(s));
    let lmax = eig.eigenvalues.amax();
    let tol = n as f64 * lmax * 1e-12;
    let range: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] > tol).collect();
    let null: Vec<usize> = (0..n).filter(|&i| eig.eigenvalues[i] <= tol).collect();
    if !null.is_empty() {
        let v0 = eig.eigenvectors.select_columns(null.iter());
        let outside = (v0.transpose() * &p * &v0).amax();
        if outside > 1e-12 * scale_p.max(lmax) * n as f64 {
            return Ok(f64::INFINITY);
        }
    }
    if range.is_empty() {
        return Ok(f64::INFINITY);
    }
    let v1 = eig.eigenvectors.select_columns(range.iter());
    let inv_sqrt = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        range.len(),
        range.iter().map(|&i| 1.0 / eig.eigenvalues[i].sqrt()),
    ));
    let reduced = &inv_sqrt * v1.transpose() * &p * &v1 * &inv_sqrt;
    Ok(crate::linalg::max_sym_eigenvalue(&reduced).max(0.0))
}
