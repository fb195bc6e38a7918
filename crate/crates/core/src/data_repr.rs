//! Open-loop and closed-loop system representations built from data alone.

use nalgebra::DMatrix;

use crate::error::{dims, Error, Result};
use crate::hankel::HankelBlock;
use crate::linalg::{pinv, spectral_radius, thin_svd, vstack};

/// One-step predictor `x(k+1) = M (u(k); x(k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct OpenLoopPredictor {
    pub m: DMatrix<f64>,
    inputs: usize,
}

impl OpenLoopPredictor {
    /// Estimated input matrix.
    pub fn b_hat(&self) -> DMatrix<f64> {
        self.m.columns(0, self.inputs).into_owned()
    }

    /// Estimated state matrix.
    pub fn a_hat(&self) -> DMatrix<f64> {
        self.m.columns(self.inputs, self.m.ncols() - self.inputs).into_owned()
    }
}

fn require_rank(h: &HankelBlock, rel_tol: f64) -> Result<()> {
    if h.m() == 0 {
        return Err(dims("input data", "m ≥ 1 input rows", 0));
    }
    h.rank_condition(rel_tol).into_result().map(|_| ())
}

/// `M = X1 [U0; X0]†`.
pub fn open_loop_predictor(h: &HankelBlock, rel_tol: f64) -> Result<OpenLoopPredictor> {
    require_rank(h, rel_tol)?;
    Ok(OpenLoopPredictor {
        m: &h.x1 * pinv(&h.stacked(), rel_tol),
        inputs: h.m(),
    })
}

/// `M = X1 V₁ Σ⁻¹ U₁ᵀ` from the thin SVD of `[U0; X0]`.
pub fn dmd_predictor(h: &HankelBlock, rel_tol: f64) -> Result<OpenLoopPredictor> {
    require_rank(h, rel_tol)?;
    let (u1, s, v1) = thin_svd(&h.stacked(), rel_tol);
    let mut xv = &h.x1 * v1;
    for (j, sj) in s.iter().enumerate() {
        xv.column_mut(j).unscale_mut(*sj);
    }
    Ok(OpenLoopPredictor {
        m: xv * u1.transpose(),
        inputs: h.m(),
    })
}

/// Closed loop under `u = K x` written through data: `A + BK = X1 G_K`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainParametrization {
    pub k: DMatrix<f64>,
    pub g_k: DMatrix<f64>,
    pub closed_loop: DMatrix<f64>,
}

/// Minimum-norm `G_K` with `[U0; X0] G_K = [K; I]`.
pub fn gk_for_gain(h: &HankelBlock, k: &DMatrix<f64>, rel_tol: f64) -> Result<GainParametrization> {
    require_rank(h, rel_tol)?;
    let (n, m) = (h.n(), h.m());
    if k.shape() != (m, n) {
        return Err(dims("gain K", format!("{m}×{n}"), format!("{:?}", k.shape())));
    }
    let rhs = vstack(&[k, &DMatrix::identity(n, n)]);
    let g_k = pinv(&h.stacked(), rel_tol) * rhs;
    let closed_loop = &h.x1 * &g_k;
    Ok(GainParametrization {
        k: k.clone(),
        g_k,
        closed_loop,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainCheck {
    pub spectral_radius: f64,
    pub stabilizing: bool,
}

/// Stability of `A + BK` decided from data: `ρ(X1 G_K) < 1 − margin`.
pub fn verify_gain(h: &HankelBlock, k: &DMatrix<f64>, margin: f64, rel_tol: f64) -> Result<GainCheck> {
    let gp = gk_for_gain(h, k, rel_tol)?;
    let rho = spectral_radius(&gp.closed_loop);
    if !rho.is_finite() {
        return Err(Error::Singular("data-based closed loop"));
    }
    Ok(GainCheck {
        spectral_radius: rho,
        stabilizing: rho < 1.0 - margin,
    })
}
