//! Hankel data matrices, Toeplitz/observability matrices and the
//! persistency-of-excitation and rank checks built on them.

use nalgebra::{DMatrix, DVector};

use crate::error::{dims, Error, Result};
use crate::linalg::{self, columns, pinv, rank_info, vstack};
use crate::lti_sim::{LtiSystem, Trajectory};

/// Stacked window `z_{[k, k+len]} = col(z(k), …, z(k+len))`.
pub fn restrict(signal: &[DVector<f64>], k: usize, len: usize) -> Result<DVector<f64>> {
    let end = k + len;
    if end >= signal.len() {
        return Err(Error::WindowOutOfRange {
            start: k as i64,
            end: end as i64,
            first: 0,
            last: signal.len() as i64 - 1,
        });
    }
    let sigma = signal[0].len();
    let mut out = DVector::zeros(sigma * (len + 1));
    for (j, z) in signal[k..=end].iter().enumerate() {
        out.rows_mut(j * sigma, sigma).copy_from(z);
    }
    Ok(out)
}

/// Hankel matrix `Z_{i,t,N}` (σt × N) whose block `(r, c)` is `z(i + r + c)`.
pub fn build_hankel(signal: &[DVector<f64>], i: usize, t: usize, n_cols: usize) -> Result<DMatrix<f64>> {
    if t == 0 || n_cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "Hankel matrix needs t ≥ 1 and N ≥ 1, got t={t}, N={n_cols}"
        )));
    }
    let last = i + t + n_cols - 2;
    if last >= signal.len() {
        return Err(Error::WindowOutOfRange {
            start: i as i64,
            end: last as i64,
            first: 0,
            last: signal.len() as i64 - 1,
        });
    }
    let sigma = signal[0].len();
    let mut h = DMatrix::zeros(sigma * t, n_cols);
    for r in 0..t {
        for c in 0..n_cols {
            h.view_mut((r * sigma, c), (sigma, 1)).copy_from(&signal[i + r + c]);
        }
    }
    Ok(h)
}

/// Outcome of [`is_persistently_exciting`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExcitationCheck {
    pub verdict: bool,
    pub rank: usize,
    pub min_singular_value: f64,
}

/// Whether `Z_{0,L,T−L+1}` has full row rank `σL`. Short signals simply fail.
pub fn is_persistently_exciting(signal: &[DVector<f64>], order: usize, rel_tol: f64) -> ExcitationCheck {
    let len = signal.len();
    let fail = ExcitationCheck {
        verdict: false,
        rank: 0,
        min_singular_value: 0.0,
    };
    if order == 0 || len < order {
        return fail;
    }
    let Ok(h) = build_hankel(signal, 0, order, len - order + 1) else {
        return fail;
    };
    let info = rank_info(&h, rel_tol);
    ExcitationCheck {
        verdict: info.rank == h.nrows(),
        rank: info.rank,
        min_singular_value: if h.nrows() <= h.ncols() { info.sigma_min } else { 0.0 },
    }
}

/// Outcome of a full-row-rank check on stacked data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct RankCheck {
    pub verdict: bool,
    pub rank: usize,
    pub required: usize,
}

impl RankCheck {
    pub fn into_result(self) -> Result<Self> {
        if self.verdict {
            Ok(self)
        } else {
            Err(Error::RankCondition {
                rank: self.rank,
                required: self.required,
            })
        }
    }
}

/// `rank [U0; X0] = rows(U0) + rows(X0)` (that is, `n + tm`).
pub fn check_rank_condition(u0: &DMatrix<f64>, x0: &DMatrix<f64>, rel_tol: f64) -> Result<RankCheck> {
    if u0.ncols() != x0.ncols() {
        return Err(dims(
            "rank condition",
            format!("{} columns", u0.ncols()),
            format!("{} columns", x0.ncols()),
        ));
    }
    Ok(full_row_rank(&vstack(&[u0, x0]), rel_tol))
}

pub fn full_row_rank(m: &DMatrix<f64>, rel_tol: f64) -> RankCheck {
    let rank = linalg::rank(m, rel_tol);
    RankCheck {
        verdict: rank == m.nrows(),
        rank,
        required: m.nrows(),
    }
}

/// Toeplitz matrix `𝒯_t` (tp × tm) and observability matrix `𝒪_t` (tp × n).
pub fn build_toeplitz_observability(sys: &LtiSystem, t: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if t == 0 {
        return Err(Error::InvalidArgument("order t must be ≥ 1".into()));
    }
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    // Markov parameters C A^j B and powers C A^j.
    let mut ca = Vec::with_capacity(t);
    let mut cur = sys.c.clone();
    for _ in 0..t {
        ca.push(cur.clone());
        cur = &cur * &sys.a;
    }
    let mut toeplitz = DMatrix::zeros(t * p, t * m);
    let mut obs = DMatrix::zeros(t * p, n);
    for i in 0..t {
        obs.view_mut((i * p, 0), (p, n)).copy_from(&ca[i]);
        for j in 0..=i {
            let blk = if i == j { sys.d.clone() } else { &ca[i - j - 1] * &sys.b };
            toeplitz.view_mut((i * p, j * m), (p, m)).copy_from(&blk);
        }
    }
    Ok((toeplitz, obs))
}

/// Minimum-norm coefficient vector of `H g = target` and its residual.
#[derive(Debug, Clone)]
pub struct LemmaSolution {
    pub g: DVector<f64>,
    pub residual: f64,
}

pub fn fundamental_lemma_solve(h: &DMatrix<f64>, target: &DVector<f64>, rel_tol: f64) -> Result<LemmaSolution> {
    if h.ncols() == 0 {
        return Err(Error::InvalidArgument("data matrix has no columns".into()));
    }
    if h.nrows() != target.len() {
        return Err(dims("fundamental lemma target", h.nrows(), target.len()));
    }
    let g = pinv(h, rel_tol) * target;
    let residual = (h * &g - target).norm();
    Ok(LemmaSolution { g, residual })
}

/// Stacked input/output Hankel matrix `[U_{0,t,T−t+1}; Y_{0,t,T−t+1}]`.
pub fn io_hankel(u: &[DVector<f64>], y: &[DVector<f64>], t: usize) -> Result<DMatrix<f64>> {
    if u.len() != y.len() || u.len() < t {
        return Err(dims(
            "io Hankel",
            "equal lengths ≥ t",
            format!("{} vs {}", u.len(), y.len()),
        ));
    }
    let n_cols = u.len() - t + 1;
    Ok(vstack(&[
        &build_hankel(u, 0, t, n_cols)?,
        &build_hankel(y, 0, t, n_cols)?,
    ]))
}

/// Input/state data `U_{0,1,T}`, `X_{0,T}`, `X_{1,T}` of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct HankelBlock {
    pub u0: DMatrix<f64>,
    pub x0: DMatrix<f64>,
    pub x1: DMatrix<f64>,
}

impl HankelBlock {
    pub fn new(u0: DMatrix<f64>, x0: DMatrix<f64>, x1: DMatrix<f64>) -> Result<Self> {
        let t = u0.ncols();
        if x0.ncols() != t || x1.ncols() != t {
            return Err(dims(
                "HankelBlock",
                format!("{t} columns"),
                format!("{} and {}", x0.ncols(), x1.ncols()),
            ));
        }
        if x0.nrows() != x1.nrows() {
            return Err(dims("HankelBlock", format!("{} state rows", x0.nrows()), x1.nrows()));
        }
        Ok(Self { u0, x0, x1 })
    }

    /// From the recorded states of a trajectory.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let states = traj
            .states
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("trajectory has no state channel".into()))?;
        Self::from_samples(&traj.inputs, states)
    }

    /// Deviation data `(δu, δx)` around an equilibrium.
    pub fn from_deviation(traj: &Trajectory, x_eq: &DVector<f64>, u_eq: &DVector<f64>) -> Result<Self> {
        let states = traj
            .states
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("trajectory has no state channel".into()))?;
        let du: Vec<_> = traj.inputs.iter().map(|u| u - u_eq).collect();
        let dx: Vec<_> = states.iter().map(|x| x - x_eq).collect();
        Self::from_samples(&du, &dx)
    }

    /// `inputs` holds `T` samples and `states` holds `T + 1`.
    pub fn from_samples(inputs: &[DVector<f64>], states: &[DVector<f64>]) -> Result<Self> {
        let t = inputs.len();
        if t == 0 || states.len() != t + 1 {
            return Err(dims("HankelBlock samples", format!("{} states", t + 1), states.len()));
        }
        Self::new(columns(inputs), columns(&states[..t]), columns(&states[1..]))
    }

    pub fn n(&self) -> usize {
        self.x0.nrows()
    }

    pub fn m(&self) -> usize {
        self.u0.nrows()
    }

    pub fn samples(&self) -> usize {
        self.u0.ncols()
    }

    /// `[U0; X0]`.
    pub fn stacked(&self) -> DMatrix<f64> {
        vstack(&[&self.u0, &self.x0])
    }

    pub fn rank_condition(&self, rel_tol: f64) -> RankCheck {
        full_row_rank(&self.stacked(), rel_tol)
    }
}

/// Noise realisation `W_{0,T}`, `W_{1,T}` recorded by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBlocks {
    pub w0: DMatrix<f64>,
    pub w1: DMatrix<f64>,
}

/// Noisy state data `U_{0,1,T}`, `Z_{0,T} = X_{0,T} + W_{0,T}`, `Z_{1,T}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyHankelBlock {
    pub u0: DMatrix<f64>,
    pub z0: DMatrix<f64>,
    pub z1: DMatrix<f64>,
    /// Test-only knowledge of the noise.
    pub noise: Option<NoiseBlocks>,
    /// Test-only `R_{0,T} = A W_{0,T} − W_{1,T}`, which needs the true `A`.
    pub residual: Option<DMatrix<f64>>,
}

impl NoisyHankelBlock {
    pub fn new(u0: DMatrix<f64>, z0: DMatrix<f64>, z1: DMatrix<f64>) -> Result<Self> {
        let h = HankelBlock::new(u0, z0, z1)?;
        Ok(Self {
            u0: h.u0,
            z0: h.x0,
            z1: h.x1,
            noise: None,
            residual: None,
        })
    }

    /// From the measured channel `ζ`; the recorded noise is attached when present.
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let measured = traj
            .measured
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("trajectory has no measured-state channel".into()))?;
        let h = HankelBlock::from_samples(&traj.inputs, measured)?;
        let noise = match &traj.noise {
            Some(w) => {
                let t = traj.steps();
                if w.len() != t + 1 {
                    return Err(dims("noise samples", t + 1, w.len()));
                }
                Some(NoiseBlocks {
                    w0: columns(&w[..t]),
                    w1: columns(&w[1..]),
                })
            }
            None => None,
        };
        Ok(Self {
            u0: h.u0,
            z0: h.x0,
            z1: h.x1,
            noise,
            residual: None,
        })
    }

    /// Noise-free view: a noise-free block is its own measurement.
    pub fn from_clean(h: &HankelBlock) -> Self {
        Self {
            u0: h.u0.clone(),
            z0: h.x0.clone(),
            z1: h.x1.clone(),
            noise: Some(NoiseBlocks {
                w0: DMatrix::zeros(h.n(), h.samples()),
                w1: DMatrix::zeros(h.n(), h.samples()),
            }),
            residual: None,
        }
    }

    /// Attach `R_{0,T} = A W_{0,T} − W_{1,T}` computed with the true `A`.
    pub fn with_true_dynamics(mut self, a: &DMatrix<f64>) -> Self {
        if let Some(nb) = &self.noise {
            self.residual = Some(a * &nb.w0 - &nb.w1);
        }
        self
    }

    /// The measured data viewed as a plain [`HankelBlock`].
    pub fn as_hankel(&self) -> HankelBlock {
        HankelBlock {
            u0: self.u0.clone(),
            x0: self.z0.clone(),
            x1: self.z1.clone(),
        }
    }

    /// Noise removed; only available with test-time noise knowledge.
    pub fn clean(&self) -> Option<HankelBlock> {
        self.noise.as_ref().map(|nb| HankelBlock {
            u0: self.u0.clone(),
            x0: &self.z0 - &nb.w0,
            x1: &self.z1 - &nb.w1,
        })
    }

    pub fn n(&self) -> usize {
        self.z0.nrows()
    }
}
