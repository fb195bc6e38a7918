//! Controller design from data through linear matrix inequalities.
//!
//! Every routine works on Hankel data only. The gain is recovered as
//! `K = U0 Q P⁻¹` where `P = X0 Q` is imposed through an explicit symmetric
//! variable, and the data-based closed loop `X1 Q P⁻¹` is checked before the
//! report is marked feasible.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::config::Config;
use crate::error::{dims, Error, Result};
use crate::hankel::{full_row_rank, HankelBlock, NoisyHankelBlock};
use crate::linalg::{psd_sqrt, spectral_abscissa, spectral_radius, symmetrize, vstack};
use crate::lmi::{self, AffineExpr, LmiProblem, LmiSolution, MatrixVar, SolverStats};
use crate::lti_sim::NonlinearPlant;
use crate::oracles::min_gamma;

pub use crate::lmi::LmiStatus as DesignStatus;

impl DesignStatus {
    pub fn is_feasible(self) -> bool {
        self == DesignStatus::Feasible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    StateFeedback,
    StateFeedbackCt,
    Lqr,
    Robust,
    Nonlinear,
    OutputFeedback,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::StateFeedback,
        Method::StateFeedbackCt,
        Method::Lqr,
        Method::Robust,
        Method::Nonlinear,
        Method::OutputFeedback,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::StateFeedback => "state-feedback",
            Method::StateFeedbackCt => "state-feedback-ct",
            Method::Lqr => "lqr",
            Method::Robust => "robust",
            Method::Nonlinear => "nonlinear",
            Method::OutputFeedback => "output-feedback",
        }
    }

    pub fn is_continuous(self) -> bool {
        self == Method::StateFeedbackCt
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown design method `{s}`")))
    }
}

/// Noise and remainder diagnostics of the robust and nonlinear designs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Smallest γ with `R R ᵀ ⪯ γ Z1 Z1ᵀ` (`R` is the noise residual or the remainder).
    pub gamma: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    /// `α² / (4 + 2α)`.
    pub gamma_bound: Option<f64>,
    /// `γ < α² / (4 + 2α)`.
    pub gamma_bound_ok: Option<bool>,
    /// `γ₁ < 0.5`.
    pub assumption3_ok: Option<bool>,
    /// `(6γ₁ + 3γ₂)/(1 − 2γ₁) < α² / (2(2 + α))`.
    pub corollary_bound_ok: Option<bool>,
}

/// Equilibrium around which an affine law `u = ū + K (x − x̄)` applies.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatingPoint {
    pub x_eq: Vec<f64>,
    pub u_eq: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignReport {
    pub method: Method,
    pub status: DesignStatus,
    #[serde(rename = "K", serialize_with = "crate::io::serialize_opt_rows")]
    pub gain: Option<DMatrix<f64>>,
    #[serde(rename = "Q", serialize_with = "crate::io::serialize_opt_rows")]
    pub q: Option<DMatrix<f64>>,
    #[serde(rename = "P", serialize_with = "crate::io::serialize_opt_rows")]
    pub p: Option<DMatrix<f64>>,
    /// LQR slack `X`.
    #[serde(rename = "X", serialize_with = "crate::io::serialize_opt_rows")]
    pub x: Option<DMatrix<f64>>,
    pub alpha: Option<f64>,
    pub objective: Option<f64>,
    /// Spectral radius of the data-based closed loop `X1 Q P⁻¹`.
    pub rho_data: Option<f64>,
    /// Largest real eigenvalue part of `Ẋ1 Q P⁻¹` (continuous time).
    pub abscissa_data: Option<f64>,
    /// Same quantity from the true model, when one is attached.
    pub rho_oracle: Option<f64>,
    pub abscissa_oracle: Option<f64>,
    /// Data-side stability check passed.
    pub verified: bool,
    /// Margin ε of the strict inequalities actually used.
    pub lmi_margin: f64,
    pub diagnostics: Diagnostics,
    pub operating_point: Option<OperatingPoint>,
    pub solver: Option<SolverStats>,
    pub worst_violation: Option<f64>,
    pub message: Option<String>,
}

impl DesignReport {
    fn empty(method: Method, status: DesignStatus, margin: f64) -> Self {
        Self {
            method,
            status,
            gain: None,
            q: None,
            p: None,
            x: None,
            alpha: None,
            objective: None,
            rho_data: None,
            abscissa_data: None,
            rho_oracle: None,
            abscissa_oracle: None,
            verified: false,
            lmi_margin: margin,
            diagnostics: Diagnostics::default(),
            operating_point: None,
            solver: None,
            worst_violation: None,
            message: None,
        }
    }

    /// Record the closed-loop stability measure of the true `A + B K`.
    pub fn attach_oracle(&mut self, a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<()> {
        let Some(k) = &self.gain else { return Ok(()) };
        if b.ncols() != k.nrows() || a.nrows() != k.ncols() {
            return Err(dims(
                "oracle model",
                format!("n={}, m={}", k.ncols(), k.nrows()),
                format!("{:?}", b.shape()),
            ));
        }
        let cl = a + b * k;
        if self.method.is_continuous() {
            self.abscissa_oracle = Some(spectral_abscissa(&cl));
        } else {
            self.rho_oracle = Some(spectral_radius(&cl));
        }
        Ok(())
    }

    /// Whether the attached oracle confirms stability with the given margin;
    /// `None` without an oracle.
    pub fn oracle_stable(&self, margin: f64) -> Option<bool> {
        if self.method.is_continuous() {
            self.abscissa_oracle.map(|s| s < -margin)
        } else {
            self.rho_oracle.map(|r| r < 1.0 - margin)
        }
    }
}

fn require_rank(u0: &DMatrix<f64>, x0: &DMatrix<f64>, cfg: &Config) -> Result<()> {
    if u0.ncols() != x0.ncols() {
        return Err(dims("design data", format!("{} columns", u0.ncols()), x0.ncols()));
    }
    full_row_rank(&vstack(&[u0, x0]), cfg.rank_tol)
        .into_result()
        .map(|_| ())
}

/// Shared tail of every design: certify, recover `K`, check the data-based closed loop.
struct Finish<'a> {
    method: Method,
    margin: f64,
    u0: &'a DMatrix<f64>,
    /// `X1` (or `Ẋ1`, `Z1`) used for the data-based closed loop.
    x1: &'a DMatrix<f64>,
    q: &'a MatrixVar,
    p: &'a MatrixVar,
}

impl Finish<'_> {
    fn run(&self, sol: &LmiSolution, cfg: &Config) -> DesignReport {
        let mut rep = DesignReport::empty(self.method, sol.status, self.margin);
        rep.solver = Some(sol.stats.clone());
        rep.worst_violation = Some(sol.worst_violation());
        rep.objective = sol.objective;
        if !sol.status.is_feasible() {
            rep.message = Some(format!("LMI solver: {}", sol.stats.raw_status));
            return rep;
        }
        let q = sol.value(self.q).clone();
        let p = symmetrize(sol.value(self.p));
        rep.q = Some(q.clone());
        rep.p = Some(p.clone());
        let Some(chol) = p.clone().cholesky() else {
            rep.status = DesignStatus::NumericalFailure;
            rep.message = Some("P = X0 Q is not positive definite".into());
            return rep;
        };
        let p_inv = chol.inverse();
        let ev = crate::linalg::sym_eigenvalues(&p);
        let cond = ev.last().unwrap_or(&1.0) / ev.first().unwrap_or(&1.0);
        if !(cond < 1e12) {
            rep.status = DesignStatus::NumericalFailure;
            rep.message = Some(format!("P is singular to working precision (condition {cond:.3e})"));
            return rep;
        }
        let g = &q * &p_inv;
        let k = self.u0 * &g;
        let closed = self.x1 * &g;
        if self.method.is_continuous() {
            let s = spectral_abscissa(&closed);
            rep.abscissa_data = Some(s);
            rep.verified = s < -cfg.stability_margin;
        } else {
            let r = spectral_radius(&closed);
            rep.rho_data = Some(r);
            rep.verified = r < 1.0 - cfg.stability_margin;
        }
        rep.gain = Some(k);
        if !rep.verified {
            rep.status = DesignStatus::NumericalFailure;
            rep.message = Some("data-based closed loop is not stable".into());
        }
        rep
    }
}

/// `[[P, X1 Q], [Qᵀ X1ᵀ, P]] ⪰ ε I`, `X0 Q = P` and, if configured, `P ⪯ I`.
fn theorem3_problem(h: &HankelBlock, cfg: &Config) -> Result<(LmiProblem, MatrixVar, MatrixVar)> {
    let (n, t) = (h.n(), h.samples());
    let mut prob = LmiProblem::new();
    let q = prob.var("Q", t, n);
    let p = prob.sym_var("P", n);
    let pe = p.expr();
    prob.eq("X0 Q = P", q.expr().premul(&h.x0) - pe.clone())?;
    prob.psd(
        "lyapunov",
        AffineExpr::sym2(&pe, &q.expr().premul(&h.x1), &pe),
        cfg.lmi_margin,
    )?;
    if cfg.normalize {
        prob.psd("normalization", (-pe).shift(1.0), 0.0)?;
    }
    Ok((prob, q, p))
}

/// Discrete-time stabilizing state feedback from noise-free data.
pub fn stabilize_dt(h: &HankelBlock, cfg: &Config) -> Result<DesignReport> {
    stabilize_lifted(h, cfg, Method::StateFeedback)
}

/// [`stabilize_dt`] tagged with another method name; used for the lifted
/// input/output model.
pub(crate) fn stabilize_lifted(h: &HankelBlock, cfg: &Config, method: Method) -> Result<DesignReport> {
    require_rank(&h.u0, &h.x0, cfg)?;
    let (prob, q, p) = theorem3_problem(h, cfg)?;
    let sol = lmi::solve(&prob, &cfg.solver);
    Ok(Finish {
        method,
        margin: cfg.lmi_margin,
        u0: &h.u0,
        x1: &h.x1,
        q: &q,
        p: &p,
    }
    .run(&sol, cfg))
}

/// Continuous-time stabilizing state feedback from samples of `u`, `x` and `ẋ`.
pub fn stabilize_ct(u0: &DMatrix<f64>, x0: &DMatrix<f64>, x1dot: &DMatrix<f64>, cfg: &Config) -> Result<DesignReport> {
    require_rank(u0, x0, cfg)?;
    if x1dot.shape() != x0.shape() {
        return Err(dims(
            "derivative data",
            format!("{:?}", x0.shape()),
            format!("{:?}", x1dot.shape()),
        ));
    }
    let (n, t) = (x0.nrows(), x0.ncols());
    let mut prob = LmiProblem::new();
    let q = prob.var("Q", t, n);
    let p = prob.sym_var("P", n);
    let pe = p.expr();
    prob.eq("X0 Q = P", q.expr().premul(x0) - pe.clone())?;
    let xq = q.expr().premul(x1dot);
    prob.psd("lyapunov", -(xq.clone() + xq.transpose()), cfg.lmi_margin)?;
    prob.psd("P", pe.clone(), cfg.lmi_margin)?;
    if cfg.normalize {
        prob.psd("normalization", (-pe).shift(1.0), 0.0)?;
    }
    let sol = lmi::solve(&prob, &cfg.solver);
    Ok(Finish {
        method: Method::StateFeedbackCt,
        margin: cfg.lmi_margin,
        u0,
        x1: x1dot,
        q: &q,
        p: &p,
    }
    .run(&sol, cfg))
}

fn check_weight(name: &'static str, w: &DMatrix<f64>, n: usize, definite: bool) -> Result<()> {
    if w.shape() != (n, n) {
        return Err(dims(name, format!("{n}×{n}"), format!("{:?}", w.shape())));
    }
    if (w - w.transpose()).amax() > 1e-12 * w.amax().max(1.0) {
        return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
    }
    let lmin = crate::linalg::min_sym_eigenvalue(w);
    let ok = if definite {
        lmin > 0.0
    } else {
        lmin >= -1e-12 * w.amax().max(1.0)
    };
    if !ok {
        let what = if definite {
            "positive definite"
        } else {
            "positive semidefinite"
        };
        return Err(Error::InvalidArgument(format!("{name} must be {what}")));
    }
    Ok(())
}

/// Optimal H2 state feedback (LQR) with weights `Qx ⪰ 0`, `R ≻ 0`.
pub fn lqr_dt(h: &HankelBlock, qx: &DMatrix<f64>, r: &DMatrix<f64>, cfg: &Config) -> Result<DesignReport> {
    require_rank(&h.u0, &h.x0, cfg)?;
    let (n, m) = (h.n(), h.m());
    check_weight("Qx", qx, n, false)?;
    check_weight("R", r, m, true)?;
    let first = lqr_attempt(h, qx, r, 0.0, cfg)?;
    if first.status == DesignStatus::NumericalFailure {
        let mut retry = lqr_attempt(h, qx, r, cfg.lmi_margin * cfg.lqr_retry_factor, cfg)?;
        let why = first.message.unwrap_or_default();
        retry.message = Some(match retry.message {
            Some(m) => format!("retried after: {why}; {m}"),
            None => format!("retried after: {why}"),
        });
        return Ok(retry);
    }
    Ok(first)
}

fn lqr_attempt(
    h: &HankelBlock,
    qx: &DMatrix<f64>,
    r: &DMatrix<f64>,
    margin: f64,
    cfg: &Config,
) -> Result<DesignReport> {
    let (n, m, t) = (h.n(), h.m(), h.samples());
    let r_half = psd_sqrt(r);
    let mut prob = LmiProblem::new();
    let q = prob.var("Q", t, n);
    let w = prob.sym_var("W", n);
    let x = prob.sym_var("X", m);
    let we = w.expr();
    prob.eq("X0 Q = W", q.expr().premul(&h.x0) - we.clone())?;
    let ru = q.expr().premul(&(&r_half * &h.u0));
    prob.psd("input cost", AffineExpr::sym2(&x.expr(), &ru, &we), margin)?;
    prob.psd(
        "gramian",
        AffineExpr::sym2(&we.clone().shift(-1.0), &q.expr().premul(&h.x1), &we),
        margin,
    )?;
    prob.minimize(&(we.premul(qx).trace() + x.expr().trace()))?;
    let sol = lmi::solve(&prob, &cfg.solver);
    let mut rep = Finish {
        method: Method::Lqr,
        margin,
        u0: &h.u0,
        x1: &h.x1,
        q: &q,
        p: &w,
    }
    .run(&sol, cfg);
    if sol.status.is_feasible() {
        rep.x = Some(symmetrize(sol.value(&x)));
    }
    Ok(rep)
}

/// Smallest γ with `R0 R0ᵀ ⪯ γ Z1 Z1ᵀ`.
pub fn check_assumption2(z1: &DMatrix<f64>, r0: &DMatrix<f64>) -> Result<f64> {
    if z1.nrows() != r0.nrows() {
        return Err(dims("noise residual", format!("{} rows", z1.nrows()), r0.nrows()));
    }
    min_gamma(&(r0 * r0.transpose()), &(z1 * z1.transpose()))
}

/// Smallest γ₁, γ₂ of the noise-to-data dominations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Assumption3 {
    pub gamma1: f64,
    pub gamma2: f64,
}

impl Assumption3 {
    /// `γ₁ < 0.5`.
    pub fn holds(&self) -> bool {
        self.gamma1 < 0.5
    }

    /// `(6γ₁ + 3γ₂)/(1 − 2γ₁)`, an upper bound on γ of [`check_assumption2`].
    pub fn implied_gamma(&self) -> f64 {
        if self.holds() {
            (6.0 * self.gamma1 + 3.0 * self.gamma2) / (1.0 - 2.0 * self.gamma1)
        } else {
            f64::INFINITY
        }
    }

    pub fn corollary_bound_ok(&self, alpha: f64) -> bool {
        self.holds() && alpha > 0.0 && self.implied_gamma() < alpha * alpha / (2.0 * (2.0 + alpha))
    }
}

/// `[0; W0][0; W0]ᵀ ⪯ γ₁ [U0; Z0][U0; Z0]ᵀ` and `W1 W1ᵀ ⪯ γ₂ Z1 Z1ᵀ`.
pub fn check_assumption3(
    u0: &DMatrix<f64>,
    z0: &DMatrix<f64>,
    w0: &DMatrix<f64>,
    w1: &DMatrix<f64>,
    z1: &DMatrix<f64>,
) -> Result<Assumption3> {
    let t = u0.ncols();
    if [z0.ncols(), w0.ncols(), w1.ncols(), z1.ncols()].iter().any(|&c| c != t) {
        return Err(dims("noise data", format!("{t} columns"), "mismatch"));
    }
    if w0.shape() != z0.shape() || w1.shape() != z1.shape() {
        return Err(dims(
            "noise data",
            format!("{:?}", z0.shape()),
            format!("{:?}", w0.shape()),
        ));
    }
    let s = vstack(&[u0, z0]);
    let padded = vstack(&[&DMatrix::zeros(u0.nrows(), t), w0]);
    let gamma1 = min_gamma(&(&padded * padded.transpose()), &(&s * s.transpose()))?;
    let gamma2 = min_gamma(&(w1 * w1.transpose()), &(z1 * z1.transpose()))?;
    Ok(Assumption3 { gamma1, gamma2 })
}

/// Scalar `c` with `R0 R0ᵀ ⪯ c I` implied by entrywise products bounded by
/// `w̄` (`c = 2 n w̄ T (1 + σ_A)`, `σ_A` the squared largest singular value of `A`).
pub fn gershgorin_noise_bound(w_bar: f64, n: usize, t: usize, sigma_a: f64) -> Result<f64> {
    if !(w_bar >= 0.0) || !(sigma_a >= 0.0) {
        return Err(Error::InvalidArgument("noise bound and σ_A must be nonnegative".into()));
    }
    Ok(2.0 * n as f64 * w_bar * t as f64 * (1.0 + sigma_a))
}

/// `[[P − α Z1 Z1ᵀ, Z1 Q], [·, P]] ⪰ ε I`, `[[I, Q], [Qᵀ, P]] ⪰ ε I`, `Z0 Q = P`, `α ≥ ε`.
fn robust_problem(
    u0: &DMatrix<f64>,
    z0: &DMatrix<f64>,
    z1: &DMatrix<f64>,
    maximize_alpha: bool,
    cfg: &Config,
) -> Result<(LmiProblem, MatrixVar, MatrixVar, MatrixVar)> {
    let (n, t) = (z0.nrows(), u0.ncols());
    let eps = cfg.lmi_margin;
    let mut prob = LmiProblem::new();
    let q = prob.var("Q", t, n);
    let p = prob.sym_var("P", n);
    let alpha = prob.scalar_var("alpha");
    let pe = p.expr();
    prob.eq("Z0 Q = P", q.expr().premul(z0) - pe.clone())?;
    let top = pe.clone() - alpha.times(&(z1 * z1.transpose()));
    prob.psd(
        "robust lyapunov",
        AffineExpr::sym2(&top, &q.expr().premul(z1), &pe),
        eps,
    )?;
    prob.psd(
        "Q bound",
        AffineExpr::sym2(&AffineExpr::identity(t), &q.expr(), &pe),
        eps,
    )?;
    prob.psd("alpha", alpha.expr(), eps)?;
    if maximize_alpha {
        prob.maximize(&alpha.expr())?;
    }
    Ok((prob, q, p, alpha))
}

fn with_bounds(rep: &mut DesignReport, gamma: Option<f64>, a3: Option<Assumption3>) {
    let Some(alpha) = rep.alpha else { return };
    let bound = alpha * alpha / (4.0 + 2.0 * alpha);
    rep.diagnostics.gamma_bound = Some(bound);
    if let Some(g) = gamma {
        rep.diagnostics.gamma = Some(g);
        rep.diagnostics.gamma_bound_ok = Some(g < bound);
    }
    if let Some(a3) = a3 {
        rep.diagnostics.gamma1 = Some(a3.gamma1);
        rep.diagnostics.gamma2 = Some(a3.gamma2);
        rep.diagnostics.assumption3_ok = Some(a3.holds());
        rep.diagnostics.corollary_bound_ok = Some(a3.corollary_bound_ok(alpha));
    }
}

fn solve_robust(
    method: Method,
    u0: &DMatrix<f64>,
    z0: &DMatrix<f64>,
    z1: &DMatrix<f64>,
    maximize_alpha: bool,
    cfg: &Config,
) -> Result<DesignReport> {
    require_rank(u0, z0, cfg)?;
    full_row_rank(z1, cfg.rank_tol).into_result()?;
    let (prob, q, p, alpha) = robust_problem(u0, z0, z1, maximize_alpha, cfg)?;
    let sol = lmi::solve(&prob, &cfg.solver);
    let mut rep = Finish {
        method,
        margin: cfg.lmi_margin,
        u0,
        x1: z1,
        q: &q,
        p: &p,
    }
    .run(&sol, cfg);
    if sol.status.is_feasible() {
        rep.alpha = Some(sol.value(&alpha)[(0, 0)]);
    }
    Ok(rep)
}

/// Stabilizing state feedback from noisy state measurements.
///
/// When the block carries the recorded noise, the report also holds the
/// assumption diagnostics (test-time only information).
pub fn robust_stabilize(nh: &NoisyHankelBlock, maximize_alpha: bool, cfg: &Config) -> Result<DesignReport> {
    let mut rep = solve_robust(Method::Robust, &nh.u0, &nh.z0, &nh.z1, maximize_alpha, cfg)?;
    let gamma = match &nh.residual {
        Some(r0) => Some(check_assumption2(&nh.z1, r0)?),
        None => None,
    };
    let a3 = match &nh.noise {
        Some(w) => Some(check_assumption3(&nh.u0, &nh.z0, &w.w0, &w.w1, &nh.z1)?),
        None => None,
    };
    with_bounds(&mut rep, gamma, a3);
    Ok(rep)
}

/// Local stabilization of a nonlinear plant from deviation data `(δu, δx)`.
///
/// `remainder` is the recorded `D0 = [d(0) … d(T−1)]`, known only in tests.
pub fn stabilize_nonlinear(
    plant: &NonlinearPlant,
    h: &HankelBlock,
    remainder: Option<&DMatrix<f64>>,
    cfg: &Config,
) -> Result<DesignReport> {
    if h.n() != plant.n() || h.m() != plant.m() {
        return Err(dims(
            "deviation data",
            format!("n={}, m={}", plant.n(), plant.m()),
            format!("n={}, m={}", h.n(), h.m()),
        ));
    }
    let mut rep = solve_robust(Method::Nonlinear, &h.u0, &h.x0, &h.x1, cfg.maximize_alpha, cfg)?;
    let gamma = match remainder {
        Some(d0) => Some(check_assumption2(&h.x1, d0)?),
        None => None,
    };
    with_bounds(&mut rep, gamma, None);
    rep.operating_point = Some(OperatingPoint {
        x_eq: plant.x_eq.iter().copied().collect(),
        u_eq: plant.u_eq.iter().copied().collect(),
    });
    Ok(rep)
}

/// `u = ū + K (x − x̄)`.
pub fn affine_law(k: &DMatrix<f64>, plant: &NonlinearPlant, x: &DVector<f64>) -> DVector<f64> {
    &plant.u_eq + k * (x - &plant.x_eq)
}

#[cfg(test)]
mod tests;
