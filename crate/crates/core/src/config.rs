//! Tolerances and solver settings shared by every design routine.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Settings of the conic optimizer behind [`crate::lmi`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub max_iter: u32,
    pub tol_feas: f64,
    pub tol_gap_abs: f64,
    pub tol_gap_rel: f64,
    /// Slack allowed when re-evaluating constraints, relative to the size of
    /// the constraint value.
    pub check_tol: f64,
    /// Static regularization of the optimizer's linear systems.
    pub regularization: f64,
    /// Extra attempts, each with ten times the previous regularization, made
    /// when a solve cannot be certified.
    pub retries: u32,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol_feas: 1e-12,
            tol_gap_abs: 1e-12,
            tol_gap_rel: 1e-12,
            check_tol: 1e-9,
            regularization: 1e-8,
            retries: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Relative singular-value threshold for rank and pseudoinverse.
    pub rank_tol: f64,
    /// Strict inequalities `≻ 0` are imposed as `⪰ ε I` with this ε.
    pub lmi_margin: f64,
    /// A closed loop counts as stable when its spectral radius is below
    /// `1 − stability_margin` (or its spectral abscissa below `−stability_margin`).
    pub stability_margin: f64,
    /// Robust and nonlinear designs maximize α instead of merely finding one.
    pub maximize_alpha: bool,
    /// Factor applied to ε when the LQR program is retried.
    pub lqr_retry_factor: f64,
    /// Bound `P ⪯ I` added to the homogeneous stabilization programs, which
    /// are otherwise invariant under scaling of the decision variables.
    pub normalize: bool,
    pub solver: SolverConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            rank_tol: crate::linalg::RANK_TOL,
            lmi_margin: 1e-8,
            stability_margin: 1e-8,
            maximize_alpha: true,
            lqr_retry_factor: 10.0,
            normalize: true,
            solver: SolverConfig::default(),
        }
    }
}

impl Config {
    /// Read a JSON config; missing fields keep their defaults.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
