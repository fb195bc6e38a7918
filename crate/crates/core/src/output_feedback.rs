//! Output feedback from input/output data.
//!
//! A plant given by the difference equation
//! `y(k) + A_n y(k−1) + … + A_1 y(k−n) = B_n u(k−1) + … + B_1 u(k−n)`
//! is lifted to the (non-minimal) state
//! `χ(k) = (y(k−n), …, y(k−1), u(k−n), …, u(k−1))`, so state-feedback
//! design on `χ` yields a dynamic output-feedback controller of order `n`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::design::{self, DesignReport, Method};
use crate::error::{dims, Error, Result};
use crate::hankel::{build_hankel, full_row_rank, HankelBlock, RankCheck};
use crate::linalg::{pinv, spectral_radius, vstack};
use crate::lti_sim::{generate_pe_input_with, uniform_sequence, Trajectory};

/// Coefficients of the left difference operator representation.
///
/// `a[i]` is `A_{i+1}` (p×p) and `b[i]` is `B_{i+1}` (p×m).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCoefficients", into = "RawCoefficients")]
pub struct IoCoefficients {
    n: usize,
    a: Vec<DMatrix<f64>>,
    b: Vec<DMatrix<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum CoefficientList {
    Scalars(Vec<f64>),
    Matrices(Vec<Vec<Vec<f64>>>),
}

#[derive(Serialize, Deserialize)]
struct RawCoefficients {
    n: usize,
    a: CoefficientList,
    b: CoefficientList,
}

fn list_to_mats(list: CoefficientList) -> Result<Vec<DMatrix<f64>>> {
    match list {
        CoefficientList::Scalars(v) => Ok(v.into_iter().map(|x| DMatrix::from_element(1, 1, x)).collect()),
        CoefficientList::Matrices(ms) => ms
            .into_iter()
            .map(|rows| {
                let r = rows.len();
                let c = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|row| row.len() != c) {
                    return Err(Error::InvalidArgument("ragged coefficient matrix".into()));
                }
                Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
            })
            .collect(),
    }
}

impl TryFrom<RawCoefficients> for IoCoefficients {
    type Error = Error;

    fn try_from(raw: RawCoefficients) -> Result<Self> {
        let c = IoCoefficients::mimo(list_to_mats(raw.a)?, list_to_mats(raw.b)?)?;
        if c.n != raw.n {
            return Err(dims("difference equation order", raw.n, c.n));
        }
        Ok(c)
    }
}

impl From<IoCoefficients> for RawCoefficients {
    fn from(c: IoCoefficients) -> Self {
        let list = |ms: &[DMatrix<f64>]| {
            if c.is_siso() {
                CoefficientList::Scalars(ms.iter().map(|m| m[(0, 0)]).collect())
            } else {
                CoefficientList::Matrices(ms.iter().map(crate::linalg::to_rows).collect())
            }
        };
        RawCoefficients {
            n: c.n,
            a: list(&c.a),
            b: list(&c.b),
        }
    }
}

impl IoCoefficients {
    /// Single-input single-output plant from `(a_1..a_n)` and `(b_1..b_n)`.
    pub fn siso(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let wrap = |v: Vec<f64>| v.into_iter().map(|x| DMatrix::from_element(1, 1, x)).collect();
        Self::mimo(wrap(a), wrap(b))
    }

    pub fn mimo(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        let n = a.len();
        if n == 0 {
            return Err(Error::InvalidArgument("difference equation order must be ≥ 1".into()));
        }
        if b.len() != n {
            return Err(dims("input coefficients", n, b.len()));
        }
        let p = a[0].nrows();
        let m = b[0].ncols();
        if p == 0 || m == 0 {
            return Err(Error::InvalidArgument("empty coefficient matrices".into()));
        }
        if let Some(bad) = a.iter().find(|x| x.shape() != (p, p)) {
            return Err(dims(
                "output coefficient",
                format!("{p}×{p}"),
                format!("{:?}", bad.shape()),
            ));
        }
        if let Some(bad) = b.iter().find(|x| x.shape() != (p, m)) {
            return Err(dims(
                "input coefficient",
                format!("{p}×{m}"),
                format!("{:?}", bad.shape()),
            ));
        }
        Ok(Self { n, a, b })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn m(&self) -> usize {
        self.b[0].ncols()
    }

    pub fn is_siso(&self) -> bool {
        self.p() == 1 && self.m() == 1
    }

    /// Dimension `(m + p) n` of the lifted state.
    pub fn chi_dim(&self) -> usize {
        (self.m() + self.p()) * self.n
    }

    /// `A_{i+1}`.
    pub fn a(&self, i: usize) -> &DMatrix<f64> {
        &self.a[i]
    }

    /// `B_{i+1}`.
    pub fn b(&self, i: usize) -> &DMatrix<f64> {
        &self.b[i]
    }

    /// Scalar `a_{i+1}` of a SISO plant.
    pub fn a_scalar(&self, i: usize) -> f64 {
        self.a[i][(0, 0)]
    }

    /// Scalar `b_{i+1}` of a SISO plant.
    pub fn b_scalar(&self, i: usize) -> f64 {
        self.b[i][(0, 0)]
    }

    /// Normalized resultant of `zⁿ + a_n zⁿ⁻¹ + … + a_1` and
    /// `b_n zⁿ⁻¹ + … + b_1`, in `[0, 1]`. Zero means a common root, so the
    /// lifted model loses controllability. `None` for MIMO plants.
    pub fn coprimeness(&self) -> Option<f64> {
        if !self.is_siso() {
            return None;
        }
        let n = self.n;
        // highest power first
        let mut f = vec![1.0];
        f.extend((0..n).rev().map(|i| self.a_scalar(i)));
        let g: Vec<f64> = (0..n).rev().map(|i| self.b_scalar(i)).collect();
        let (df, dg) = (n, n - 1);
        let size = df + dg;
        if size == 0 {
            return Some(1.0);
        }
        let mut s = DMatrix::zeros(size, size);
        for r in 0..dg {
            for (j, &c) in f.iter().enumerate() {
                s[(r, r + j)] = c;
            }
        }
        for r in 0..df {
            for (j, &c) in g.iter().enumerate() {
                s[(dg + r, r + j)] = c;
            }
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let bound = norm(&f).powi(dg as i32) * norm(&g).powi(df as i32);
        if bound == 0.0 {
            return Some(0.0);
        }
        Some((s.determinant().abs() / bound).min(1.0))
    }

    /// `y(k)` from the `n` most recent outputs and inputs (oldest first).
    pub fn output(&self, y_hist: &[DVector<f64>], u_hist: &[DVector<f64>]) -> DVector<f64> {
        let mut y = DVector::zeros(self.p());
        for i in 0..self.n {
            y -= &self.a[i] * &y_hist[i];
            y += &self.b[i] * &u_hist[i];
        }
        y
    }
}

/// `χ(k)` from samples indexed from zero; needs `k ≥ n`.
pub fn chi_state(u: &[DVector<f64>], y: &[DVector<f64>], k: usize, n: usize) -> Result<DVector<f64>> {
    if k < n || k > u.len() || k > y.len() {
        return Err(Error::WindowOutOfRange {
            start: k as i64 - n as i64,
            end: k as i64 - 1,
            first: 0,
            last: u.len().min(y.len()) as i64 - 1,
        });
    }
    let ys = &y[k - n..k];
    let us = &u[k - n..k];
    let p = ys.first().map_or(0, |v| v.len());
    let m = us.first().map_or(0, |v| v.len());
    let mut chi = DVector::zeros((p + m) * n);
    for (i, v) in ys.iter().enumerate() {
        chi.rows_mut(i * p, p).copy_from(v);
    }
    for (i, v) in us.iter().enumerate() {
        chi.rows_mut(p * n + i * m, m).copy_from(v);
    }
    Ok(chi)
}

/// Lifted model `χ(k+1) = 𝒜 χ(k) + ℬ u(k)`, `y(k) = 𝒞 χ(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

pub fn companion_realization(coeffs: &IoCoefficients) -> CompanionRealization {
    let (n, p, m) = (coeffs.n(), coeffs.p(), coeffs.m());
    let dim = (p + m) * n;
    let off_u = p * n;
    let mut c = DMatrix::zeros(p, dim);
    for i in 0..n {
        c.view_mut((0, i * p), (p, p)).copy_from(&(-coeffs.a(i)));
        c.view_mut((0, off_u + i * m), (p, m)).copy_from(coeffs.b(i));
    }
    let mut a = DMatrix::zeros(dim, dim);
    for i in 0..n - 1 {
        a.view_mut((i * p, (i + 1) * p), (p, p)).fill_with_identity();
        a.view_mut((off_u + i * m, off_u + (i + 1) * m), (m, m))
            .fill_with_identity();
    }
    a.view_mut(((n - 1) * p, 0), (p, dim)).copy_from(&c);
    let mut b = DMatrix::zeros(dim, m);
    b.view_mut((off_u + (n - 1) * m, 0), (m, m)).fill_with_identity();
    CompanionRealization { a, b, c }
}

/// Input and lifted-state data of one input/output experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ChiData {
    /// `U_{0,1,T}`.
    pub u0: DMatrix<f64>,
    /// `[Y_{−n,n,T}; U_{−n,n,T}]`.
    pub x0: DMatrix<f64>,
    /// `[Y_{−n+1,n,T}; U_{−n+1,n,T}]`.
    pub x1: DMatrix<f64>,
    pub n: usize,
}

/// Samples of `u` and `y` cover times `−n..T−1` (slice index `j` is time `j − n`).
pub fn build_chi_data(u: &[DVector<f64>], y: &[DVector<f64>], n: usize, t: usize) -> Result<ChiData> {
    if n == 0 || t == 0 {
        return Err(Error::InvalidArgument("order and length must be positive".into()));
    }
    let need = n + t;
    if u.len() < need || y.len() < need {
        return Err(Error::TooShort {
            required: need,
            actual: u.len().min(y.len()),
        });
    }
    let x0 = vstack(&[&build_hankel(y, 0, n, t)?, &build_hankel(u, 0, n, t)?]);
    let x1 = vstack(&[&build_hankel(y, 1, n, t)?, &build_hankel(u, 1, n, t)?]);
    let u0 = build_hankel(u, n, 1, t)?;
    Ok(ChiData { u0, x0, x1, n })
}

impl ChiData {
    /// From a trajectory whose input and output channels start at time `−n`.
    pub fn from_trajectory(traj: &Trajectory, n: usize) -> Result<Self> {
        let y = traj
            .outputs
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("trajectory has no output channel".into()))?;
        if traj.start > -(n as i64) {
            return Err(Error::WindowOutOfRange {
                start: -(n as i64),
                end: -1,
                first: traj.start,
                last: traj.start + traj.steps() as i64 - 1,
            });
        }
        let skip = (-(n as i64) - traj.start) as usize;
        let t = traj.steps() - skip - n;
        build_chi_data(&traj.inputs[skip..], &y[skip..], n, t)
    }

    pub fn samples(&self) -> usize {
        self.u0.ncols()
    }

    pub fn m(&self) -> usize {
        self.u0.nrows()
    }

    pub fn p(&self) -> usize {
        self.x0.nrows() / self.n - self.m()
    }

    /// The data viewed as input/state data of the lifted model.
    pub fn as_hankel(&self) -> HankelBlock {
        HankelBlock {
            u0: self.u0.clone(),
            x0: self.x0.clone(),
            x1: self.x1.clone(),
        }
    }

    /// `rank [U0; X̂0] = (m + p) n + m`.
    pub fn rank_condition(&self, rel_tol: f64) -> RankCheck {
        full_row_rank(&vstack(&[&self.u0, &self.x0]), rel_tol)
    }
}

/// Data-based lifted model `χ⁺ = Â χ + B̂ u`, `y = Ĉ χ`.
#[derive(Debug, Clone, PartialEq)]
pub struct IoPredictor {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
}

impl IoPredictor {
    pub fn predict(&self, chi: &DVector<f64>, u: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        (&self.a * chi + &self.b * u, &self.c * chi)
    }
}

pub fn io_predictor(cd: &ChiData, rel_tol: f64) -> Result<IoPredictor> {
    cd.rank_condition(rel_tol).into_result()?;
    let m = cd.m();
    let p = cd.p();
    let full = &cd.x1 * pinv(&vstack(&[&cd.u0, &cd.x0]), rel_tol);
    let b = full.columns(0, m).into_owned();
    let a = full.columns(m, full.ncols() - m).into_owned();
    // y(k) is the last output block of χ(k+1)
    let c = a.rows((cd.n - 1) * p, p).into_owned();
    Ok(IoPredictor { a, b, c })
}

/// Controller `y_c(k) + C_n y_c(k−1) + … + C_1 y_c(k−n) = D_n u_c(k−1) + … + D_1 u_c(k−n)`
/// stored as the row `𝒦 = [D_1 … D_n  −C_1 … −C_n]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutputController {
    #[serde(serialize_with = "crate::io::serialize_rows")]
    pub gain: DMatrix<f64>,
    pub n: usize,
    /// Plant outputs (controller inputs).
    pub p: usize,
}

/// Observer-form state-space realization of order `n·m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerRealization {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl OutputController {
    pub fn new(gain: DMatrix<f64>, n: usize, p: usize) -> Result<Self> {
        let m = gain.nrows();
        if m == 0 || n == 0 || gain.ncols() != (m + p) * n {
            return Err(dims(
                "controller row",
                format!("{m}×{}", (m + p) * n),
                format!("{:?}", gain.shape()),
            ));
        }
        Ok(Self { gain, n, p })
    }

    pub fn m(&self) -> usize {
        self.gain.nrows()
    }

    /// `D_{i+1}` (m×p).
    pub fn d(&self, i: usize) -> DMatrix<f64> {
        self.gain.view((0, i * self.p), (self.m(), self.p)).into_owned()
    }

    /// `C_{i+1}` (m×m).
    pub fn c(&self, i: usize) -> DMatrix<f64> {
        let m = self.m();
        -self.gain.view((0, self.p * self.n + i * m), (m, m)).into_owned()
    }

    pub fn realize(&self) -> ControllerRealization {
        let (n, m, p) = (self.n, self.m(), self.p);
        let mut a = DMatrix::zeros(n * m, n * m);
        let mut b = DMatrix::zeros(n * m, p);
        for i in 0..n {
            a.view_mut((i * m, 0), (m, m)).copy_from(&(-self.c(n - 1 - i)));
            b.view_mut((i * m, 0), (m, p)).copy_from(&self.d(n - 1 - i));
            if i + 1 < n {
                a.view_mut((i * m, (i + 1) * m), (m, m)).fill_with_identity();
            }
        }
        let mut c = DMatrix::zeros(m, n * m);
        c.view_mut((0, 0), (m, m)).fill_with_identity();
        ControllerRealization {
            a,
            b,
            c,
            d: DMatrix::zeros(m, p),
        }
    }
}

/// SISO realization from the coefficient row `(d_1..d_n, −c_1..−c_n)`.
pub fn realize_controller(row: &[f64], n: usize) -> Result<ControllerRealization> {
    if row.len() != 2 * n {
        return Err(dims("controller row", 2 * n, row.len()));
    }
    Ok(OutputController::new(DMatrix::from_row_slice(1, 2 * n, row), n, 1)?.realize())
}

/// Closed loop of the lifted plant under the controller: `𝒜 + ℬ𝒦`.
pub fn closed_loop_matrix(plant: &IoCoefficients, controller: &OutputController) -> Result<DMatrix<f64>> {
    if controller.n != plant.n() || controller.p != plant.p() || controller.m() != plant.m() {
        return Err(dims(
            "controller order",
            format!("n={}, p={}, m={}", plant.n(), plant.p(), plant.m()),
            format!("n={}, p={}, m={}", controller.n, controller.p, controller.m()),
        ));
    }
    let lift = companion_realization(plant);
    Ok(&lift.a + &lift.b * &controller.gain)
}

/// Result of [`design_output_feedback`].
#[derive(Debug, Clone)]
pub struct OutputFeedbackDesign {
    pub controller: Option<OutputController>,
    pub report: DesignReport,
}

/// State-feedback design on the lifted data; the gain is the controller row.
pub fn design_output_feedback(cd: &ChiData, cfg: &Config) -> Result<OutputFeedbackDesign> {
    cd.rank_condition(cfg.rank_tol).into_result()?;
    let report = design::stabilize_lifted(&cd.as_hankel(), cfg, Method::OutputFeedback)?;
    let controller = match &report.gain {
        Some(k) if report.status.is_feasible() => Some(OutputController::new(k.clone(), cd.n, cd.p())?),
        _ => None,
    };
    Ok(OutputFeedbackDesign { controller, report })
}

/// Outputs of the plant driven by `u`, starting from `n` past outputs and
/// inputs (oldest first). Returns `y(0..len(u))`.
pub fn simulate_io(
    coeffs: &IoCoefficients,
    y_hist: &[DVector<f64>],
    u_hist: &[DVector<f64>],
    u: &[DVector<f64>],
) -> Result<Vec<DVector<f64>>> {
    let n = coeffs.n();
    if y_hist.len() != n || u_hist.len() != n {
        return Err(dims("i/o history", n, y_hist.len().min(u_hist.len())));
    }
    if let Some(bad) = u.iter().find(|v| v.len() != coeffs.m()) {
        return Err(dims("input sample", coeffs.m(), bad.len()));
    }
    let mut ys: Vec<DVector<f64>> = y_hist.to_vec();
    let mut us: Vec<DVector<f64>> = u_hist.to_vec();
    let mut out = Vec::with_capacity(u.len());
    for uk in u {
        let k = ys.len();
        let y = coeffs.output(&ys[k - n..], &us[k - n..]);
        out.push(y.clone());
        ys.push(y);
        us.push(uk.clone());
    }
    Ok(out)
}

/// Open-loop input/output experiment recorded from time `−n` to `T − 1`.
///
/// The history before `−n` is random; the input over the whole window is
/// either uniform random or, with `pe_order`, persistently exciting of that
/// order.
pub fn io_experiment(
    coeffs: &IoCoefficients,
    t: usize,
    amplitude: f64,
    seed: u64,
    pe_order: Option<usize>,
) -> Result<Trajectory> {
    let n = coeffs.n();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_hist = uniform_sequence(&mut rng, coeffs.p(), n, amplitude);
    let u_hist = uniform_sequence(&mut rng, coeffs.m(), n, amplitude);
    let u = match pe_order {
        Some(order) => generate_pe_input_with(&mut rng, coeffs.m(), n + t, order, amplitude)?,
        None => uniform_sequence(&mut rng, coeffs.m(), n + t, amplitude),
    };
    let y = simulate_io(coeffs, &y_hist, &u_hist, &u)?;
    Ok(Trajectory {
        start: -(n as i64),
        inputs: u,
        outputs: Some(y),
        seed: Some(seed),
        ..Default::default()
    })
}

/// Plant in feedback with the realized controller (`u_c = y`, `u = y_c`).
/// Returns the lifted states `χ(n), …, χ(n + steps)`.
pub fn simulate_interconnection(
    plant: &IoCoefficients,
    ctrl: &ControllerRealization,
    y_hist: &[DVector<f64>],
    u_hist: &[DVector<f64>],
    xi0: &DVector<f64>,
    steps: usize,
) -> Result<Vec<DVector<f64>>> {
    let n = plant.n();
    if y_hist.len() != n || u_hist.len() != n {
        return Err(dims("i/o history", n, y_hist.len().min(u_hist.len())));
    }
    if xi0.len() != ctrl.a.nrows() {
        return Err(dims("controller state", ctrl.a.nrows(), xi0.len()));
    }
    let mut ys = y_hist.to_vec();
    let mut us = u_hist.to_vec();
    let mut xi = xi0.clone();
    let mut chis = vec![chi_state(&us, &ys, n, n)?];
    for _ in 0..steps {
        let k = ys.len();
        let y = plant.output(&ys[k - n..], &us[k - n..]);
        let u = &ctrl.c * &xi + &ctrl.d * &y;
        xi = &ctrl.a * &xi + &ctrl.b * &y;
        ys.push(y);
        us.push(u);
        chis.push(chi_state(&us, &ys, k + 1, n)?);
    }
    Ok(chis)
}

/// Spectral radius of the lifted closed loop.
pub fn closed_loop_radius(plant: &IoCoefficients, controller: &OutputController) -> Result<f64> {
    Ok(spectral_radius(&closed_loop_matrix(plant, controller)?))
}
