//! Seeded Monte Carlo runs of the reference examples.
//!
//! Every seed draws a fresh experiment, designs a controller from the data
//! alone and then checks it against the true plant. Seeds run in parallel;
//! results are returned in seed order so that output files are identical
//! between runs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::data_repr::verify_gain;
use crate::design::{self, affine_law, DesignReport};
use crate::error::{Error, Result};
use crate::hankel::{HankelBlock, NoisyHankelBlock};
use crate::linalg::{columns, spectral_abscissa, spectral_radius};
use crate::lti_sim::{
    batch_reactor, double_integrator, gaussian_sequence, gaussian_vector, generate_pe_input_with, simulate_lti,
    simulate_noisy, simulate_pendulum, simulate_sampled_ct, two_cart_io, uniform_sequence, uniform_vector, LtiSystem,
    PendulumParams,
};
use crate::oracles::dare;
use crate::output_feedback::{closed_loop_matrix, design_output_feedback, io_experiment, ChiData};

/// Closed loops count as stable below `1 − SUCCESS_MARGIN` (discrete time)
/// or below `0` (continuous time).
pub const SUCCESS_MARGIN: f64 = 1e-6;
/// Largest allowed difference between the data-side and true stability measures.
pub const SOUNDNESS_TOL: f64 = 1e-6;
/// Largest allowed Frobenius distance between the data-driven and Riccati LQR gains.
pub const LQR_GAP_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ReactorStab,
    ReactorLqr,
    NoisyReactor,
    Pendulum,
    TwoCart,
    CtDoubleIntegrator,
}

impl Experiment {
    pub const ALL: [Experiment; 6] = [
        Experiment::ReactorStab,
        Experiment::ReactorLqr,
        Experiment::NoisyReactor,
        Experiment::Pendulum,
        Experiment::TwoCart,
        Experiment::CtDoubleIntegrator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::ReactorStab => "reactor-stab",
            Experiment::ReactorLqr => "reactor-lqr",
            Experiment::NoisyReactor => "noisy-reactor",
            Experiment::Pendulum => "pendulum",
            Experiment::TwoCart => "two-cart",
            Experiment::CtDoubleIntegrator => "ct-double-integrator",
        }
    }

    /// Number of data columns `T`.
    pub fn default_samples(self) -> usize {
        match self {
            Experiment::ReactorStab | Experiment::ReactorLqr | Experiment::NoisyReactor => 15,
            Experiment::Pendulum => 5,
            Experiment::TwoCart => 9,
            Experiment::CtDoubleIntegrator => 6,
        }
    }

    /// Noise amplitude for `noisy-reactor`, data amplitude otherwise.
    pub fn default_amplitude(self) -> f64 {
        match self {
            Experiment::NoisyReactor => 0.01,
            Experiment::Pendulum => 0.1,
            _ => 1.0,
        }
    }

    fn continuous(self) -> bool {
        self == Experiment::CtDoubleIntegrator
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown example `{s}`")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchOptions {
    pub seeds: u64,
    pub first_seed: u64,
    pub samples: Option<usize>,
    pub amplitude: Option<f64>,
    /// Length of the closed-loop runs written as plot data.
    pub horizon: usize,
    #[serde(skip)]
    pub config: Config,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            seeds: 100,
            first_seed: 0,
            samples: None,
            amplitude: None,
            horizon: 200,
            config: Config::default(),
        }
    }
}

/// Result of one seed.
#[derive(Debug, Clone, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub status: design::DesignStatus,
    /// Feasible and stabilizing for the true plant (and, for LQR, close to the Riccati gain).
    pub success: bool,
    /// Stability measure of the data-based closed loop built from the noise-free
    /// part of the data.
    pub data_measure: Option<f64>,
    /// Same measure for the true closed loop.
    pub oracle_measure: Option<f64>,
    /// `|data_measure − oracle_measure|`.
    pub soundness_gap: Option<f64>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub gamma1: Option<f64>,
    pub gamma2: Option<f64>,
    pub gamma_bound_ok: Option<bool>,
    pub dare_gap: Option<f64>,
    #[serde(rename = "K", serialize_with = "crate::io::serialize_opt_rows")]
    pub gain: Option<DMatrix<f64>>,
    pub message: Option<String>,
    /// Closed-loop state norms `‖x(k)‖`, `k = 0..=horizon`.
    #[serde(skip)]
    pub norms: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub experiment: Experiment,
    pub seeds: u64,
    pub first_seed: u64,
    pub samples: usize,
    pub amplitude: f64,
    pub feasible: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub median_alpha: Option<f64>,
    pub median_gamma: Option<f64>,
    pub median_gamma1: Option<f64>,
    pub max_soundness_gap: Option<f64>,
    /// Feasible designs whose data-side and true stability measures differ by more than [`SOUNDNESS_TOL`].
    pub soundness_discrepancies: usize,
    pub outcomes: Vec<SeedOutcome>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

/// Run `opts.seeds` consecutive seeds of one example.
pub fn run_bench(exp: Experiment, opts: &BenchOptions) -> BenchSummary {
    let outcomes: Vec<SeedOutcome> = (opts.first_seed..opts.first_seed + opts.seeds)
        .into_par_iter()
        .map(|seed| run_seed(exp, seed, opts))
        .collect();
    let feasible = outcomes.iter().filter(|o| o.status.is_feasible()).count();
    let successes = outcomes.iter().filter(|o| o.success).count();
    let gaps: Vec<f64> = outcomes.iter().filter_map(|o| o.soundness_gap).collect();
    let collect = |f: fn(&SeedOutcome) -> Option<f64>| median(outcomes.iter().filter_map(f).collect());
    BenchSummary {
        experiment: exp,
        seeds: opts.seeds,
        first_seed: opts.first_seed,
        samples: opts.samples.unwrap_or(exp.default_samples()),
        amplitude: opts.amplitude.unwrap_or(exp.default_amplitude()),
        feasible,
        successes,
        success_rate: if opts.seeds == 0 {
            0.0
        } else {
            successes as f64 / opts.seeds as f64
        },
        median_alpha: collect(|o| o.alpha),
        median_gamma: collect(|o| o.gamma),
        median_gamma1: collect(|o| o.gamma1),
        max_soundness_gap: gaps.iter().copied().reduce(f64::max),
        soundness_discrepancies: outcomes
            .iter()
            .filter(|o| o.status.is_feasible() && !o.soundness_gap.is_some_and(|g| g <= SOUNDNESS_TOL))
            .count(),
        outcomes,
    }
}

/// Write `summary.json` and one `norms_seed_<seed>.csv` per seed into `dir`.
pub fn write_bench(dir: &Path, summary: &BenchSummary) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    crate::io::write_json(&dir.join("summary.json"), summary)?;
    for o in &summary.outcomes {
        let mut w = csv::Writer::from_path(dir.join(format!("norms_seed_{}.csv", o.seed)))?;
        w.write_record(["k", "norm_x"])?;
        for (k, v) in o.norms.iter().enumerate() {
            w.write_record([k.to_string(), format!("{v:.16e}")])?;
        }
        w.flush()?;
    }
    Ok(())
}

struct Prepared {
    report: DesignReport,
    /// Data-based closed loop from noise-free data, for the soundness check.
    clean: Option<HankelBlock>,
    /// True closed-loop matrix.
    closed: Option<DMatrix<f64>>,
    norms: Vec<f64>,
    dare_gap: Option<f64>,
}

fn power_norms(a: &DMatrix<f64>, x0: DVector<f64>, horizon: usize) -> Vec<f64> {
    let mut x = x0;
    let mut out = Vec::with_capacity(horizon + 1);
    for _ in 0..=horizon {
        out.push(x.norm());
        x = a * x;
    }
    out
}

fn unit_start(n: usize) -> DVector<f64> {
    DVector::from_element(n, 1.0 / (n as f64).sqrt())
}

fn lti_experiment(sys: &LtiSystem, t: usize, amp: f64, rng: &mut ChaCha8Rng) -> Result<HankelBlock> {
    let u = generate_pe_input_with(rng, sys.m(), t, sys.n() + 1, amp)?;
    let x0 = uniform_vector(rng, sys.n(), amp);
    HankelBlock::from_trajectory(&simulate_lti(sys, &x0, &u)?)
}

fn prepare(exp: Experiment, seed: u64, opts: &BenchOptions) -> Result<Prepared> {
    let cfg = &opts.config;
    let t = opts.samples.unwrap_or(exp.default_samples());
    let amp = opts.amplitude.unwrap_or(exp.default_amplitude());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(match exp {
        Experiment::ReactorStab | Experiment::ReactorLqr => {
            let sys = batch_reactor();
            let h = lti_experiment(&sys, t, amp, &mut rng)?;
            let rep = if exp == Experiment::ReactorLqr {
                design::lqr_dt(&h, &DMatrix::identity(4, 4), &DMatrix::identity(2, 2), cfg)?
            } else {
                design::stabilize_dt(&h, cfg)?
            };
            finish_lti(rep, &sys, Some(h), exp == Experiment::ReactorLqr, opts.horizon)
        }
        Experiment::NoisyReactor => {
            let sys = batch_reactor();
            let u = gaussian_sequence(&mut rng, 2, t, 1.0);
            let x0 = gaussian_vector(&mut rng, 4, 1.0);
            let traj = simulate_noisy(&sys, &x0, &u, amp, seed ^ 0x5eed_0000_0000_0001)?;
            let nh = NoisyHankelBlock::from_trajectory(&traj)?.with_true_dynamics(&sys.a);
            let rep = design::robust_stabilize(&nh, cfg.maximize_alpha, cfg)?;
            finish_lti(rep, &sys, nh.clean(), false, opts.horizon)
        }
        Experiment::CtDoubleIntegrator => {
            let sys = double_integrator();
            let u = uniform_sequence(&mut rng, 1, t, amp);
            let x0 = uniform_vector(&mut rng, 2, amp);
            let dt = 0.1;
            let traj = simulate_sampled_ct(&sys, dt, &x0, &u)?;
            let x = columns(&traj.states.as_ref().expect("states are recorded")[..t]);
            let xd = columns(traj.derivatives.as_ref().expect("derivatives are recorded"));
            let uu = columns(&u);
            let rep = design::stabilize_ct(&uu, &x, &xd, cfg)?;
            let clean = HankelBlock { u0: uu, x0: x, x1: xd };
            let mut p = finish_lti(rep, &sys, Some(clean), false, 0);
            if let Some(cl) = &p.closed {
                // forward Euler with a step well below the closed-loop time constants
                let h = 0.01;
                let step = DMatrix::identity(2, 2) + cl * h;
                p.norms = power_norms(&step, unit_start(2), opts.horizon);
            }
            p
        }
        Experiment::Pendulum => {
            let params = PendulumParams::default();
            let plant = params.plant();
            let u = uniform_sequence(&mut rng, 1, t, amp);
            let x0 = uniform_vector(&mut rng, 2, amp);
            let traj = simulate_pendulum(&params, &x0, &u)?;
            let h = HankelBlock::from_deviation(&traj, &plant.x_eq, &plant.u_eq)?;
            let d0 = columns(traj.remainder.as_ref().expect("remainder is recorded"));
            let rep = design::stabilize_nonlinear(&plant, &h, Some(&d0), cfg)?;
            let clean = HankelBlock { x1: &h.x1 - &d0, ..h };
            let sys = params.linearization();
            let mut p = finish_lti(rep, &sys, Some(clean), false, 0);
            if let Some(k) = &p.report.gain {
                let mut x = DVector::from_vec(vec![0.1, 0.0]);
                p.norms = Vec::with_capacity(opts.horizon + 1);
                for _ in 0..=opts.horizon {
                    p.norms.push(x.norm());
                    let u = affine_law(k, &plant, &x);
                    x = plant.step(&x, &u);
                }
            }
            p
        }
        Experiment::TwoCart => {
            let plant = two_cart_io();
            let traj = io_experiment(&plant, t, amp, seed, None)?;
            let cd = ChiData::from_trajectory(&traj, plant.n())?;
            let d = design_output_feedback(&cd, cfg)?;
            let closed = match &d.controller {
                Some(c) => Some(closed_loop_matrix(&plant, c)?),
                None => None,
            };
            Prepared {
                norms: closed
                    .as_ref()
                    .map_or_else(Vec::new, |c| power_norms(c, unit_start(c.nrows()), opts.horizon)),
                clean: Some(cd.as_hankel()),
                closed,
                report: d.report,
                dare_gap: None,
            }
        }
    })
}

fn finish_lti(
    mut report: DesignReport,
    sys: &LtiSystem,
    clean: Option<HankelBlock>,
    lqr: bool,
    horizon: usize,
) -> Prepared {
    let closed = report.gain.as_ref().map(|k| sys.closed_loop(k));
    report
        .attach_oracle(&sys.a, &sys.b)
        .expect("gain dimensions match the plant");
    let dare_gap = match (&report.gain, lqr) {
        (Some(k), true) => dare(
            &sys.a,
            &sys.b,
            &DMatrix::identity(sys.n(), sys.n()),
            &DMatrix::identity(sys.m(), sys.m()),
        )
        .ok()
        .map(|d| (k - d.k).norm()),
        _ => None,
    };
    let norms = closed
        .as_ref()
        .map_or_else(Vec::new, |c| power_norms(c, unit_start(sys.n()), horizon));
    Prepared {
        report,
        clean,
        closed,
        norms,
        dare_gap,
    }
}

/// Design and verify one seed of `exp`.
pub fn run_seed(exp: Experiment, seed: u64, opts: &BenchOptions) -> SeedOutcome {
    let mut outcome = SeedOutcome {
        seed,
        status: design::DesignStatus::NumericalFailure,
        success: false,
        data_measure: None,
        oracle_measure: None,
        soundness_gap: None,
        alpha: None,
        gamma: None,
        gamma1: None,
        gamma2: None,
        gamma_bound_ok: None,
        dare_gap: None,
        gain: None,
        message: None,
        norms: Vec::new(),
    };
    let prepared = match prepare(exp, seed, opts) {
        Ok(p) => p,
        Err(e) => {
            outcome.message = Some(e.to_string());
            return outcome;
        }
    };
    let rep = &prepared.report;
    let measure = |m: &DMatrix<f64>| {
        if exp.continuous() {
            spectral_abscissa(m)
        } else {
            spectral_radius(m)
        }
    };
    outcome.status = rep.status;
    outcome.alpha = rep.alpha;
    outcome.gamma = rep.diagnostics.gamma;
    outcome.gamma1 = rep.diagnostics.gamma1;
    outcome.gamma2 = rep.diagnostics.gamma2;
    outcome.gamma_bound_ok = rep.diagnostics.gamma_bound_ok;
    outcome.dare_gap = prepared.dare_gap;
    outcome.gain = rep.gain.clone();
    outcome.message = rep.message.clone();
    outcome.norms = prepared.norms;
    if let (Some(k), Some(closed)) = (&rep.gain, &prepared.closed) {
        let oracle = measure(closed);
        outcome.oracle_measure = Some(oracle);
        if let Some(clean) = &prepared.clean {
            match verify_gain(clean, k, SUCCESS_MARGIN, opts.config.rank_tol) {
                Ok(_) => {
                    let gk =
                        crate::data_repr::gk_for_gain(clean, k, opts.config.rank_tol).expect("checked by verify_gain");
                    let data = measure(&gk.closed_loop);
                    outcome.data_measure = Some(data);
                    outcome.soundness_gap = Some((data - oracle).abs());
                }
                Err(e) => outcome.message = Some(e.to_string()),
            }
        }
        let stable = if exp.continuous() {
            oracle < 0.0
        } else {
            oracle < 1.0 - SUCCESS_MARGIN
        };
        let lqr_ok = exp != Experiment::ReactorLqr || prepared.dare_gap.is_some_and(|g| g <= LQR_GAP_TOL);
        outcome.success = rep.status.is_feasible() && stable && lqr_ok;
    }
    outcome
}
