//! `ddctl`: simulate benchmark experiments, design controllers from the
//! recorded data and run seeded Monte Carlo batches.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ddctl::bench::{self, BenchOptions, Experiment};
use ddctl::design::{self, DesignReport, DesignStatus, Method};
use ddctl::hankel::{HankelBlock, NoisyHankelBlock};
use ddctl::io::{self, ReportFile, TrajectoryMeta};
use ddctl::linalg::columns;
use ddctl::lti_sim::{self, Trajectory};
use ddctl::oracles::dare;
use ddctl::output_feedback::{self, ChiData};
use ddctl::{Config, Error};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;
const EXIT_UNVERIFIED: u8 = 5;

/// Seed offset of the measurement noise, so that input and noise draws differ.
const NOISE_SEED: u64 = 0x5eed_0000_0000_0001;

#[derive(Parser)]
#[command(name = "ddctl", version, about = "Data-driven controller design")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record an open-loop experiment on a benchmark plant.
    Simulate(SimulateArgs),
    /// Design a controller from a recorded experiment.
    Design(DesignArgs),
    /// Run one example over many seeds.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
enum BenchPlant {
    BatchReactor,
    Pendulum,
    TwoCartIo,
    DoubleIntegrator,
}

impl BenchPlant {
    fn name(self) -> &'static str {
        match self {
            BenchPlant::BatchReactor => "batch_reactor",
            BenchPlant::Pendulum => "pendulum",
            BenchPlant::TwoCartIo => "two_cart_io",
            BenchPlant::DoubleIntegrator => "double_integrator",
        }
    }

    fn default_samples(self) -> usize {
        match self {
            BenchPlant::BatchReactor => 15,
            BenchPlant::Pendulum => 5,
            BenchPlant::TwoCartIo => 9,
            BenchPlant::DoubleIntegrator => 6,
        }
    }

    fn default_amplitude(self) -> f64 {
        match self {
            BenchPlant::Pendulum => 0.1,
            _ => 1.0,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    bench: BenchPlant,
    /// Number of input samples.
    #[arg(long = "T")]
    samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Amplitude of the random input and initial state.
    #[arg(long)]
    amp: Option<f64>,
    /// Amplitude of the uniform measurement noise (batch reactor only).
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    /// Sampling period of the derivative records (double integrator only).
    #[arg(long, default_value_t = 0.1)]
    dt: f64,
    /// Trajectory CSV; the metadata is written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DesignArgs {
    #[arg(value_parser = parse_method)]
    method: Method,
    /// Trajectory CSV written by `simulate` (or in the same format).
    #[arg(long = "in")]
    input: PathBuf,
    /// Report file; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// State weight: `identity` or a JSON file holding a list of rows.
    #[arg(long = "Qx", default_value = "identity")]
    qx: String,
    /// Input weight: `identity` or a JSON file holding a list of rows.
    #[arg(long = "R", default_value = "identity")]
    r: String,
    /// Order of the input/output model (output feedback).
    #[arg(long)]
    n: Option<usize>,
    /// Maximize α in the robust and nonlinear programs.
    #[arg(long, conflicts_with = "no_maximize_alpha")]
    maximize_alpha: bool,
    /// Only look for a feasible α.
    #[arg(long)]
    no_maximize_alpha: bool,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(value_parser = parse_experiment)]
    example: Experiment,
    #[arg(long, default_value_t = 100)]
    seeds: u64,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Input amplitude, or noise amplitude for `noisy-reactor`.
    #[arg(long)]
    amp: Option<f64>,
    /// Samples per experiment.
    #[arg(long = "T")]
    samples: Option<usize>,
    /// Length of the closed-loop runs written as plot data.
    #[arg(long, default_value_t = 200)]
    horizon: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for `summary.json` and the per-seed norm files.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct ConfigOverrides {
    #[arg(long)]
    lmi_margin: Option<f64>,
    #[arg(long)]
    rank_tol: Option<f64>,
    #[arg(long)]
    stability_margin: Option<f64>,
    #[arg(long)]
    max_iter: Option<u32>,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse::<Method>().map_err(|e| e.to_string())
}

fn parse_experiment(s: &str) -> Result<Experiment, String> {
    s.parse::<Experiment>().map_err(|e| e.to_string())
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidArgument(_) | Error::UnknownBenchmark(_) => EXIT_USAGE,
            _ => EXIT_FAILURE,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(args) => simulate(&args).map(|()| 0),
        Command::Design(args) => design(&args),
        Command::Bench(args) => run_bench(&args).map(|()| 0),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn load_config(path: Option<&Path>, o: &ConfigOverrides) -> Result<Config, Failure> {
    let mut cfg = match path {
        Some(p) => Config::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => Config::default(),
    };
    if let Some(v) = o.lmi_margin {
        cfg.lmi_margin = v;
    }
    if let Some(v) = o.rank_tol {
        cfg.rank_tol = v;
    }
    if let Some(v) = o.stability_margin {
        cfg.stability_margin = v;
    }
    if let Some(v) = o.max_iter {
        cfg.solver.max_iter = v;
    }
    Ok(cfg)
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let t = args.samples.unwrap_or(args.bench.default_samples());
    let amp = args.amp.unwrap_or(args.bench.default_amplitude());
    if t == 0 {
        return Err(usage("--T must be positive"));
    }
    if !(amp.is_finite() && amp > 0.0) || !(args.noise.is_finite() && args.noise >= 0.0) {
        return Err(usage("amplitudes must be finite and nonnegative"));
    }
    if args.noise > 0.0 && args.bench != BenchPlant::BatchReactor {
        return Err(usage("--noise applies to batch_reactor only"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let traj = match args.bench {
        BenchPlant::BatchReactor => {
            let sys = lti_sim::batch_reactor();
            let u = lti_sim::generate_pe_input_with(&mut rng, sys.m(), t, sys.n() + 1, amp)?;
            let x0 = lti_sim::uniform_vector(&mut rng, sys.n(), amp);
            if args.noise > 0.0 {
                lti_sim::simulate_noisy(&sys, &x0, &u, args.noise, args.seed ^ NOISE_SEED)?
            } else {
                lti_sim::simulate_lti(&sys, &x0, &u)?
            }
        }
        BenchPlant::Pendulum => {
            let u = lti_sim::uniform_sequence(&mut rng, 1, t, amp);
            let x0 = lti_sim::uniform_vector(&mut rng, 2, amp);
            lti_sim::simulate_pendulum(&lti_sim::PendulumParams::default(), &x0, &u)?
        }
        BenchPlant::TwoCartIo => output_feedback::io_experiment(&lti_sim::two_cart_io(), t, amp, args.seed, None)?,
        BenchPlant::DoubleIntegrator => {
            let u = lti_sim::uniform_sequence(&mut rng, 1, t, amp);
            let x0 = lti_sim::uniform_vector(&mut rng, 2, amp);
            lti_sim::simulate_sampled_ct(&lti_sim::double_integrator(), args.dt, &x0, &u)?
        }
    };
    let traj = Trajectory {
        seed: Some(args.seed),
        ..traj
    };
    let meta = TrajectoryMeta {
        bench: Some(args.bench.name().to_string()),
        amplitude: Some(amp),
        noise_amplitude: (args.noise > 0.0).then_some(args.noise),
        ..TrajectoryMeta::of(&traj)
    };
    io::write_trajectory(&args.out, &traj, &meta)?;
    Ok(())
}

fn read_weight(spec: &str, dim: usize) -> Result<DMatrix<f64>, Failure> {
    if spec == "identity" {
        return Ok(DMatrix::identity(dim, dim));
    }
    let text = std::fs::read_to_string(spec).map_err(|e| usage(format!("{spec}: {e}")))?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| usage(format!("{spec}: {e}")))?;
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(usage(format!("{spec}: expected a {dim}×{dim} matrix")));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| rows[i][j]))
}

/// Clean states when present, otherwise the measured ones.
fn state_block(traj: &Trajectory) -> Result<HankelBlock, Failure> {
    match (&traj.states, &traj.measured) {
        (_, Some(z)) => Ok(HankelBlock::from_samples(&traj.inputs, z)?),
        (Some(_), None) => Ok(HankelBlock::from_trajectory(traj)?),
        (None, None) => Err(usage("trajectory has no state channel")),
    }
}

fn design(args: &DesignArgs) -> Result<u8, Failure> {
    let mut cfg = load_config(args.config.as_deref(), &args.overrides)?;
    if args.maximize_alpha {
        cfg.maximize_alpha = true;
    }
    if args.no_maximize_alpha {
        cfg.maximize_alpha = false;
    }
    let (traj, meta) = io::read_trajectory(&args.input)?;
    let bench = meta.as_ref().and_then(|m| m.bench.clone());
    let mut extra = serde_json::Map::new();
    extra.insert("seed".into(), json!(traj.seed));
    extra.insert("bench".into(), json!(bench));

    let report = match args.method {
        Method::StateFeedback => {
            let h = state_block(&traj)?;
            let mut rep = design::stabilize_dt(&h, &cfg)?;
            attach_lti_oracle(&mut rep, bench.as_deref())?;
            rep
        }
        Method::StateFeedbackCt => {
            let states = traj
                .states
                .as_ref()
                .ok_or_else(|| usage("trajectory has no state channel"))?;
            let xdot = traj
                .derivatives
                .as_ref()
                .ok_or_else(|| usage("trajectory has no derivative channel"))?;
            let t = traj.steps();
            let mut rep = design::stabilize_ct(&columns(&traj.inputs), &columns(&states[..t]), &columns(xdot), &cfg)?;
            attach_lti_oracle(&mut rep, bench.as_deref())?;
            rep
        }
        Method::Lqr => {
            let h = state_block(&traj)?;
            let qx = read_weight(&args.qx, h.n())?;
            let r = read_weight(&args.r, h.m())?;
            let mut rep = design::lqr_dt(&h, &qx, &r, &cfg)?;
            if bench.as_deref() == Some("batch_reactor") {
                let sys = lti_sim::batch_reactor();
                rep.attach_oracle(&sys.a, &sys.b)?;
                if let Some(k) = &rep.gain {
                    let d = dare(&sys.a, &sys.b, &qx, &r)?;
                    extra.insert("dare_gap".into(), json!((k - &d.k).norm()));
                }
            }
            rep
        }
        Method::Robust => {
            let mut nh = if traj.measured.is_some() {
                NoisyHankelBlock::from_trajectory(&traj)?
            } else {
                NoisyHankelBlock::from_clean(&HankelBlock::from_trajectory(&traj)?)
            };
            if bench.as_deref() == Some("batch_reactor") {
                nh = nh.with_true_dynamics(&lti_sim::batch_reactor().a);
            }
            let mut rep = design::robust_stabilize(&nh, cfg.maximize_alpha, &cfg)?;
            attach_lti_oracle(&mut rep, bench.as_deref())?;
            rep
        }
        Method::Nonlinear => {
            if bench.as_deref() != Some("pendulum") {
                return Err(usage("nonlinear design needs pendulum data (metadata `bench`)"));
            }
            let params = lti_sim::PendulumParams::default();
            let plant = params.plant();
            let h = HankelBlock::from_deviation(&traj, &plant.x_eq, &plant.u_eq)?;
            let d0 = traj.remainder.as_ref().map(|d| columns(d));
            let mut rep = design::stabilize_nonlinear(&plant, &h, d0.as_ref(), &cfg)?;
            let lin = params.linearization();
            rep.attach_oracle(&lin.a, &lin.b)?;
            rep
        }
        Method::OutputFeedback => {
            let n = args
                .n
                .or(meta.as_ref().and_then(|m| m.n))
                .ok_or_else(|| usage("--n is required"))?;
            let cd = ChiData::from_trajectory(&traj, n)?;
            let out = output_feedback::design_output_feedback(&cd, &cfg)?;
            if let Some(ctrl) = &out.controller {
                let real = ctrl.realize();
                extra.insert("controller".into(), json!(ctrl));
                extra.insert(
                    "realization".into(),
                    json!({
                        "A_c": ddctl::linalg::to_rows(&real.a),
                        "B_c": ddctl::linalg::to_rows(&real.b),
                        "C_c": ddctl::linalg::to_rows(&real.c),
                        "D_c": ddctl::linalg::to_rows(&real.d),
                    }),
                );
                if bench.as_deref() == Some("two_cart_io") {
                    let rho = output_feedback::closed_loop_radius(&lti_sim::two_cart_io(), ctrl)?;
                    extra.insert("rho_oracle".into(), json!(rho));
                }
            }
            out.report
        }
    };

    let mut file = ReportFile::new(&cfg, &report);
    file.input = Some(args.input.display().to_string());
    file.extra = serde_json::Value::Object(extra.clone());
    match &args.out {
        Some(path) => io::write_json(path, &file)?,
        None => println!("{}", serde_json::to_string_pretty(&file).map_err(Error::from)?),
    }

    let oracle_rejects = match extra.get("rho_oracle").and_then(|v| v.as_f64()) {
        Some(rho) => rho >= 1.0 - cfg.stability_margin,
        None => report.oracle_stable(cfg.stability_margin) == Some(false),
    };
    Ok(match report.status {
        DesignStatus::Infeasible => EXIT_INFEASIBLE,
        DesignStatus::NumericalFailure => EXIT_NUMERICAL,
        DesignStatus::Feasible if !report.verified || oracle_rejects => EXIT_UNVERIFIED,
        DesignStatus::Feasible => 0,
    })
}

fn attach_lti_oracle(rep: &mut DesignReport, bench: Option<&str>) -> Result<(), Failure> {
    let sys = match bench {
        Some("batch_reactor") => lti_sim::batch_reactor(),
        Some("double_integrator") => lti_sim::double_integrator(),
        _ => return Ok(()),
    };
    if rep.method.is_continuous() != (bench == Some("double_integrator")) {
        return Ok(());
    }
    rep.attach_oracle(&sys.a, &sys.b)?;
    Ok(())
}

fn run_bench(args: &BenchArgs) -> Result<(), Failure> {
    let config = load_config(args.config.as_deref(), &args.overrides)?;
    let opts = BenchOptions {
        seeds: args.seeds,
        first_seed: args.first_seed,
        samples: args.samples,
        amplitude: args.amp,
        horizon: args.horizon,
        config,
    };
    let summary = bench::run_bench(args.example, &opts);
    let dir = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("bench-{}", args.example)));
    bench::write_bench(&dir, &summary)?;
    println!(
        "{}: {}/{} successful ({:.2}), {} feasible, {} soundness discrepancies; results in {}",
        summary.experiment,
        summary.successes,
        summary.seeds,
        summary.success_rate,
        summary.feasible,
        summary.soundness_discrepancies,
        dir.display()
    );
    Ok(())
}
