//! Ground-truth plants, experiment simulation and excitation signals.
//!
//! Everything here exists to *produce* data and to *check* designs. The design
//! routines in [`crate::design`] and [`crate::output_feedback`] only ever see
//! the Hankel matrices built from a [`Trajectory`].

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{dims, Error, Result};
use crate::hankel;
use crate::linalg::{from_rows, RANK_TOL};
use crate::output_feedback::IoCoefficients;

/// Maximum number of redraws in [`generate_pe_input`].
pub const PE_MAX_DRAWS: usize = 100;

/// Discrete-time linear plant `x⁺ = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(dims("LtiSystem A", "square n×n with n ≥ 1", format!("{:?}", a.shape())));
        }
        let m = b.ncols();
        if b.nrows() != n || m == 0 {
            return Err(dims(
                "LtiSystem B",
                format!("{n}×m with m ≥ 1"),
                format!("{:?}", b.shape()),
            ));
        }
        let p = c.nrows();
        if c.ncols() != n {
            return Err(dims("LtiSystem C", format!("p×{n}"), format!("{:?}", c.shape())));
        }
        if d.shape() != (p, m) {
            return Err(dims("LtiSystem D", format!("{p}×{m}"), format!("{:?}", d.shape())));
        }
        Ok(Self { a, b, c, d })
    }

    /// State-only plant: `C = I`, `D = 0`.
    pub fn state_only(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        Self::new(a, b, DMatrix::identity(n, n), DMatrix::zeros(n, m))
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    pub fn output(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.c * x + &self.d * u
    }

    /// `[B AB ... A^{n-1}B]`.
    pub fn controllability_matrix(&self) -> DMatrix<f64> {
        let (n, m) = (self.n(), self.m());
        let mut out = DMatrix::zeros(n, n * m);
        let mut blk = self.b.clone();
        for j in 0..n {
            out.view_mut((0, j * m), (n, m)).copy_from(&blk);
            blk = &self.a * blk;
        }
        out
    }

    pub fn is_controllable(&self) -> bool {
        crate::linalg::rank(&self.controllability_matrix(), 1e-10) == self.n()
    }

    /// `A + B K`.
    pub fn closed_loop(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        &self.a + &self.b * k
    }
}

type TransitionFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Nonlinear plant `x⁺ = f(x, u)` with a known equilibrium and its linearization.
#[derive(Clone)]
pub struct NonlinearPlant {
    transition: Arc<TransitionFn>,
    pub x_eq: DVector<f64>,
    pub u_eq: DVector<f64>,
    /// `∂f/∂x` at the equilibrium.
    pub a: DMatrix<f64>,
    /// `∂f/∂u` at the equilibrium.
    pub b: DMatrix<f64>,
}

impl fmt::Debug for NonlinearPlant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NonlinearPlant")
            .field("x_eq", &self.x_eq)
            .field("u_eq", &self.u_eq)
            .field("a", &self.a)
            .field("b", &self.b)
            .finish_non_exhaustive()
    }
}

impl NonlinearPlant {
    /// Fails when the dimensions disagree or `f(x̄, ū) ≠ x̄` beyond 1e-12.
    pub fn new<F>(
        transition: F,
        x_eq: DVector<f64>,
        u_eq: DVector<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
    ) -> Result<Self>
    where
        F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    {
        let n = x_eq.len();
        let m = u_eq.len();
        if a.shape() != (n, n) {
            return Err(dims("NonlinearPlant A", format!("{n}×{n}"), format!("{:?}", a.shape())));
        }
        if b.shape() != (n, m) {
            return Err(dims("NonlinearPlant B", format!("{n}×{m}"), format!("{:?}", b.shape())));
        }
        let fx = transition(&x_eq, &u_eq);
        if fx.len() != n || (&fx - &x_eq).amax() > 1e-12 {
            return Err(Error::InvalidArgument(
                "equilibrium pair does not satisfy f(x̄, ū) = x̄".into(),
            ));
        }
        Ok(Self {
            transition: Arc::new(transition),
            x_eq,
            u_eq,
            a,
            b,
        })
    }

    /// A linear plant viewed as a nonlinear one (zero remainder).
    pub fn from_linear(sys: &LtiSystem) -> Self {
        let lin = sys.clone();
        Self {
            transition: Arc::new(move |x, u| lin.step(x, u)),
            x_eq: DVector::zeros(sys.n()),
            u_eq: DVector::zeros(sys.m()),
            a: sys.a.clone(),
            b: sys.b.clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.x_eq.len()
    }

    pub fn m(&self) -> usize {
        self.u_eq.len()
    }

    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.transition)(x, u)
    }

    /// Higher-order remainder `d = f(x,u) − x̄ − A δx − B δu`.
    pub fn remainder(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let dx = x - &self.x_eq;
        let du = u - &self.u_eq;
        self.step(x, u) - &self.x_eq - &self.a * dx - &self.b * du
    }
}

/// Euler-discretized inverted pendulum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PendulumParams {
    /// Sampling time Δ in seconds.
    pub dt: f64,
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    /// Viscous friction coefficient μ.
    pub friction: f64,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            dt: 0.1,
            mass: 1.0,
            length: 1.0,
            gravity: 9.8,
            friction: 0.01,
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.mass > 0.0 && self.length > 0.0) {
            return Err(Error::InvalidArgument(
                "pendulum requires positive sampling time, mass and length".into(),
            ));
        }
        Ok(())
    }

    fn gain_sin(&self) -> f64 {
        self.dt * self.gravity / self.length
    }

    fn damping(&self) -> f64 {
        1.0 - self.dt * self.friction / (self.mass * self.length * self.length)
    }

    fn input_gain(&self) -> f64 {
        self.dt / (self.mass * self.length * self.length)
    }

    pub fn step(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        DVector::from_vec(vec![
            x[0] + self.dt * x[1],
            self.gain_sin() * x[0].sin() + self.damping() * x[1] + self.input_gain() * u,
        ])
    }

    /// `d(k) = (0, (Δg/ℓ)(sin x₁ − x₁))`.
    pub fn remainder(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![0.0, self.gain_sin() * (x[0].sin() - x[0])])
    }

    /// Linearization at the upright equilibrium `(x̄, ū) = (0, 0)`.
    pub fn linearization(&self) -> LtiSystem {
        let a = from_rows(&[&[1.0, self.dt], &[self.gain_sin(), self.damping()]]);
        let b = from_rows(&[&[0.0], &[self.input_gain()]]);
        LtiSystem::state_only(a, b).expect("pendulum dimensions are fixed")
    }

    pub fn plant(&self) -> NonlinearPlant {
        let params = *self;
        let lin = self.linearization();
        NonlinearPlant::new(
            move |x, u| params.step(x, u[0]),
            DVector::zeros(2),
            DVector::zeros(1),
            lin.a,
            lin.b,
        )
        .expect("upright position is an equilibrium")
    }
}

/// Samples from one experiment.
///
/// Indices are absolute time steps starting at `start` (negative when an
/// output-feedback pre-window is recorded). With `N = inputs.len()`:
/// `states`, `measured` and `noise` hold `N + 1` samples; `outputs`,
/// `remainder` and `derivatives` hold `N`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub start: i64,
    pub inputs: Vec<DVector<f64>>,
    pub states: Option<Vec<DVector<f64>>>,
    /// Noisy state measurements `ζ = x + w`.
    pub measured: Option<Vec<DVector<f64>>>,
    /// Injected measurement noise, kept for oracle checks only.
    pub noise: Option<Vec<DVector<f64>>>,
    pub outputs: Option<Vec<DVector<f64>>>,
    /// Linearization remainder `d(k)` of a nonlinear experiment.
    pub remainder: Option<Vec<DVector<f64>>>,
    /// State derivative samples of a sampled continuous-time experiment.
    pub derivatives: Option<Vec<DVector<f64>>>,
    /// Sample period Δ in seconds, `0` for a pure discrete-time index.
    pub sample_period: f64,
    pub seed: Option<u64>,
}

fn check_channel(name: &'static str, chan: &Option<Vec<DVector<f64>>>, len: usize, dim: Option<usize>) -> Result<()> {
    if let Some(c) = chan {
        if c.len() != len {
            return Err(dims(name, format!("{len} samples"), format!("{} samples", c.len())));
        }
        let d = dim.or_else(|| c.first().map(|v| v.len())).unwrap_or(0);
        if let Some(bad) = c.iter().find(|v| v.len() != d) {
            return Err(dims(name, format!("dimension {d}"), format!("dimension {}", bad.len())));
        }
    }
    Ok(())
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.inputs.len()
    }

    pub fn m(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    pub fn n(&self) -> Option<usize> {
        self.states
            .as_ref()
            .or(self.measured.as_ref())
            .and_then(|s| s.first().map(|v| v.len()))
    }

    pub fn p(&self) -> Option<usize> {
        self.outputs.as_ref().and_then(|s| s.first().map(|v| v.len()))
    }

    /// Check that every present channel has the documented length and a
    /// consistent sample dimension.
    pub fn validate(&self) -> Result<()> {
        let len = self.steps();
        let m = self.m();
        if self.inputs.iter().any(|u| u.len() != m) {
            return Err(dims("Trajectory inputs", format!("dimension {m}"), "ragged"));
        }
        let n = self.n();
        check_channel("Trajectory states", &self.states, len + 1, n)?;
        check_channel("Trajectory measured", &self.measured, len + 1, n)?;
        check_channel("Trajectory noise", &self.noise, len + 1, n)?;
        check_channel("Trajectory outputs", &self.outputs, len, None)?;
        check_channel("Trajectory remainder", &self.remainder, len, n)?;
        check_channel("Trajectory derivatives", &self.derivatives, len, n)?;
        Ok(())
    }

    /// Slice index of absolute time `k`.
    pub fn index_of(&self, k: i64) -> Option<usize> {
        usize::try_from(k - self.start).ok()
    }
}

fn check_inputs(u: &[DVector<f64>], m: usize) -> Result<()> {
    if let Some(bad) = u.iter().find(|v| v.len() != m) {
        return Err(dims("input sequence", format!("dimension {m}"), bad.len()));
    }
    Ok(())
}

/// Noise-free run of `sys` from `x0` under the input sequence `u`.
pub fn simulate_lti(sys: &LtiSystem, x0: &DVector<f64>, u: &[DVector<f64>]) -> Result<Trajectory> {
    if x0.len() != sys.n() {
        return Err(dims("initial state", sys.n(), x0.len()));
    }
    check_inputs(u, sys.m())?;
    let mut states = Vec::with_capacity(u.len() + 1);
    let mut outputs = Vec::with_capacity(u.len());
    let mut x = x0.clone();
    for uk in u {
        outputs.push(sys.output(&x, uk));
        let next = sys.step(&x, uk);
        states.push(std::mem::replace(&mut x, next));
    }
    states.push(x);
    Ok(Trajectory {
        start: 0,
        inputs: u.to_vec(),
        states: Some(states),
        outputs: Some(outputs),
        ..Default::default()
    })
}

/// Like [`simulate_lti`] but also records `ζ(k) = x(k) + w(k)` with `w`
/// i.i.d. uniform on `[−amplitude, amplitude]`.
pub fn simulate_noisy(
    sys: &LtiSystem,
    x0: &DVector<f64>,
    u: &[DVector<f64>],
    amplitude: f64,
    seed: u64,
) -> Result<Trajectory> {
    if !(amplitude >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "noise amplitude must be ≥ 0, got {amplitude}"
        )));
    }
    let mut traj = simulate_lti(sys, x0, u)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = traj.states.as_ref().expect("simulate_lti records states");
    let noise: Vec<DVector<f64>> = states
        .iter()
        .map(|x| uniform_vector(&mut rng, x.len(), amplitude))
        .collect();
    traj.measured = Some(states.iter().zip(&noise).map(|(x, w)| x + w).collect());
    traj.noise = Some(noise);
    traj.seed = Some(seed);
    Ok(traj)
}

/// Pendulum experiment; the trajectory carries the remainder sequence `d`.
pub fn simulate_pendulum(params: &PendulumParams, x0: &DVector<f64>, u: &[DVector<f64>]) -> Result<Trajectory> {
    params.validate()?;
    if x0.len() != 2 {
        return Err(dims("pendulum initial state", 2, x0.len()));
    }
    check_inputs(u, 1)?;
    let mut states = Vec::with_capacity(u.len() + 1);
    let mut remainder = Vec::with_capacity(u.len());
    let mut x = x0.clone();
    for uk in u {
        remainder.push(params.remainder(&x));
        let next = params.step(&x, uk[0]);
        states.push(std::mem::replace(&mut x, next));
    }
    states.push(x);
    Ok(Trajectory {
        start: 0,
        inputs: u.to_vec(),
        outputs: None,
        states: Some(states),
        remainder: Some(remainder),
        sample_period: params.dt,
        ..Default::default()
    })
}

/// Generic nonlinear experiment; the remainder is evaluated from the stored
/// linearization.
pub fn simulate_nonlinear(plant: &NonlinearPlant, x0: &DVector<f64>, u: &[DVector<f64>]) -> Result<Trajectory> {
    if x0.len() != plant.n() {
        return Err(dims("initial state", plant.n(), x0.len()));
    }
    check_inputs(u, plant.m())?;
    let mut states = Vec::with_capacity(u.len() + 1);
    let mut remainder = Vec::with_capacity(u.len());
    let mut x = x0.clone();
    for uk in u {
        remainder.push(plant.remainder(&x, uk));
        let next = plant.step(&x, uk);
        states.push(std::mem::replace(&mut x, next));
    }
    states.push(x);
    Ok(Trajectory {
        inputs: u.to_vec(),
        states: Some(states),
        remainder: Some(remainder),
        ..Default::default()
    })
}

/// Forward-Euler run of the continuous-time plant `ẋ = A x + B u` with
/// zero-order-hold inputs, recording the exact derivative `ẋ(kΔ)` at every
/// sampling instant.
pub fn simulate_sampled_ct(sys: &LtiSystem, dt: f64, x0: &DVector<f64>, u: &[DVector<f64>]) -> Result<Trajectory> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sample period must be positive, got {dt}"
        )));
    }
    if x0.len() != sys.n() {
        return Err(dims("initial state", sys.n(), x0.len()));
    }
    check_inputs(u, sys.m())?;
    let mut states = Vec::with_capacity(u.len() + 1);
    let mut derivatives = Vec::with_capacity(u.len());
    let mut x = x0.clone();
    for uk in u {
        let xdot = sys.step(&x, uk);
        let next = &x + &xdot * dt;
        derivatives.push(xdot);
        states.push(std::mem::replace(&mut x, next));
    }
    states.push(x);
    Ok(Trajectory {
        inputs: u.to_vec(),
        states: Some(states),
        derivatives: Some(derivatives),
        sample_period: dt,
        ..Default::default()
    })
}

/// Vector with entries i.i.d. uniform on `[−amplitude, amplitude]`.
pub fn uniform_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize, amplitude: f64) -> DVector<f64> {
    if amplitude == 0.0 {
        return DVector::zeros(dim);
    }
    let dist = Uniform::new_inclusive(-amplitude, amplitude);
    DVector::from_iterator(dim, (0..dim).map(|_| dist.sample(rng)))
}

pub fn uniform_sequence<R: Rng + ?Sized>(rng: &mut R, m: usize, len: usize, amplitude: f64) -> Vec<DVector<f64>> {
    (0..len).map(|_| uniform_vector(rng, m, amplitude)).collect()
}

/// Vector with entries i.i.d. normal with zero mean and standard deviation `std`.
pub fn gaussian_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize, std: f64) -> DVector<f64> {
    DVector::from_iterator(dim, (0..dim).map(|_| std * rng.sample::<f64, _>(StandardNormal)))
}

pub fn gaussian_sequence<R: Rng + ?Sized>(rng: &mut R, m: usize, len: usize, std: f64) -> Vec<DVector<f64>> {
    (0..len).map(|_| gaussian_vector(rng, m, std)).collect()
}

/// Draw a uniform random input of `len` samples that is persistently
/// exciting of order `order`, redrawing from the same stream up to
/// [`PE_MAX_DRAWS`] times.
pub fn generate_pe_input(m: usize, len: usize, order: usize, amplitude: f64, seed: u64) -> Result<Vec<DVector<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    generate_pe_input_with(&mut rng, m, len, order, amplitude)
}

pub fn generate_pe_input_with<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    len: usize,
    order: usize,
    amplitude: f64,
) -> Result<Vec<DVector<f64>>> {
    if m == 0 || order == 0 {
        return Err(Error::InvalidArgument(
            "input dimension and order must be positive".into(),
        ));
    }
    let required = (m + 1) * order - 1;
    if len < required {
        return Err(Error::TooShort { required, actual: len });
    }
    for _ in 0..PE_MAX_DRAWS {
        let u = uniform_sequence(rng, m, len, amplitude);
        if hankel::is_persistently_exciting(&u, order, RANK_TOL).verdict {
            return Ok(u);
        }
    }
    Err(Error::ExcitationNotAchieved {
        order,
        attempts: PE_MAX_DRAWS,
    })
}

/// Named plants used by the examples and the acceptance suite.
#[derive(Debug, Clone)]
pub enum Benchmark {
    Lti(LtiSystem),
    Pendulum(PendulumParams),
    Io(IoCoefficients),
}

pub const BENCHMARK_NAMES: [&str; 3] = ["batch_reactor", "pendulum", "two_cart_io"];

pub fn benchmark(name: &str) -> Result<Benchmark> {
    match name {
        "batch_reactor" => Ok(Benchmark::Lti(batch_reactor())),
        "pendulum" => Ok(Benchmark::Pendulum(PendulumParams::default())),
        "two_cart_io" => Ok(Benchmark::Io(two_cart_io())),
        other => Err(Error::UnknownBenchmark(other.to_string())),
    }
}

/// Batch reactor discretized with a 0.1 s sampling time (full state output).
pub fn batch_reactor() -> LtiSystem {
    let a = from_rows(&[
        &[1.178, 0.001, 0.511, -0.403],
        &[-0.051, 0.661, -0.011, 0.061],
        &[0.076, 0.335, 0.560, 0.382],
        &[0.0, 0.335, 0.089, 0.849],
    ]);
    let b = from_rows(&[&[0.004, -0.087], &[0.467, 0.001], &[0.213, -0.235], &[0.213, -0.016]]);
    LtiSystem::state_only(a, b).expect("batch reactor dimensions are fixed")
}

/// Two carts coupled by a spring, as an order-4 SISO difference equation
/// sampled at 1 s (unit stiffness).
pub fn two_cart_io() -> IoCoefficients {
    IoCoefficients::siso(vec![1.0, -2.311, 2.623, -2.311], vec![0.039, 0.383, 0.383, 0.039])
        .expect("two-cart coefficients are consistent")
}

/// Continuous-time two-cart model with spring stiffness `stiffness`. Kept
/// for reference; the discrete coefficients of [`two_cart_io`] are used for
/// design and simulation.
pub fn two_cart_continuous(stiffness: f64) -> LtiSystem {
    let k = stiffness;
    let a = from_rows(&[
        &[0.0, 1.0, 0.0, 0.0],
        &[-k, 0.0, k, 0.0],
        &[0.0, 0.0, 0.0, 1.0],
        &[k, 0.0, -k, 0.0],
    ]);
    let b = from_rows(&[&[0.0], &[1.0], &[0.0], &[0.0]]);
    let c = from_rows(&[&[0.0, 0.0, 1.0, 0.0]]);
    LtiSystem::new(a, b, c, DMatrix::zeros(1, 1)).expect("two-cart dimensions are fixed")
}

/// Continuous-time double integrator `ẍ = u`.
pub fn double_integrator() -> LtiSystem {
    LtiSystem::state_only(from_rows(&[&[0.0, 1.0], &[0.0, 0.0]]), from_rows(&[&[0.0], &[1.0]]))
        .expect("double integrator dimensions are fixed")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    #[test]
    fn pure_delay() {
        let sys = LtiSystem::state_only(DMatrix::zeros(1, 1), DMatrix::identity(1, 1)).unwrap();
        let t = simulate_lti(&sys, &scalar(0.0), &[scalar(1.0), scalar(2.0)]).unwrap();
        let x: Vec<f64> = t.states.unwrap().iter().map(|v| v[0]).collect();
        assert_eq!(x, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn frozen_state() {
        let sys = LtiSystem::state_only(DMatrix::identity(2, 2), DMatrix::zeros(2, 1)).unwrap();
        let x0 = DVector::from_vec(vec![0.3, -1.2]);
        let u: Vec<_> = (0..5).map(|k| scalar(k as f64)).collect();
        let t = simulate_lti(&sys, &x0, &u).unwrap();
        assert!(t.states.unwrap().iter().all(|x| *x == x0));
    }

    #[test]
    fn reactor_impulse_response_is_first_column_of_b() {
        let sys = batch_reactor();
        let u = vec![DVector::from_vec(vec![1.0, 0.0])];
        let t = simulate_lti(&sys, &DVector::zeros(4), &u).unwrap();
        let x1 = &t.states.unwrap()[1];
        assert_eq!(x1.as_slice(), &[0.004, 0.467, 0.213, 0.213]);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let sys = batch_reactor();
        assert!(simulate_lti(&sys, &DVector::zeros(3), &[]).is_err());
        assert!(simulate_lti(&sys, &DVector::zeros(4), &[scalar(1.0)]).is_err());
        assert!(LtiSystem::state_only(DMatrix::zeros(2, 3), DMatrix::zeros(2, 1)).is_err());
    }

    #[test]
    fn noise_free_measurement_at_zero_amplitude() {
        let sys = batch_reactor();
        let u = generate_pe_input(2, 15, 5, 1.0, 4).unwrap();
        let t = simulate_noisy(&sys, &DVector::from_element(4, 0.5), &u, 0.0, 9).unwrap();
        assert_eq!(t.measured, t.states);
        assert!(t.noise.unwrap().iter().all(|w| w.amax() == 0.0));
    }

    #[test]
    fn noise_respects_support_and_seed() {
        let sys = batch_reactor();
        let u = generate_pe_input(2, 15, 5, 1.0, 4).unwrap();
        let x0 = DVector::from_element(4, 0.5);
        let a = simulate_noisy(&sys, &x0, &u, 0.01, 21).unwrap();
        let b = simulate_noisy(&sys, &x0, &u, 0.01, 21).unwrap();
        assert_eq!(a, b);
        assert!(a.noise.as_ref().unwrap().iter().all(|w| w.amax() <= 0.01));
        let c = simulate_noisy(&sys, &x0, &u, 0.01, 22).unwrap();
        assert_ne!(a.noise, c.noise);
    }

    #[test]
    fn pendulum_equilibrium_and_linearization() {
        let p = PendulumParams::default();
        let u = vec![scalar(0.0); 10];
        let t = simulate_pendulum(&p, &DVector::zeros(2), &u).unwrap();
        assert!(t.states.unwrap().iter().all(|x| x.amax() == 0.0));
        assert!(t.remainder.unwrap().iter().all(|d| d.amax() == 0.0));

        let lin = p.linearization();
        let a = from_rows(&[&[1.0, 0.1], &[0.98, 0.999]]);
        assert!((lin.a - a).amax() < 1e-15);
        assert!((lin.b - from_rows(&[&[0.0], &[0.1]])).amax() < 1e-15);
    }

    #[test]
    fn pendulum_remainder_value() {
        let p = PendulumParams::default();
        let t = simulate_pendulum(&p, &DVector::from_vec(vec![0.1, 0.0]), &[scalar(0.0)]).unwrap();
        let d = &t.remainder.unwrap()[0];
        // 0.98 * (sin 0.1 − 0.1), evaluated independently
        let expected = 0.98 * (0.099_833_416_646_828_15 - 0.1);
        assert_eq!(d[0], 0.0);
        assert!((d[1] - expected).abs() < 1e-15);
        assert!((d[1] + 1.6325e-4).abs() < 1e-7);
    }

    #[test]
    fn pendulum_plant_matches_params() {
        let p = PendulumParams::default();
        let plant = p.plant();
        let x = DVector::from_vec(vec![0.05, -0.02]);
        let u = scalar(0.03);
        assert!((plant.step(&x, &u) - p.step(&x, 0.03)).amax() < 1e-15);
        assert!((plant.remainder(&x, &u) - p.remainder(&x)).amax() < 1e-15);
    }

    #[test]
    fn pe_input_length_precondition() {
        match generate_pe_input(1, 2, 2, 1.0, 0) {
            Err(Error::TooShort { required, actual }) => assert_eq!((required, actual), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
        let u = generate_pe_input(1, 3, 1, 1.0, 0).unwrap();
        assert_eq!(u.len(), 3);
    }

    #[test]
    fn pe_input_zero_amplitude_fails() {
        assert!(matches!(
            generate_pe_input(1, 10, 2, 0.0, 0),
            Err(Error::ExcitationNotAchieved { .. })
        ));
    }

    #[test]
    fn benchmarks_by_name() {
        match benchmark("batch_reactor").unwrap() {
            Benchmark::Lti(s) => assert_eq!(s.a[(0, 0)], 1.178),
            _ => panic!(),
        }
        match benchmark("two_cart_io").unwrap() {
            Benchmark::Io(c) => {
                assert_eq!(c.a_scalar(1), -2.311);
                assert_eq!(c.b_scalar(0), 0.039);
            }
            _ => panic!(),
        }
        match benchmark("pendulum").unwrap() {
            Benchmark::Pendulum(p) => {
                let plant = p.plant();
                assert_eq!(plant.x_eq.as_slice(), &[0.0, 0.0]);
                assert_eq!(plant.u_eq.as_slice(), &[0.0]);
            }
            _ => panic!(),
        }
        assert!(matches!(benchmark("nope"), Err(Error::UnknownBenchmark(_))));
    }

    #[test]
    fn sampled_ct_records_exact_derivatives() {
        let sys = double_integrator();
        let u = vec![scalar(1.0), scalar(-0.5), scalar(0.25)];
        let t = simulate_sampled_ct(&sys, 0.1, &DVector::from_vec(vec![1.0, 0.0]), &u).unwrap();
        t.validate().unwrap();
        let xs = t.states.as_ref().unwrap();
        for (k, xdot) in t.derivatives.as_ref().unwrap().iter().enumerate() {
            assert!((xdot - sys.step(&xs[k], &u[k])).amax() < 1e-15);
        }
    }

    #[test]
    fn pendulum_remainder_is_higher_order() {
        let p = PendulumParams::default();
        let ratios: Vec<f64> = (1..=4)
            .map(|j| {
                let x0 = DVector::from_vec(vec![0.3, -0.2]) * 10f64.powi(-j);
                let t = simulate_pendulum(&p, &x0, &[scalar(0.0)]).unwrap();
                t.remainder.unwrap()[0].norm() / x0.norm()
            })
            .collect();
        assert!(ratios.windows(2).all(|w| w[1] < w[0]), "{ratios:?}");
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(100))]

        #[test]
        fn simulation_satisfies_recursion(seed in proptest::prelude::any::<u64>(), n in 1usize..=6, m in 1usize..=3, p in 1usize..=3) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut draw = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0));
            let sys = LtiSystem::new(draw(n, n), draw(n, m), draw(p, n), draw(p, m)).unwrap();
            let x0 = uniform_vector(&mut rng, n, 1.0);
            let u = uniform_sequence(&mut rng, m, 20, 1.0);
            let t = simulate_lti(&sys, &x0, &u).unwrap();
            let (xs, ys) = (t.states.unwrap(), t.outputs.unwrap());
            for k in 0..20 {
                let scale = 1.0 + xs[k].amax() + u[k].amax();
                proptest::prop_assert!((&xs[k + 1] - &sys.a * &xs[k] - &sys.b * &u[k]).amax() <= 1e-12 * scale);
                proptest::prop_assert!((&ys[k] - &sys.c * &xs[k] - &sys.d * &u[k]).amax() <= 1e-12 * scale);
            }
        }
    }
}
