use super::*;
use crate::data_repr::gk_for_gain;
use crate::hankel::NoiseBlocks;
use crate::linalg::{columns, from_rows, max_sym_eigenvalue, min_sym_eigenvalue};
use crate::lti_sim::{
    batch_reactor, double_integrator, generate_pe_input_with, simulate_lti, simulate_noisy, simulate_pendulum,
    simulate_sampled_ct, uniform_sequence, uniform_vector, LtiSystem, PendulumParams,
};
use crate::oracles::{dare, dlyap, lqr_cost};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn cfg() -> Config {
    Config::default()
}

fn experiment(sys: &LtiSystem, t: usize, seed: u64) -> HankelBlock {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = generate_pe_input_with(&mut rng, sys.m(), t, sys.n() + 1, 1.0).unwrap();
    let x0 = uniform_vector(&mut rng, sys.n(), 1.0);
    HankelBlock::from_trajectory(&simulate_lti(sys, &x0, &u).unwrap()).unwrap()
}

fn scalar(a: f64, b: f64) -> LtiSystem {
    LtiSystem::state_only(from_rows(&[&[a]]), from_rows(&[&[b]])).unwrap()
}

fn oracle_rho(sys: &LtiSystem, rep: &DesignReport) -> f64 {
    spectral_radius(&sys.closed_loop(rep.gain.as_ref().unwrap()))
}

#[test]
fn method_names_round_trip() {
    for m in Method::ALL {
        assert_eq!(m.to_string().parse::<Method>().unwrap(), m);
        assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
    }
    assert!("state_feedback".parse::<Method>().is_err());
}

#[test]
fn scalar_unstable_plant_is_stabilized() {
    let sys = scalar(2.0, 1.0);
    let rep = stabilize_dt(&experiment(&sys, 3, 1), &cfg()).unwrap();
    assert_eq!(rep.status, DesignStatus::Feasible);
    let k = rep.gain.as_ref().unwrap()[(0, 0)];
    assert!((2.0 + k).abs() < 1.0, "K = {k}");
    assert!((rep.rho_data.unwrap() - (2.0 + k).abs()).abs() < 1e-8);
}

#[test]
fn scalar_stable_plant_stays_stable() {
    let sys = scalar(0.5, 1.0);
    let rep = stabilize_dt(&experiment(&sys, 3, 2), &cfg()).unwrap();
    assert_eq!(rep.status, DesignStatus::Feasible);
    assert!((0.5 + rep.gain.unwrap()[(0, 0)]).abs() < 1.0);
}

#[test]
fn batch_reactor_is_stabilized() {
    let sys = batch_reactor();
    for seed in 0..5 {
        let h = experiment(&sys, 15, seed);
        let mut rep = stabilize_dt(&h, &cfg()).unwrap();
        assert_eq!(rep.status, DesignStatus::Feasible, "seed {seed}: {:?}", rep.message);
        assert_eq!(rep.gain.as_ref().unwrap().shape(), (2, 4));
        rep.attach_oracle(&sys.a, &sys.b).unwrap();
        let rho = rep.rho_oracle.unwrap();
        assert!(rho < 1.0 - 1e-6, "seed {seed}: ρ = {rho}");
        assert!((rho - rep.rho_data.unwrap()).abs() < 1e-6);
        assert_eq!(rep.oracle_stable(1e-8), Some(true));
    }
}

#[test]
fn reference_reactor_gain_is_stabilizing() {
    let sys = batch_reactor();
    let k = from_rows(&[&[0.7610, -1.1363, 1.6945, -1.8123], &[3.5351, 0.4827, 3.3014, -2.6215]]);
    assert!(spectral_radius(&sys.closed_loop(&k)) < 1.0);
}

#[test]
fn rank_deficient_data_is_rejected() {
    let sys = batch_reactor();
    let h = experiment(&sys, 15, 3);
    let short = HankelBlock::new(
        h.u0.columns(0, 5).into_owned(),
        h.x0.columns(0, 5).into_owned(),
        h.x1.columns(0, 5).into_owned(),
    )
    .unwrap();
    assert!(matches!(stabilize_dt(&short, &cfg()), Err(Error::RankCondition { .. })));
    assert!(lqr_dt(&short, &DMatrix::identity(4, 4), &DMatrix::identity(2, 2), &cfg()).is_err());
}

#[test]
fn converse_spot_check() {
    // a stabilizing gain from the Riccati oracle yields a feasible point of the LMI
    let sys = batch_reactor();
    let h = experiment(&sys, 15, 4);
    let k = dare(&sys.a, &sys.b, &DMatrix::identity(4, 4), &DMatrix::identity(2, 2))
        .unwrap()
        .k;
    let gp = gk_for_gain(&h, &k, 1e-12).unwrap();
    let p = dlyap(&gp.closed_loop).unwrap();
    let q = &gp.g_k * &p;
    assert!((&h.x0 * &q - &p).amax() < 1e-8);
    let xq = &h.x1 * &q;
    let n = 4;
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&p);
    block.view_mut((0, n), (n, n)).copy_from(&xq);
    block.view_mut((n, 0), (n, n)).copy_from(&xq.transpose());
    block.view_mut((n, n), (n, n)).copy_from(&p);
    assert!(min_sym_eigenvalue(&block) > 1e-3);
}

#[test]
fn continuous_scalar_examples() {
    for (a, seed) in [(1.0, 1u64), (-1.0, 2)] {
        let sys = scalar(a, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = uniform_sequence(&mut rng, 1, 3, 1.0);
        let traj = simulate_sampled_ct(&sys, 0.1, &DVector::from_element(1, 0.7), &u).unwrap();
        let x0 = columns(&traj.states.as_ref().unwrap()[..3]);
        let xd = columns(traj.derivatives.as_ref().unwrap());
        let rep = stabilize_ct(&columns(&u), &x0, &xd, &cfg()).unwrap();
        assert_eq!(rep.status, DesignStatus::Feasible);
        let k = rep.gain.as_ref().unwrap()[(0, 0)];
        assert!(a + k < 0.0, "a = {a}, K = {k}");
        assert!((rep.abscissa_data.unwrap() - (a + k)).abs() < 1e-8);
    }
}

#[test]
fn double_integrator_is_stabilized_in_continuous_time() {
    let sys = double_integrator();
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = uniform_sequence(&mut rng, 1, 6, 1.0);
        let x0 = uniform_vector(&mut rng, 2, 1.0);
        let traj = simulate_sampled_ct(&sys, 0.1, &x0, &u).unwrap();
        let xs = columns(&traj.states.as_ref().unwrap()[..6]);
        let mut rep = stabilize_ct(&columns(&u), &xs, &columns(traj.derivatives.as_ref().unwrap()), &cfg()).unwrap();
        assert_eq!(rep.status, DesignStatus::Feasible);
        rep.attach_oracle(&sys.a, &sys.b).unwrap();
        assert!(rep.abscissa_oracle.unwrap() < 0.0);
        assert_eq!(rep.oracle_stable(1e-8), Some(true));
    }
}

#[test]
fn lqr_matches_riccati_on_batch_reactor() {
    let sys = batch_reactor();
    let (qx, r) = (DMatrix::identity(4, 4), DMatrix::identity(2, 2));
    let oracle = dare(&sys.a, &sys.b, &qx, &r).unwrap();
    for seed in 0..3 {
        let rep = lqr_dt(&experiment(&sys, 15, seed), &qx, &r, &cfg()).unwrap();
        assert_eq!(rep.status, DesignStatus::Feasible, "{:?}", rep.message);
        let k = rep.gain.as_ref().unwrap();
        let gap = (k - &oracle.k).norm();
        assert!(gap <= 1e-5, "seed {seed}: gap {gap}");
        let cost = lqr_cost(&sys.a, &sys.b, k, &qx, &r).unwrap();
        let obj = rep.objective.unwrap();
        assert!((obj - cost).abs() <= 1e-4 * cost, "objective {obj} vs cost {cost}");
    }
}

#[test]
fn lqr_scalar_matches_riccati_root() {
    let sys = scalar(0.5, 1.0);
    let rep = lqr_dt(
        &experiment(&sys, 3, 5),
        &DMatrix::identity(1, 1),
        &DMatrix::identity(1, 1),
        &cfg(),
    )
    .unwrap();
    let x = (0.25 + (0.0625f64 + 4.0).sqrt()) / 2.0;
    let k = -(0.5 * x) / (1.0 + x);
    let got = rep.gain.clone().unwrap()[(0, 0)];
    assert!((got - k).abs() < 1e-5, "{got} vs {k}: {rep:?}");
}

#[test]
fn lqr_without_state_weight_returns_zero_gain() {
    let sys = scalar(0.5, 1.0);
    let rep = lqr_dt(
        &experiment(&sys, 3, 6),
        &DMatrix::zeros(1, 1),
        &DMatrix::identity(1, 1),
        &cfg(),
    )
    .unwrap();
    assert_eq!(rep.status, DesignStatus::Feasible);
    let k = rep.gain.as_ref().unwrap();
    assert!(k.amax() < 1e-4, "K = {k}");
    assert!(rep.objective.unwrap().abs() < 1e-6);
    let zero = DMatrix::zeros(1, 1);
    assert_eq!(
        lqr_cost(&sys.a, &sys.b, &zero, &zero, &DMatrix::identity(1, 1)).unwrap(),
        0.0
    );
}

#[test]
fn lqr_rejects_bad_weights() {
    let h = experiment(&batch_reactor(), 15, 7);
    let i4 = DMatrix::identity(4, 4);
    assert!(lqr_dt(&h, &i4, &DMatrix::zeros(2, 2), &cfg()).is_err());
    assert!(lqr_dt(&h, &(-&i4), &DMatrix::identity(2, 2), &cfg()).is_err());
    assert!(lqr_dt(&h, &DMatrix::identity(3, 3), &DMatrix::identity(2, 2), &cfg()).is_err());
}

fn noisy_reactor(amp: f64, seed: u64) -> NoisyHankelBlock {
    let sys = batch_reactor();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = uniform_sequence(&mut rng, 2, 15, 1.0);
    let x0 = uniform_vector(&mut rng, 4, 1.0);
    let traj = simulate_noisy(&sys, &x0, &u, amp, seed.wrapping_add(1000)).unwrap();
    NoisyHankelBlock::from_trajectory(&traj)
        .unwrap()
        .with_true_dynamics(&sys.a)
}

#[test]
fn robust_design_on_noise_free_data() {
    let sys = batch_reactor();
    let nh = NoisyHankelBlock::from_clean(&experiment(&sys, 15, 8)).with_true_dynamics(&sys.a);
    let rep = robust_stabilize(&nh, true, &cfg()).unwrap();
    assert_eq!(rep.status, DesignStatus::Feasible);
    assert!(oracle_rho(&sys, &rep) < 1.0);
    assert_eq!(rep.diagnostics.gamma, Some(0.0));
    assert_eq!(rep.diagnostics.gamma_bound_ok, Some(true));
}

#[test]
fn robust_design_with_small_noise() {
    let sys = batch_reactor();
    for seed in 0..5 {
        let nh = noisy_reactor(0.01, seed);
        let rep = robust_stabilize(&nh, true, &cfg()).unwrap();
        assert_eq!(rep.status, DesignStatus::Feasible, "seed {seed}");
        assert!(rep.alpha.unwrap() > 0.0);
        assert!(oracle_rho(&sys, &rep) < 1.0, "seed {seed}");
        assert!(rep.diagnostics.gamma.unwrap() > 0.0);
        assert!(rep.diagnostics.assumption3_ok.is_some());
    }
}

#[test]
fn feasibility_mode_still_reports_alpha() {
    let rep = robust_stabilize(&noisy_reactor(0.01, 9), false, &cfg()).unwrap();
    assert_eq!(rep.status, DesignStatus::Feasible);
    assert!(rep.alpha.unwrap() >= cfg().lmi_margin * (1.0 - 1e-6));
}

#[test]
fn assumption2_examples() {
    let z1 = from_rows(&[&[1.0, 0.2, -0.4], &[0.3, 1.0, 0.5]]);
    assert_eq!(check_assumption2(&z1, &DMatrix::zeros(2, 3)).unwrap(), 0.0);
    assert!((check_assumption2(&z1, &z1).unwrap() - 1.0).abs() < 1e-10);
    assert!(check_assumption2(&z1, &DMatrix::zeros(3, 3)).is_err());
}

#[test]
fn assumption3_examples() {
    let nh = noisy_reactor(0.0, 10);
    let w0 = DMatrix::zeros(4, 15);
    let a3 = check_assumption3(&nh.u0, &nh.z0, &w0, &w0, &nh.z1).unwrap();
    assert_eq!((a3.gamma1, a3.gamma2), (0.0, 0.0));
    for alpha in [1e-6, 1e-2, 1.0] {
        assert!(a3.corollary_bound_ok(alpha));
    }
}

#[test]
fn assumption3_fails_at_one_half() {
    let nh = noisy_reactor(0.01, 11);
    let w = nh.noise.clone().unwrap();
    let a3 = check_assumption3(&nh.u0, &nh.z0, &w.w0, &w.w1, &nh.z1).unwrap();
    assert!(a3.gamma1 > 0.0);
    // γ₁ scales with the square of W0
    let scaled = &w.w0 * (0.5 / a3.gamma1).sqrt();
    let at_half = check_assumption3(&nh.u0, &nh.z0, &scaled, &w.w1, &nh.z1).unwrap();
    assert!((at_half.gamma1 - 0.5).abs() < 1e-9);
    let beyond = check_assumption3(&nh.u0, &nh.z0, &(&scaled * 1.001), &w.w1, &nh.z1).unwrap();
    assert!(!beyond.holds());
    assert!(!beyond.corollary_bound_ok(1.0));
    assert_eq!(beyond.implied_gamma(), f64::INFINITY);
}

#[test]
fn gershgorin_bound_examples() {
    assert_eq!(gershgorin_noise_bound(0.0, 4, 15, 3.0).unwrap(), 0.0);
    assert_eq!(
        gershgorin_noise_bound(1e-4, 4, 15, 0.0).unwrap(),
        2.0 * 4.0 * 1e-4 * 15.0
    );
    assert!(gershgorin_noise_bound(-1.0, 4, 15, 0.0).is_err());
}

#[test]
fn gershgorin_bound_dominates_residual() {
    let sys = batch_reactor();
    let sigma_a = sys.a.singular_values().max().powi(2);
    let bound = gershgorin_noise_bound(1e-4, 4, 15, sigma_a).unwrap();
    for seed in 0..100 {
        let nh = noisy_reactor(0.01, seed);
        let r0 = nh.residual.as_ref().unwrap();
        assert!(max_sym_eigenvalue(&(r0 * r0.transpose())) <= bound);
    }
}

fn pendulum_design(seed: u64) -> (DesignReport, PendulumParams) {
    let params = PendulumParams::default();
    let plant = params.plant();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u = uniform_sequence(&mut rng, 1, 5, 0.1);
    let x0 = uniform_vector(&mut rng, 2, 0.1);
    let traj = simulate_pendulum(&params, &x0, &u).unwrap();
    let h = HankelBlock::from_deviation(&traj, &plant.x_eq, &plant.u_eq).unwrap();
    let d0 = columns(traj.remainder.as_ref().unwrap());
    (stabilize_nonlinear(&plant, &h, Some(&d0), &cfg()).unwrap(), params)
}

#[test]
fn pendulum_is_locally_stabilized() {
    let lin = from_rows(&[&[1.0, 0.1], &[0.98, 0.999]]);
    let b = from_rows(&[&[0.0], &[0.1]]);
    for seed in 0..5 {
        let (rep, params) = pendulum_design(seed);
        assert_eq!(rep.status, DesignStatus::Feasible, "seed {seed}: {rep:?}");
        let k = rep.gain.as_ref().unwrap();
        assert!(spectral_radius(&(&lin + &b * k)) < 1.0);
        let plant = params.plant();
        let mut x = DVector::from_vec(vec![0.1, 0.0]);
        for _ in 0..200 {
            let u = affine_law(k, &plant, &x);
            x = plant.step(&x, &u);
        }
        assert!(x.norm() <= 1e-3, "seed {seed}: {}", x.norm());
        let d = &rep.diagnostics;
        assert!(d.gamma.unwrap() < 1e-3);
        assert_eq!(d.gamma_bound_ok, Some(d.gamma.unwrap() < d.gamma_bound.unwrap()));
    }
}

#[test]
fn reference_pendulum_margin_is_consistent() {
    let alpha: f64 = 0.0422;
    let bound = alpha * alpha / (4.0 + 2.0 * alpha);
    assert!((bound - 4.36e-4).abs() < 1e-5);
    assert!(1e-6 < bound);
}

#[test]
fn linear_plant_as_nonlinear_reduces_to_state_feedback() {
    let sys = batch_reactor();
    let plant = NonlinearPlant::from_linear(&sys);
    let h = experiment(&sys, 15, 12);
    let d0 = DMatrix::zeros(4, 15);
    let rep = stabilize_nonlinear(&plant, &h, Some(&d0), &cfg()).unwrap();
    assert_eq!(rep.status, DesignStatus::Feasible);
    assert_eq!(rep.diagnostics.gamma, Some(0.0));
    assert!(oracle_rho(&sys, &rep) < 1.0);
    assert!(stabilize_nonlinear(&plant, &experiment(&scalar(2.0, 1.0), 3, 1), None, &cfg()).is_err());
}

#[test]
fn report_serializes_matrices_by_rows() {
    let rep = stabilize_dt(&experiment(&scalar(2.0, 1.0), 3, 1), &cfg()).unwrap();
    let v = serde_json::to_value(&rep).unwrap();
    assert_eq!(v["method"], "state-feedback");
    assert_eq!(v["status"], "feasible");
    assert_eq!(v["K"].as_array().unwrap().len(), 1);
    assert!(v["rho_oracle"].is_null());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn feasible_designs_stabilize_random_systems(seed in any::<u64>(), n in 1usize..=5, m in 1usize..=2) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n, n, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let b = DMatrix::from_fn(n, m, |_, _| rand::Rng::gen_range(&mut rng, -1.0..1.0));
        let sys = LtiSystem::state_only(a, b).unwrap();
        prop_assume!(sys.is_controllable());
        let t = (m + 1) * (n + 1) + 2;
        let h = experiment(&sys, t, seed);
        let rep = stabilize_dt(&h, &cfg()).unwrap();
        if rep.status.is_feasible() {
            prop_assert!(oracle_rho(&sys, &rep) < 1.0);
        }
    }

    #[test]
    fn appendix_chain_dominance(seed in any::<u64>(), amp in 1e-3f64..0.2) {
        let nh = noisy_reactor(amp, seed);
        let NoiseBlocks { w0, w1 } = nh.noise.clone().unwrap();
        let a3 = check_assumption3(&nh.u0, &nh.z0, &w0, &w1, &nh.z1).unwrap();
        prop_assume!(a3.holds());
        let gamma = check_assumption2(&nh.z1, nh.residual.as_ref().unwrap()).unwrap();
        let implied = a3.implied_gamma();
        prop_assert!(gamma <= implied * (1.0 + 1e-9), "{} > {}", gamma, implied);
    }

    #[test]
    fn bound_certifies_stability(seed in any::<u64>(), amp in 1e-4f64..2e-3) {
        let sys = batch_reactor();
        let rep = robust_stabilize(&noisy_reactor(amp, seed), true, &cfg()).unwrap();
        if rep.status.is_feasible() && rep.diagnostics.gamma_bound_ok == Some(true) {
            prop_assert!(oracle_rho(&sys, &rep) < 1.0);
        }
    }
}
