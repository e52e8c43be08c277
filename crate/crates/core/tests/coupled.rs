mod common;

use common::{observed_order, Setup};
use flowbeam_core::beam::{BeamParams, BeamState};
use flowbeam_core::coupled::*;
use flowbeam_core::elliptic::ResolventData;
use flowbeam_core::flow::{FlowParams, Junction};
use flowbeam_core::initial::InitialData;
use flowbeam_core::Error;
use proptest::prelude::*;

fn small(u: f64) -> CoupledModel {
    Setup { nb: 9, u, upstream: 1.0, downstream: 1.0, z_max: 1.0, sponge_width: 0.0, ..Setup::default() }.build()
}

#[test]
fn conservative_generator_is_skew() {
    for junction in [Junction::BeamSide, Junction::WakeSide] {
        let m = Setup { sigma: 0.0, junction, ..Setup::default() }.build();
        let r = dissipativity_check(&m, 40, Sampling::Random, 3);
        assert_eq!(r.samples, 40);
        assert!(r.max_ratio < 1e-12, "{junction:?}: {:e}", r.max_ratio);
    }
}

#[test]
fn constants_only_excite_nothing() {
    let m = Setup { sigma: 0.0, ..Setup::default() }.build();
    let r = dissipativity_check(&m, 10, Sampling::Constants, 5);
    assert!(r.max_ratio < 1e-14);
}

#[test]
fn kutta_joukowski_violation_is_isolated() {
    let m = Setup { sigma: 0.0, ..Setup::default() }.build();
    let r = dissipativity_check(&m, 5, Sampling::ViolateKj, 11);
    let b = r.worst;
    assert!(b.kj_flux.abs() > 1e-6);
    assert!(b.green.abs() + b.convection.abs() + b.beam.abs() + b.interface.abs() < 1e-10 * r.worst_norm2);
    assert!((b.sum() - b.total).abs() < 1e-10 * r.worst_norm2);
}

#[test]
fn perturbation_and_damping_enter_with_their_signs() {
    let m = Setup { beam: BeamParams { d: 1.0, delta: 0.05, beta: 0.0 }, sponge: 2.0, ..Setup::default() }.build();
    let mut y = InitialData::BeamTipBump { amplitude: 0.2 }.build(&m).unwrap();
    y.beam.v = m.beam.grid.sample(|x| x * x);
    y.flow.psi = m.flow.grid.sample(|x, z| (-(x - 0.5) * (x - 0.5) - z * z).exp());
    m.project(&mut y);
    let b = m.breakdown(&y);
    let n2 = m.y_dot(&y, &y);
    assert!((b.interface + m.interface_flux(&y)).abs() < 1e-10 * n2);
    assert!(b.damping < 0.0 && b.sponge < 0.0);
    assert!((b.sum() - b.total).abs() < 1e-10 * n2);
}

#[test]
fn sigma_outside_zero_one_is_rejected() {
    let m = small(0.3);
    assert!(matches!(CoupledModel::new(m.beam.clone(), m.flow.clone(), 0.5), Err(Error::Config(_))));
}

#[test]
fn resolvent_solve_certifies_itself() {
    let m = small(0.5);
    let lam = 1.3;
    let y = InitialData::FlowPulse { amplitude: 0.3, x0: 0.4, z0: 0.3, width: 0.25 }.build(&m).unwrap();
    let mut y = y;
    y.beam.w = m.beam.grid.sample(|x| 0.1 * x * x);
    y.beam.v = m.beam.grid.sample(|x| -0.2 * x * x);
    m.project(&mut y);
    let data = ResolventData::from_state(&m, lam, &y);
    let sol = GeneratorResolvent::new(&m, lam).unwrap().solve(&data).unwrap();
    let r = resolvent_residuals(&m, lam, &sol, &data);
    assert!(r.relative < 1e-10, "{r:?}");
    assert!(r.kj < 1e-12);
    assert!(m.y_norm(&sol.axpy(-1.0, &y)) < 1e-9 * m.y_norm(&y));
}

#[test]
fn zero_data_gives_zero_solution() {
    let m = small(0.5);
    let sol = GeneratorResolvent::new(&m, 0.7).unwrap().solve(&ResolventData::zeros(&m)).unwrap();
    assert_eq!(m.y_norm(&sol), 0.0);
}

#[test]
fn zero_state_stays_zero() {
    let m = Setup { beam: BeamParams { d: 1.0, delta: 0.01, beta: 1.0 }, ..Setup::default() }.build();
    let y0 = CoupledState::zeros(&m);
    let st = CoupledStepper::new(&m, 0.02, CouplingScheme::Monolithic, SubIteration::default()).unwrap();
    let (traj, _) = st.run(&y0, 10).unwrap();
    assert!(traj.iter().all(|y| m.y_norm(y) == 0.0));
}

#[test]
fn rejects_bad_time_step() {
    let m = small(0.3);
    assert!(CoupledStepper::new(&m, 0.0, CouplingScheme::Monolithic, SubIteration::default()).is_err());
    assert!(CoupledStepper::new(&m, f64::NAN, CouplingScheme::Monolithic, SubIteration::default()).is_err());
}

#[test]
fn undamped_linear_run_conserves_perturbed_energy() {
    // With sigma = 1 the energy changes only through U <w_x, psi|>.
    let m = Setup { u: 0.5, ..Setup::default() }.build();
    let y0 = InitialData::BeamTipBump { amplitude: 0.1 }.build(&m).unwrap();
    let st = CoupledStepper::new(&m, 0.02, CouplingScheme::Monolithic, SubIteration::default()).unwrap();
    let (traj, _) = st.run(&y0, 50).unwrap();
    let e: Vec<f64> = traj.iter().map(|y| m.energy(y)).collect();
    assert!(e.iter().any(|x| (x - e[0]).abs() > 1e-8 * e[0]));
    let still = m.with_flow_params(FlowParams { u: 0.0, mu: 1.0 }).unwrap();
    let m0 = CoupledStepper::new(&still, 0.02, CouplingScheme::Monolithic, SubIteration::default()).unwrap();
    let (traj0, _) = m0.run(&y0, 50).unwrap();
    let e0 = m0.model.energy(&traj0[0]);
    assert!(traj0.iter().all(|y| (m0.model.energy(y) - e0).abs() < 1e-10 * e0));
}

#[test]
fn staggered_coupling_tracks_monolithic_at_first_order() {
    let m = Setup { u: 0.3, ..Setup::default() }.build();
    let y0 = InitialData::BeamTipBump { amplitude: 0.1 }.build(&m).unwrap();
    let mut errs = Vec::new();
    for k in 0..3 {
        let dt = 0.02 / (1 << k) as f64;
        let n = (0.4 / dt).round() as usize;
        let a = CoupledStepper::new(&m, dt, CouplingScheme::Monolithic, SubIteration::default())
            .unwrap()
            .run(&y0, n)
            .unwrap()
            .0;
        let b = CoupledStepper::new(&m, dt, CouplingScheme::Staggered, SubIteration::default())
            .unwrap()
            .run(&y0, n)
            .unwrap()
            .0;
        errs.push(trajectory_distance(&m, &a, &b));
    }
    let p = observed_order(&errs);
    assert!(p > 0.8, "{errs:?}");
}

#[test]
fn nonlinear_step_solves_the_midpoint_equation() {
    let m = Setup { u: 0.0, beam: BeamParams { d: 1.0, delta: 0.0, beta: 1.0 }, ..Setup::default() }.build();
    let y0 = InitialData::BeamTipBump { amplitude: 0.3 }.build(&m).unwrap();
    let st = CoupledStepper::new(&m, 0.01, CouplingScheme::Monolithic, SubIteration::default()).unwrap();
    let (y1, rep) = st.step(&y0).unwrap();
    assert!(rep.iterations > 1 && rep.contraction < 1.0);
    // Re-solving with the converged averaged force reproduces the step.
    let fbar = m.beam.averaged_force(&y0.beam.w, &y1.beam.w);
    let again = st.step_frozen(&y0, &fbar).unwrap();
    assert!(m.y_norm(&again.axpy(-1.0, &y1)) < 1e-10 * m.y_norm(&y1));
    // Midpoint with the discrete-gradient force conserves the full energy.
    let drift = (m.energy(&y1) - m.energy(&y0)).abs() / m.energy(&y0);
    assert!(drift < 1e-10, "{drift:e}");
}

#[test]
fn linear_fixed_point_takes_one_solve() {
    let m = Setup::default().build();
    let y0 = InitialData::BeamTipBump { amplitude: 0.1 }.build(&m).unwrap();
    let st = CoupledStepper::new(&m, 0.02, CouplingScheme::Monolithic, SubIteration::default()).unwrap();
    let rep = contraction_solve(&st, &y0, &FixedPointConfig::default(), InitialGuess::Zero).unwrap();
    assert_eq!(rep.iterations, 1);
    assert_eq!(rep.q, 0.0);
}

#[test]
fn contraction_matches_direct_stepping_and_is_guess_independent() {
    let m = Setup { beam: BeamParams { d: 1.0, delta: 0.01, beta: 1.0 }, ..Setup::default() }.build();
    let y0 = InitialData::BeamTipBump { amplitude: 0.05 }.build(&m).unwrap();
    let st = CoupledStepper::new(&m, 0.01, CouplingScheme::Monolithic, SubIteration::default()).unwrap();
    let cfg = FixedPointConfig { window_t: 0.2, ..FixedPointConfig::default() };
    let mut reps = Vec::new();
    for g in [InitialGuess::Frozen, InitialGuess::Zero, InitialGuess::Linear] {
        let r = contraction_solve(&st, &y0, &cfg, g).unwrap();
        assert!(r.q < 0.9 && r.differences.len() == r.iterations);
        reps.push(r);
    }
    let (direct, _) = st.run(&y0, 20).unwrap();
    for r in &reps {
        assert!(trajectory_distance(&m, &r.trajectory, &reps[0].trajectory) < 1e-9);
        assert!(trajectory_distance(&m, &r.trajectory, &direct) < 1e-8);
    }
}

#[test]
fn ball_exit_is_reported() {
    let m = Setup { beam: BeamParams { d: 1.0, delta: 0.01, beta: 1.0 }, ..Setup::default() }.build();
    let y0 = InitialData::BeamTipBump { amplitude: 0.05 }.build(&m).unwrap();
    let st = CoupledStepper::new(&m, 0.01, CouplingScheme::Monolithic, SubIteration::default()).unwrap();
    let cfg = FixedPointConfig { ball_radius: 1e-8, window_t: 0.1, ..FixedPointConfig::default() };
    assert!(matches!(contraction_solve(&st, &y0, &cfg, InitialGuess::Frozen), Err(Error::BallExit { .. })));
    let bad = FixedPointConfig { tol: 0.0, ..FixedPointConfig::default() };
    assert!(bad.validate().is_err());
}

#[test]
fn slab_run_covers_the_horizon() {
    let m = Setup { beam: BeamParams { d: 1.0, delta: 0.01, beta: 1.0 }, ..Setup::default() }.build();
    let y0 = InitialData::BeamTipBump { amplitude: 0.02 }.build(&m).unwrap();
    let st = CoupledStepper::new(&m, 0.02, CouplingScheme::Monolithic, SubIteration::default()).unwrap();
    let cfg = FixedPointConfig { window_t: 0.2, ..FixedPointConfig::default() };
    let (traj, reps) = contraction_run(&st, &y0, &cfg, 0.5).unwrap();
    assert_eq!(traj.len(), 26);
    assert_eq!(reps.len(), 3);
    assert!((traj.last().unwrap().t - 0.5).abs() < 1e-12);
    let (w, rep) = contractive_window(&st, &y0, &cfg, 3).unwrap();
    assert_eq!(w, 0.2);
    assert!(rep.iterations >= 2);
}

#[test]
fn fitted_rate_recovers_geometric_sequences() {
    let d: Vec<f64> = (0..8).map(|k| 0.3f64.powi(k)).collect();
    assert!((fitted_rate(&d) - 0.3).abs() < 1e-12);
    assert_eq!(fitted_rate(&[1.0]), 0.0);
}

#[test]
fn delta_sweep_orders_and_validates() {
    let m = Setup { beam: BeamParams { d: 1.0, delta: 0.0, beta: 1.0 }, ..Setup::default() }.build();
    let y0 = InitialData::BeamTipBump { amplitude: 0.01 }.build(&m).unwrap();
    let fp = FixedPointConfig::default();
    assert!(delta_sweep(&m, &y0, &[0.0, 0.1], 0.2, 0.02, SubIteration::default(), &fp).is_err());
    let s = delta_sweep(&m, &y0, &[1e-1, 1e-2, 0.0], 0.4, 0.02, SubIteration::default(), &fp).unwrap();
    assert!(s.runs.iter().all(|r| r.failure.is_none()));
    assert!(s.monotone, "{:?}", s.distances);
    // Damping only removes energy, so the envelope is the initial energy.
    assert!((s.envelope_ratio - 1.0).abs() < 1e-9);
}

#[test]
fn mu_sweep_respects_the_potential_bound() {
    let m = Setup { u: 0.4, ..Setup::default() }.build();
    let mut y0 = InitialData::FlowPulse { amplitude: 0.2, x0: 0.5, z0: 0.5, width: 0.3 }.build(&m).unwrap();
    y0.beam = BeamState { w: m.beam.grid.sample(|x| 0.05 * x * x), v: vec![0.0; m.beam.n()] };
    let s = mu_sweep(&m, &y0, &[1.0, 0.1, 0.01], 0.5, 0.02, SubIteration::default()).unwrap();
    for r in &s.runs {
        assert!(r.failure.is_none());
        assert!(r.bound_margin >= -1e-12, "{r:?}");
    }
    assert_eq!(s.distances.len(), 2);
    assert!(mu_sweep(&m, &y0, &[0.1, 1.0], 0.5, 0.02, SubIteration::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn skew_for_any_seed_and_speed(seed in any::<u64>(), u in -0.9f64..0.9) {
        let m = small(u).with_flow_params(FlowParams { u, mu: 0.5 }).unwrap();
        let m = CoupledModel::new(m.beam.clone(), m.flow.clone(), 0.0).unwrap();
        let r = dissipativity_check(&m, 3, Sampling::Random, seed);
        prop_assert!(r.max_ratio < 1e-12);
    }

    #[test]
    fn damped_generator_is_dissipative(seed in any::<u64>(), delta in 0.0f64..0.5) {
        let m = Setup { nb: 9, u: 0.6, sigma: 0.0, sponge: 3.0, upstream: 1.0, downstream: 1.0, z_max: 1.0, sponge_width: 0.3,
            beam: BeamParams { d: 1.0, delta, beta: 0.0 }, ..Setup::default() }.build();
        let r = dissipativity_check(&m, 2, Sampling::Random, seed);
        prop_assert!(r.worst.total <= 1e-12 * r.worst_norm2);
    }

    #[test]
    fn inner_product_is_symmetric(seed in any::<u64>()) {
        use rand::{Rng, SeedableRng};
        let m = small(0.4);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut draw = || {
            let mut y = CoupledState::zeros(&m);
            for x in y.flow.phi.iter_mut().chain(y.flow.psi.iter_mut()).chain(y.beam.w.iter_mut()).chain(y.beam.v.iter_mut()) {
                *x = rng.gen_range(-1.0..1.0);
            }
            m.project(&mut y);
            y
        };
        let (a, b) = (draw(), draw());
        prop_assert!((m.y_dot(&a, &b) - m.y_dot(&b, &a)).abs() < 1e-12 * m.y_norm(&a) * m.y_norm(&b));
        prop_assert!(m.y_dot(&a, &a) > 0.0);
    }
}
