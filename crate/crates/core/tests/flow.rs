use flowbeam_core::beam::{assemble_beam_operator, BeamGrid, BeamParams, BeamState};
use flowbeam_core::flow::*;
use flowbeam_core::Error;
use proptest::prelude::*;
use std::f64::consts::PI;

fn grid(n_beam: usize, nx: usize, nz: usize, upstream: usize, z_max: f64, sponge: f64) -> FlowGrid {
    let b = BeamGrid::new(n_beam, 1.0).unwrap();
    FlowGrid::new(&b, nx, nz, upstream, z_max, sponge).unwrap()
}

fn operator(g: FlowGrid, u: f64, mu: f64, strength: f64) -> FlowOperator {
    assemble_flow_operator(g, FlowParams { u, mu }, Sponge { strength }, Junction::BeamSide).unwrap()
}

#[test]
fn rejects_supersonic_and_bad_boxes() {
    let g = grid(9, 40, 10, 10, 1.0, 0.0);
    let e = assemble_flow_operator(g, FlowParams { u: 1.2, mu: 0.0 }, Sponge::default(), Junction::BeamSide);
    assert!(matches!(e, Err(Error::Supersonic(_))));
    let b = BeamGrid::new(9, 1.0).unwrap();
    assert!(FlowGrid::new(&b, 12, 10, 5, 1.0, 0.0).is_err());
    // Sponge as wide as the upstream margin swallows the clamp.
    assert!(FlowGrid::new(&b, 40, 10, 4, 1.0, 0.5).is_err());
    let g = FlowGrid::from_extents(&b, -1.0, 2.0, 1.0, 9, 0.25).unwrap();
    assert_eq!(g.beam_index_range, (8, 16));
    assert!((g.x_max - 2.0).abs() < 1e-12);
}

#[test]
fn laplacian_examples() {
    let g = grid(17, 64, 33, 20, 2.0, 0.0);
    let op = operator(g.clone(), 0.0, 0.7, 0.0);
    let c = vec![3.0; g.n()];
    for v in op.lap.mul_vec(&c) {
        assert!((v + 0.7 * 3.0).abs() < 1e-10);
    }
    // Plane wave periodic in the box.
    let op = operator(g.clone(), 0.0, 0.0, 0.0);
    let mut errs = Vec::new();
    for scale in [1usize, 2, 4] {
        let b = BeamGrid::new(16 * scale + 1, 1.0).unwrap();
        let g = FlowGrid::new(&b, 64 * scale, 8, 20 * scale, 2.0, 0.0).unwrap();
        let op2 = operator(g.clone(), 0.0, 0.0, 0.0);
        let k = 2.0 * PI * 3.0 / (g.x_max - g.x_min);
        let phi = g.sample(|x, _| (k * x).cos());
        let l = op2.lap.mul_vec(&phi);
        let err = phi.iter().zip(&l).map(|(p, l)| (l + k * k * p).abs()).fold(0.0, f64::max);
        errs.push(err);
    }
    assert!(errs[0] / errs[1] > 3.8 && errs[1] / errs[2] > 3.8, "{errs:?}");
    let _ = op;
    // phi = x away from the periodic seam: -U phi_x = -0.5.
    let op = operator(g.clone(), 0.5, 1.0, 0.0);
    let phi = g.sample(|x, _| x);
    let r = op.rhs(&FlowField { phi, psi: vec![0.0; g.n()] }, &vec![0.0; op.n_beam()]);
    for j in 0..g.nz {
        for i in 1..g.nx - 1 {
            assert!((r.phi[g.idx(i, j)] + 0.5).abs() < 1e-12);
        }
    }
}

#[test]
fn boundary_data_examples() {
    let bg = BeamGrid::new(21, 1.0).unwrap();
    let bop = assemble_beam_operator(bg, BeamParams::default()).unwrap();
    let p = FlowParams { u: 0.3, mu: 0.0 };
    let g = boundary_data(&bop, &BeamState::zeros(21), 1.0, &p).unwrap();
    assert!(g.iter().all(|x| *x == 0.0));
    let s = BeamState::new(vec![0.0; 21], vec![1.0; 21]).unwrap();
    for sigma in [0.0, 1.0] {
        let g = boundary_data(&bop, &s, sigma, &p).unwrap();
        assert!(g[1..].iter().all(|x| *x == 1.0));
    }
    let s = BeamState::new(bg.sample(|x| x * x), vec![0.0; 21]).unwrap();
    let g = boundary_data(&bop, &s, 1.0, &p).unwrap();
    for i in 1..20 {
        assert!((g[i] - 0.6 * bg.x(i)).abs() < 1e-12);
    }
    assert!(boundary_data(&bop, &BeamState::zeros(20), 1.0, &p).is_err());
}

#[test]
fn energy_examples() {
    let g = grid(17, 96, 41, 40, 2.5, 0.5);
    let op = operator(g.clone(), 0.0, 0.8, 4.0);
    assert_eq!(op.energy(&FlowField::zeros(g.n())).total(), 0.0);
    // Window: x in [x_min + s, x_max - s], z in [0, z_max - s] on the grid.
    let cells = (0.5 / g.hx).ceil();
    let width = (g.nx as f64 - 2.0 * cells) * g.hx;
    let height = ((2.5 - 0.5) / g.hz + 1e-9).floor() * g.hz;
    let area = width * height;
    assert!((op.window_area() - area).abs() < 1e-12);
    let f = FlowField { phi: vec![0.0; g.n()], psi: vec![1.0; g.n()] };
    assert!((op.energy(&f).window - 0.5 * area).abs() < 1e-12);
    let op0 = operator(g.clone(), 0.0, 0.0, 4.0);
    let f = FlowField { phi: g.sample(|_, z| z), psi: vec![0.0; g.n()] };
    assert!((op0.energy(&f).window - 0.5 * area).abs() < 1e-12);
}

fn compact_bump(x: f64, z: f64, x0: f64, z0: f64, a: f64) -> f64 {
    let r2 = ((x - x0).powi(2) + (z - z0).powi(2)) / (a * a);
    if r2 < 1.0 {
        (1.0 - r2).powi(4)
    } else {
        0.0
    }
}

#[test]
fn zero_field_and_kj_condition() {
    let g = grid(9, 48, 17, 16, 1.0, 0.3);
    let op = operator(g.clone(), 0.4, 0.1, 4.0);
    let nb = op.n_beam();
    let zero = vec![0.0; nb];
    let slab = NeumannSlab { start: &zero, end: &zero };
    let f = step_flow(&op, &FlowField::zeros(g.n()), slab, 0.02, FlowScheme::ImplicitMidpoint).unwrap();
    assert!(f.phi.iter().chain(&f.psi).all(|x| *x == 0.0));

    let stepper = FlowStepper::new(&op, 0.02, FlowScheme::ImplicitMidpoint).unwrap();
    let gdat = vec![0.3; nb];
    let mut f = FlowField { phi: g.sample(|x, z| compact_bump(x, z, 0.5, 0.2, 0.3)), psi: vec![0.0; g.n()] };
    for n in 0..20 {
        f = stepper.step(&f, NeumannSlab { start: &gdat, end: &gdat }, n as f64 * 0.02).unwrap();
        for i in 0..g.nx {
            let k = g.idx(i, 0);
            if op.constrained[k] {
                assert!(f.psi[k].abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn sponge_only_removes_energy() {
    for scale in [1usize, 2] {
        let b = BeamGrid::new(8 * scale + 1, 1.0).unwrap();
        let g = FlowGrid::new(&b, 48 * scale, 16 * scale + 1, 20 * scale, 2.0, 0.6).unwrap();
        let op = operator(g.clone(), 0.0, 0.5, 6.0);
        let dt = 0.5 * g.hx;
        let stepper = FlowStepper::new(&op, dt, FlowScheme::ImplicitMidpoint).unwrap();
        let zero = vec![0.0; op.n_beam()];
        let mut f = FlowField { phi: g.sample(|x, z| compact_bump(x, z, 0.3, 0.6, 0.4)), psi: vec![0.0; g.n()] };
        let mut e = op.energy(&f).total();
        for n in 0..(3.0 / dt) as usize {
            f = stepper.step(&f, NeumannSlab { start: &zero, end: &zero }, n as f64 * dt).unwrap();
            let en = op.energy(&f).total();
            assert!(en <= e * (1.0 + 1e-12), "step {n}: {en} > {e}");
            e = en;
        }
    }
}

#[test]
fn conserves_energy_without_sponge() {
    let g = grid(9, 48, 17, 16, 1.5, 0.0);
    let op = operator(g.clone(), 0.0, 0.5, 0.0);
    let stepper = FlowStepper::new(&op, 0.05, FlowScheme::ImplicitMidpoint).unwrap();
    let zero = vec![0.0; op.n_beam()];
    let mut f = FlowField { phi: g.sample(|x, z| compact_bump(x, z, 0.5, 0.4, 0.4)), psi: vec![0.0; g.n()] };
    let e0 = op.energy(&f).total();
    for n in 0..200 {
        f = stepper.step(&f, NeumannSlab { start: &zero, end: &zero }, n as f64 * 0.05).unwrap();
    }
    assert!((op.energy(&f).total() - e0).abs() <= 1e-12 * e0);
}

#[test]
fn sponge_is_local() {
    // Until a wavefront reaches the layers, the window does not see them.
    let g = grid(17, 96, 49, 40, 3.0, 0.8);
    let with = operator(g.clone(), 0.3, 0.2, 8.0);
    let without = operator(g.clone(), 0.3, 0.2, 0.0);
    let dt = 0.5 * g.hx;
    let zero = vec![0.0; with.n_beam()];
    let f0 = FlowField { phi: g.sample(|x, z| compact_bump(x, z, 0.5, 0.8, 0.3)), psi: vec![0.0; g.n()] };
    let s1 = FlowStepper::new(&with, dt, FlowScheme::ImplicitMidpoint).unwrap();
    let s2 = FlowStepper::new(&without, dt, FlowScheme::ImplicitMidpoint).unwrap();
    let (mut a, mut b) = (f0.clone(), f0);
    // Nearest layer edge is 0.8 - 0.3 = 0.5 away from the bump support, speed <= 1.3.
    let steps = (0.2 / dt) as usize;
    for n in 0..steps {
        let slab = NeumannSlab { start: &zero, end: &zero };
        a = s1.step(&a, slab, n as f64 * dt).unwrap();
        b = s2.step(&b, slab, n as f64 * dt).unwrap();
    }
    let cells = (0.8 / g.hx).ceil() as usize;
    let top = ((3.0 - 0.8) / g.hz).floor() as usize;
    let mut worst: f64 = 0.0;
    for j in 0..=top {
        for i in cells..=(g.nx - cells) {
            let k = g.idx(i, j);
            worst = worst.max((a.phi[k] - b.phi[k]).abs()).max((a.psi[k] - b.psi[k]).abs());
        }
    }
    assert!(worst <= 1e-10, "{worst}");
}

/// `phi = sin(m z) cos(k x - w t)` solves the flow equations with Neumann
/// data `m cos(k x - w t)` and vanishing `psi` on all of `z = 0`.
fn standing_mode_error(scale: usize, scheme: FlowScheme, junction: Junction) -> f64 {
    let b = BeamGrid::new(8 * scale + 1, 1.0).unwrap();
    let g = FlowGrid::new(&b, 32 * scale, 8 * scale + 1, 12 * scale, 1.0, 0.0).unwrap();
    let (u, mu) = (0.4, 0.3);
    let op = assemble_flow_operator(g.clone(), FlowParams { u, mu }, Sponge { strength: 0.0 }, junction).unwrap();
    let k = 2.0 * PI / (g.x_max - g.x_min);
    let m = 1.5 * PI / g.z_max;
    let w = u * k + (k * k + m * m + mu).sqrt();
    let phi = |t: f64| g.sample(|x, z| (m * z).sin() * (k * x - w * t).cos());
    let psi = |t: f64| g.sample(|x, z| (w - u * k) * (m * z).sin() * (k * x - w * t).sin());
    let trace = |t: f64| -> Vec<f64> {
        (0..op.n_beam()).map(|i| m * (k * g.x(g.beam_index_range.0 + i) - w * t).cos()).collect()
    };
    let dt = match scheme {
        FlowScheme::ImplicitMidpoint => 0.05 / scale as f64,
        FlowScheme::Rk4 => 0.25 * op.rk4_dt_limit(),
    };
    let stepper = FlowStepper::new(&op, dt, scheme).unwrap();
    let steps = (0.5 / dt).round() as usize;
    let mut f = FlowField { phi: phi(0.0), psi: psi(0.0) };
    for n in 0..steps {
        let t = n as f64 * dt;
        let (g0, g1) = (trace(t), trace(t + dt));
        f = stepper.step(&f, NeumannSlab { start: &g0, end: &g1 }, t).unwrap();
    }
    let t = steps as f64 * dt;
    let (pe, qe) = (phi(t), psi(t));
    let diff: f64 = (0..g.n()).map(|i| op.weight[i] * ((f.phi[i] - pe[i]).powi(2) + (f.psi[i] - qe[i]).powi(2))).sum();
    let norm: f64 = (0..g.n()).map(|i| op.weight[i] * (pe[i].powi(2) + qe[i].powi(2))).sum();
    (diff / norm).sqrt()
}

#[test]
fn manufactured_mode_converges_at_second_order() {
    for scheme in [FlowScheme::ImplicitMidpoint, FlowScheme::Rk4] {
        let e: Vec<f64> = [1, 2, 4].iter().map(|&s| standing_mode_error(s, scheme, Junction::WakeSide)).collect();
        for k in 0..2 {
            assert!((e[k] / e[k + 1]).log2() > 1.7, "{scheme:?}: {e:?}");
        }
    }
}

#[test]
fn beam_side_junctions_cost_one_order_under_junction_flux() {
    // Junction nodes on the Neumann side receive half a cell of flux; with
    // nonzero flux at the junctions this is a point defect of size O(h).
    let e: Vec<f64> =
        [1, 2, 4].iter().map(|&s| standing_mode_error(s, FlowScheme::ImplicitMidpoint, Junction::BeamSide)).collect();
    for k in 0..2 {
        let rate = (e[k] / e[k + 1]).log2();
        assert!(rate > 0.8, "{e:?}");
    }
}

#[test]
fn explicit_step_checks_stability_bound() {
    let g = grid(9, 48, 17, 16, 1.0, 0.0);
    let op = operator(g, 0.5, 0.0, 0.0);
    let limit = op.rk4_dt_limit();
    assert!(matches!(FlowStepper::new(&op, 2.0 * limit, FlowScheme::Rk4), Err(Error::Cfl { .. })));
    assert!(FlowStepper::new(&op, 0.5 * limit, FlowScheme::Rk4).is_ok());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// `(Lap_mu phi, phi)_H + ||G phi||^2 + mu ||phi||^2 = 0` with the
    /// natural closure; boundary data enters only through the weak term.
    #[test]
    fn green_identity_is_exact(seed in prop::collection::vec(-1.0f64..1.0, 24 * 9), mu in 0.0f64..2.0) {
        let g = grid(9, 24, 9, 6, 1.0, 0.0);
        let op = operator(g, 0.2, mu, 0.0);
        let lp = op.lap.mul_vec(&seed);
        let q = op.dot(&lp, &seed) + op.grad_dot(&seed, &seed) + mu * op.dot(&seed, &seed);
        prop_assert!(q.abs() <= 1e-11 * (1.0 + op.grad_dot(&seed, &seed)));
    }

    #[test]
    fn convection_is_skew(a in prop::collection::vec(-1.0f64..1.0, 24 * 9)) {
        let g = grid(9, 24, 9, 6, 1.0, 0.0);
        let op = operator(g, 0.2, 0.0, 0.0);
        prop_assert!(op.dot(&op.ddx(&a), &a).abs() < 1e-13);
        let lp = op.lap.mul_vec(&a);
        prop_assert!(op.dot(&lp, &op.ddx(&a)).abs() < 1e-9);
    }
}
