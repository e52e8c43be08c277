//! Flow and beam together: the discrete generator, its resolvent, the
//! monolithic midpoint stepper, slab-wise Picard iteration on the frozen
//! nonlinearity, and parameter sweeps.
//!
//! The generator acts on `y = (phi, psi; w, v)` by
//!
//! ```text
//! phi_t = psi - U Dx phi
//! psi_t = Lap_mu phi - H^-1 B g - U Dx psi - s psi   (psi = 0 off the beam)
//! w_t   = v
//! v_t   = -A4 (D w + delta v) + trace(psi)
//! ```
//!
//! with Neumann data `g = v + sigma U w_x` on the beam nodes and `s` the
//! sponge profile.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::beam::{BeamOperator, BeamParams, BeamState, EnergyLevel, NonlinearForm};
use crate::elliptic::ResolventData;
use crate::error::{check_len, Error, Result};
use crate::flow::{FlowField, FlowOperator, FlowParams, FlowResolvent};
use crate::linalg::{norm_inf, DenseLu};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct CoupledState {
    pub flow: FlowField,
    pub beam: BeamState,
    pub t: f64,
}

impl CoupledState {
    pub fn zeros(model: &CoupledModel) -> Self {
        CoupledState { flow: FlowField::zeros(model.flow.n()), beam: BeamState::zeros(model.beam.n()), t: 0.0 }
    }

    pub fn is_finite(&self) -> bool {
        self.flow.is_finite() && self.beam.w.iter().chain(&self.beam.v).all(|x| x.is_finite())
    }

    /// `a + s b`, keeping the time of `a`.
    pub fn axpy(&self, s: f64, b: &CoupledState) -> CoupledState {
        let add = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a + s * b).collect() };
        CoupledState {
            flow: FlowField { phi: add(&self.flow.phi, &b.flow.phi), psi: add(&self.flow.psi, &b.flow.psi) },
            beam: BeamState { w: add(&self.beam.w, &b.beam.w), v: add(&self.beam.v, &b.beam.v) },
            t: self.t,
        }
    }

    pub fn scaled(&self, s: f64) -> CoupledState {
        let sc = |x: &[f64]| -> Vec<f64> { x.iter().map(|a| s * a).collect() };
        CoupledState {
            flow: FlowField { phi: sc(&self.flow.phi), psi: sc(&self.flow.psi) },
            beam: BeamState { w: sc(&self.beam.w), v: sc(&self.beam.v) },
            t: self.t,
        }
    }
}

/// The coupled semi-discrete system.
#[derive(Debug, Clone)]
pub struct CoupledModel {
    pub beam: BeamOperator,
    pub flow: FlowOperator,
    /// 0 drops the `U w_x` part of the Neumann data, 1 keeps it.
    pub sigma: f64,
    /// Static pressure on the beam.
    pub forcing: Vec<f64>,
    slope: Vec<f64>,
}

/// Builds the discrete generator for conforming grids.
pub fn assemble_generator(beam: BeamOperator, flow: FlowOperator, sigma: f64) -> Result<CoupledModel> {
    CoupledModel::new(beam, flow, sigma)
}

impl CoupledModel {
    pub fn new(beam: BeamOperator, flow: FlowOperator, sigma: f64) -> Result<Self> {
        if !flow.grid.conforms_to(&beam.grid) {
            return Err(Error::config("flow grid does not conform to the beam grid"));
        }
        if sigma != 0.0 && sigma != 1.0 {
            return Err(Error::config("sigma must be 0 or 1"));
        }
        let n = beam.n();
        let mut slope = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            for (i, s) in beam.slope(&e).into_iter().enumerate() {
                slope[i * n + j] = s;
            }
            e[j] = 0.0;
        }
        Ok(CoupledModel { forcing: vec![0.0; n], beam, flow, sigma, slope })
    }

    pub fn with_forcing(mut self, p: Vec<f64>) -> Result<Self> {
        check_len("beam forcing", self.beam.n(), p.len())?;
        self.forcing = p;
        Ok(self)
    }

    pub fn with_beam_params(&self, params: BeamParams) -> Result<Self> {
        let mut m = self.clone();
        m.beam = self.beam.with_params(params)?;
        Ok(m)
    }

    pub fn with_flow_params(&self, params: FlowParams) -> Result<Self> {
        let mut m = self.clone();
        m.flow = self.flow.with_params(params)?;
        Ok(m)
    }

    pub fn check(&self, y: &CoupledState) -> Result<()> {
        check_len("flow potential", self.flow.n(), y.flow.phi.len())?;
        check_len("flow acceleration potential", self.flow.n(), y.flow.psi.len())?;
        check_len("beam deflection", self.beam.n(), y.beam.w.len())?;
        check_len("beam velocity", self.beam.n(), y.beam.v.len())
    }

    /// Neumann data `v + sigma U w_x` on the beam nodes.
    pub fn neumann_data(&self, beam: &BeamState) -> Vec<f64> {
        let s = self.beam.slope(&beam.w);
        let su = self.sigma * self.flow.params.u;
        beam.v.iter().zip(&s).map(|(v, s)| v + su * s).collect()
    }

    /// Projects an arbitrary state onto the discrete domain: `psi = 0` at
    /// constrained nodes, clamp on the beam.
    pub fn project(&self, y: &mut CoupledState) {
        for (p, c) in y.flow.psi.iter_mut().zip(&self.flow.constrained) {
            if *c {
                *p = 0.0;
            }
        }
        y.beam.w[0] = 0.0;
        y.beam.v[0] = 0.0;
    }

    /// Linear generator with damping and sponge; no forcing, no
    /// nonlinearity.
    pub fn apply(&self, y: &CoupledState) -> CoupledState {
        let g = self.neumann_data(&y.beam);
        let flow = self.flow.rhs(&y.flow, &g);
        let d = self.beam.params.d;
        let delta = self.beam.params.delta;
        let mix: Vec<f64> = y.beam.w.iter().zip(&y.beam.v).map(|(w, v)| d * w + delta * v).collect();
        let k4 = self.beam.a4(&mix);
        let load = self.flow.beam_load(&y.flow.psi);
        let mut a: Vec<f64> = load.iter().zip(&k4).map(|(l, k)| l - k).collect();
        a[0] = 0.0;
        let mut w = y.beam.v.clone();
        w[0] = 0.0;
        CoupledState { flow, beam: BeamState { w, v: a }, t: y.t }
    }

    /// Full right-hand side: generator plus forcing minus `beta F(w)`.
    pub fn rhs(&self, y: &CoupledState) -> CoupledState {
        let mut out = self.apply(y);
        let beta = self.beam.params.beta;
        let f = if beta != 0.0 { Some(self.beam.nonlinearity(&y.beam.w, NonlinearForm::Divergence)) } else { None };
        for i in 1..self.beam.n() {
            out.beam.v[i] += self.forcing[i] - f.as_ref().map_or(0.0, |f| beta * f[i]);
        }
        out
    }

    /// Beam acceleration of the full system at `y`.
    pub fn accel(&self, y: &CoupledState) -> Vec<f64> {
        let load = self.flow.beam_load(&y.flow.psi);
        let p: Vec<f64> = load.iter().zip(&self.forcing).map(|(a, b)| a + b).collect();
        self.beam.accel(&y.beam, &p).expect("shapes checked by the model")
    }

    /// The state inner product
    /// `<G phi, G phi'> + mu (phi, phi') + (psi, psi') + D <k w, k w'> + (v, v')`.
    pub fn y_dot(&self, a: &CoupledState, b: &CoupledState) -> f64 {
        let f = &self.flow;
        let bm = &self.beam;
        f.grad_dot(&a.flow.phi, &b.flow.phi)
            + f.params.mu * f.dot(&a.flow.phi, &b.flow.phi)
            + f.dot(&a.flow.psi, &b.flow.psi)
            + bm.params.d * bm.curv_dot(&bm.curvature(&a.beam.w), &bm.curvature(&b.beam.w))
            + bm.mass_dot(&a.beam.v, &b.beam.v)
    }

    pub fn y_norm(&self, y: &CoupledState) -> f64 {
        libm::sqrt(self.y_dot(y, y).max(0.0))
    }

    /// Beam finite-energy norm `(||k w||^2 + ||v||^2)^(1/2)`.
    pub fn x_norm(&self, b: &BeamState) -> f64 {
        let k = self.beam.curvature(&b.w);
        libm::sqrt(self.beam.curv_dot(&k, &k) + self.beam.mass_dot(&b.v, &b.v))
    }

    /// Total energy: flow energy on the whole box plus beam `E0`.
    pub fn energy(&self, y: &CoupledState) -> f64 {
        self.flow.energy(&y.flow).total()
            + self.beam.energy(&y.beam, EnergyLevel::E0, None).expect("shapes checked by the model")
    }

    /// `sigma U <w_x, psi|>` with the Neumann weights; the rate at which the
    /// perturbation drains energy.
    pub fn interface_flux(&self, y: &CoupledState) -> f64 {
        let s = self.beam.slope(&y.beam.w);
        let tr = self.flow.trace(&y.flow.psi);
        let su = self.sigma * self.flow.params.u;
        (0..s.len()).map(|k| su * self.flow.neumann_weight[k] * s[k] * tr[k]).sum()
    }

    /// Term-by-term split of `<A y, y>_Y`.
    pub fn breakdown(&self, y: &CoupledState) -> TermBreakdown {
        let f = &self.flow;
        let bm = &self.beam;
        let (phi, psi) = (&y.flow.phi, &y.flow.psi);
        let u = f.params.u;
        let mu = f.params.mu;
        let lp = f.lap.mul_vec(phi);
        let dphi = f.ddx(phi);
        let dpsi = f.ddx(psi);
        let n = f.n();
        let mut lap_all = 0.0;
        let mut conv_all = 0.0;
        let mut kj = 0.0;
        let mut sponge = 0.0;
        for k in 0..n {
            let wk = f.weight[k];
            lap_all += wk * lp[k] * psi[k];
            conv_all += wk * dpsi[k] * psi[k];
            if f.constrained[k] {
                kj -= wk * (lp[k] - u * dpsi[k]) * psi[k];
            } else {
                sponge -= wk * f.sponge[k] * psi[k] * psi[k];
            }
        }
        let green = f.grad_dot(psi, phi) + mu * f.dot(psi, phi) + lap_all;
        let convection = -u * (f.grad_dot(&dphi, phi) + mu * f.dot(&dphi, phi) + conv_all);
        let d = bm.params.d;
        let kw = bm.curvature(&y.beam.w);
        let kv = bm.curvature(&y.beam.v);
        let beam = d * bm.curv_dot(&kv, &kw) - d * bm.mass_dot(&bm.a4(&y.beam.w), &y.beam.v);
        let g = self.neumann_data(&y.beam);
        let tr = f.trace(psi);
        let flow_side: f64 =
            (0..g.len()).filter(|&k| !f.constrained[f.beam_node(k)]).map(|k| f.neumann_weight[k] * g[k] * tr[k]).sum();
        let interface = bm.mass_dot(&f.beam_load(psi), &y.beam.v) - flow_side;
        let damping = -bm.params.delta * bm.curv_dot(&kv, &kv);
        let total = self.y_dot(&self.apply(y), y);
        TermBreakdown { green, convection, beam, interface, kj_flux: kj, damping, sponge, total }
    }
}

/// Contributions to `<A y, y>_Y`. The first three vanish by summation by
/// parts; `interface` is `-sigma U <w_x, psi|>`; `kj_flux` is nonzero only
/// when `psi` does not vanish off the beam.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TermBreakdown {
    pub green: f64,
    pub convection: f64,
    pub beam: f64,
    pub interface: f64,
    pub kj_flux: f64,
    pub damping: f64,
    pub sponge: f64,
    pub total: f64,
}

impl TermBreakdown {
    pub fn sum(&self) -> f64 {
        self.green + self.convection + self.beam + self.interface + self.kj_flux + self.damping + self.sponge
    }
}

/// How random probe states are drawn.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Sampling {
    /// Uniform entries projected onto the discrete domain.
    Random,
    /// Constant potential, everything else zero.
    Constants,
    /// Random states with `psi` left nonzero off the beam.
    ViolateKj,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DissipativityReport {
    pub samples: usize,
    /// `max |<A y, y>| / ||y||^2` over the nonzero samples.
    pub max_ratio: f64,
    /// Breakdown of the sample attaining the maximum.
    pub worst: TermBreakdown,
    pub worst_norm2: f64,
}

/// Draws states and measures `<A y, y>_Y / ||y||_Y^2`.
pub fn dissipativity_check(
    model: &CoupledModel,
    n_samples: usize,
    sampling: Sampling,
    seed: u64,
) -> DissipativityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report =
        DissipativityReport { samples: 0, max_ratio: 0.0, worst: TermBreakdown::default(), worst_norm2: 0.0 };
    for _ in 0..n_samples {
        let mut y = CoupledState::zeros(model);
        match sampling {
            Sampling::Constants => {
                let c: f64 = rng.gen_range(-1.0..1.0);
                y.flow.phi.iter_mut().for_each(|p| *p = c);
            }
            Sampling::Random | Sampling::ViolateKj => {
                for x in y.flow.phi.iter_mut().chain(y.flow.psi.iter_mut()) {
                    *x = rng.gen_range(-1.0..1.0);
                }
                for x in y.beam.w.iter_mut().chain(y.beam.v.iter_mut()) {
                    *x = rng.gen_range(-1.0..1.0);
                }
                let keep = y.flow.psi.clone();
                model.project(&mut y);
                if sampling == Sampling::ViolateKj {
                    y.flow.psi = keep;
                }
            }
        }
        let norm2 = model.y_dot(&y, &y);
        if norm2 == 0.0 {
            continue;
        }
        report.samples += 1;
        let b = model.breakdown(&y);
        let ratio = libm::fabs(b.total) / norm2;
        if ratio >= report.max_ratio {
            report.max_ratio = ratio;
            report.worst = b;
            report.worst_norm2 = norm2;
        }
    }
    report
}

/// Factored solver for `(A_h - lambda) y = F` with the beam row
/// `-A4 (D w + delta v) + trace(psi) - lambda v = g2`.
///
/// The flow part is eliminated with the banded flow resolvent; the interface
/// map from Neumann data to the `psi` trace is tabulated once, so each solve
/// is two flow solves and one small dense solve.
pub struct GeneratorResolvent<'a> {
    pub model: &'a CoupledModel,
    pub lambda: f64,
    flow: FlowResolvent<'a>,
    interface: Vec<f64>,
    mask: Vec<f64>,
    lu: DenseLu,
}

impl<'a> GeneratorResolvent<'a> {
    pub fn new(model: &'a CoupledModel, lambda: f64) -> Result<Self> {
        let flow = model.flow.resolvent(lambda)?;
        let nb = model.beam.n();
        let zero = vec![0.0; model.flow.n()];
        let mut interface = vec![0.0; nb * nb];
        for j in 0..nb {
            if model.flow.neumann_weight[j] == 0.0 {
                continue;
            }
            let phi = flow.neumann_response(j);
            let psi = flow.psi_of(&zero, &phi);
            for (k, t) in model.flow.trace(&psi).into_iter().enumerate() {
                interface[k * nb + j] = t;
            }
        }
        let mask: Vec<f64> = (0..nb)
            .map(|k| if model.flow.constrained[model.flow.beam_node(k)] || k == 0 { 0.0 } else { 1.0 })
            .collect();
        let BeamParams { d, delta, .. } = model.beam.params;
        let a4 = model.beam.a4_dense();
        let su = model.sigma * model.flow.params.u;
        // Interface map composed with g = (lambda + sigma U S) w.
        let mut ts = vec![0.0; nb * nb];
        for k in 0..nb {
            for j in 0..nb {
                let mut acc = lambda * interface[k * nb + j];
                if su != 0.0 {
                    for l in 0..nb {
                        acc += su * interface[k * nb + l] * model.slope[l * nb + j];
                    }
                }
                ts[k * nb + j] = acc;
            }
        }
        let mut m = vec![0.0; nb * nb];
        for i in 0..nb {
            for j in 0..nb {
                m[i * nb + j] = (d + delta * lambda) * a4[i * nb + j] - mask[i] * ts[i * nb + j];
            }
            m[i * nb + i] += lambda * lambda;
        }
        for j in 0..nb {
            m[j] = 0.0;
        }
        m[0] = 1.0;
        let lu = DenseLu::new(nb, m)?;
        Ok(GeneratorResolvent { model, lambda, flow, interface, mask, lu })
    }

    pub fn solve(&self, data: &ResolventData) -> Result<CoupledState> {
        let model = self.model;
        data.check(model)?;
        let lambda = self.lambda;
        let nb = model.beam.n();
        let delta = model.beam.params.delta;
        let phi_free = self.flow.solve_free(&data.f1, &data.f2);
        let psi_free = model.flow.trace(&self.flow.psi_of(&data.f1, &phi_free));
        let a4g1 = model.beam.a4(&data.g1);
        let mut rhs = vec![0.0; nb];
        for i in 1..nb {
            let tg: f64 = (0..nb).map(|j| self.interface[i * nb + j] * data.g1[j]).sum();
            rhs[i] = -data.g2[i] - lambda * data.g1[i] - delta * a4g1[i] + self.mask[i] * (psi_free[i] + tg);
        }
        let mut w = self.lu.solve(&rhs);
        w[0] = 0.0;
        let mut v: Vec<f64> = (0..nb).map(|i| data.g1[i] + lambda * w[i]).collect();
        v[0] = 0.0;
        let beam = BeamState { w, v };
        let g = model.neumann_data(&beam);
        let flow = self.flow.solve(&data.f1, &data.f2, &g)?;
        Ok(CoupledState { flow, beam, t: 0.0 })
    }
}

/// Row residuals of `(A_h - lambda) y - F`, each measured in its part of
/// the state norm and divided by `||F||_Y`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResolventResiduals {
    pub phi_row: f64,
    pub psi_row: f64,
    pub w_row: f64,
    pub v_row: f64,
    /// `max |psi|` at constrained nodes.
    pub kj: f64,
    /// Whole residual in the state norm over `||F||_Y`.
    pub relative: f64,
}

pub fn resolvent_residuals(
    model: &CoupledModel,
    lambda: f64,
    y: &CoupledState,
    data: &ResolventData,
) -> ResolventResiduals {
    let ay = model.apply(y);
    let r = ay.axpy(-lambda, y);
    let mut r = CoupledState {
        flow: FlowField {
            phi: r.flow.phi.iter().zip(&data.f1).map(|(a, b)| a - b).collect(),
            psi: r.flow.psi.iter().zip(&data.f2).map(|(a, b)| a - b).collect(),
        },
        beam: BeamState {
            w: r.beam.w.iter().zip(&data.g1).map(|(a, b)| a - b).collect(),
            v: r.beam.v.iter().zip(&data.g2).map(|(a, b)| a - b).collect(),
        },
        t: 0.0,
    };
    let f = &model.flow;
    let mut kj = 0.0f64;
    for k in 0..f.n() {
        if f.constrained[k] {
            kj = kj.max(libm::fabs(y.flow.psi[k]));
            r.flow.psi[k] = 0.0;
        }
    }
    r.beam.w[0] = 0.0;
    r.beam.v[0] = 0.0;
    let mut fy = data.as_state(model);
    model.project(&mut fy);
    let scale = model.y_norm(&fy).max(f64::MIN_POSITIVE);
    let zf = FlowField::zeros(f.n());
    let zb = BeamState::zeros(model.beam.n());
    let part = |flow: FlowField, beam: BeamState| model.y_norm(&CoupledState { flow, beam, t: 0.0 }) / scale;
    ResolventResiduals {
        phi_row: part(FlowField { phi: r.flow.phi.clone(), psi: zf.psi.clone() }, zb.clone()),
        psi_row: part(FlowField { phi: zf.phi.clone(), psi: r.flow.psi.clone() }, zb.clone()),
        w_row: part(zf.clone(), BeamState { w: r.beam.w.clone(), v: zb.v.clone() }),
        v_row: part(zf.clone(), BeamState { w: zb.w.clone(), v: r.beam.v.clone() }),
        kj,
        relative: model.y_norm(&r) / scale,
    }
}

/// Sub-iteration controls for the per-step nonlinear solve.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SubIteration {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SubIteration {
    fn default() -> Self {
        SubIteration { tol: 1e-12, max_iter: 60 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum CouplingScheme {
    /// Implicit midpoint on the whole system; conserves the discrete energy.
    #[default]
    Monolithic,
    /// Flow step with lagged beam data, then a beam step with the averaged
    /// load. Cheaper, first order in the coupling, not conservative.
    Staggered,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StepReport {
    pub iterations: usize,
    /// Largest ratio of successive sub-iteration increments.
    pub contraction: f64,
}

/// Monolithic implicit midpoint stepper.
pub struct CoupledStepper<'a> {
    pub model: &'a CoupledModel,
    pub dt: f64,
    pub scheme: CouplingScheme,
    pub sub: SubIteration,
    resolvent: GeneratorResolvent<'a>,
}

impl<'a> CoupledStepper<'a> {
    pub fn new(model: &'a CoupledModel, dt: f64, scheme: CouplingScheme, sub: SubIteration) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("time step must be positive"));
        }
        let resolvent = GeneratorResolvent::new(model, 2.0 / dt)?;
        Ok(CoupledStepper { model, dt, scheme, sub, resolvent })
    }

    /// Midpoint solve with a given averaged nonlinear force.
    fn midpoint(&self, y: &CoupledState, fbar: Option<&[f64]>) -> Result<CoupledState> {
        let lambda = self.resolvent.lambda;
        let beta = self.model.beam.params.beta;
        let nb = self.model.beam.n();
        let data = ResolventData {
            f1: y.flow.phi.iter().map(|p| -lambda * p).collect(),
            f2: y.flow.psi.iter().map(|p| -lambda * p).collect(),
            g1: y.beam.w.iter().map(|p| -lambda * p).collect(),
            g2: (0..nb)
                .map(|i| -lambda * y.beam.v[i] - self.model.forcing[i] + fbar.map_or(0.0, |f| beta * f[i]))
                .collect(),
        };
        let mid = self.resolvent.solve(&data)?;
        let mut next = mid.scaled(2.0).axpy(-1.0, y);
        next.t = y.t + self.dt;
        self.model.project(&mut next);
        Ok(next)
    }

    /// One step with the nonlinearity frozen at a prescribed averaged
    /// force; linear in the unknowns.
    pub fn step_frozen(&self, y: &CoupledState, fbar: &[f64]) -> Result<CoupledState> {
        check_len("frozen force", self.model.beam.n(), fbar.len())?;
        let next = self.midpoint(y, Some(fbar))?;
        if !next.is_finite() {
            return Err(Error::Divergence { t: next.t });
        }
        Ok(next)
    }

    pub fn step(&self, y: &CoupledState) -> Result<(CoupledState, StepReport)> {
        self.model.check(y)?;
        let out = match self.scheme {
            CouplingScheme::Monolithic => self.step_monolithic(y)?,
            CouplingScheme::Staggered => self.step_staggered(y)?,
        };
        if !out.0.is_finite() {
            return Err(Error::Divergence { t: out.0.t });
        }
        Ok(out)
    }

    fn step_monolithic(&self, y: &CoupledState) -> Result<(CoupledState, StepReport)> {
        let beam = &self.model.beam;
        if beam.params.beta == 0.0 {
            return Ok((self.midpoint(y, None)?, StepReport { iterations: 1, contraction: 0.0 }));
        }
        let w0 = &y.beam.w;
        let guess: Vec<f64> = w0.iter().zip(&y.beam.v).map(|(w, v)| w + self.dt * v).collect();
        let mut fbar = beam.averaged_force(w0, &guess);
        let mut prev_w = guess;
        let mut prev_inc = f64::INFINITY;
        let mut q = 0.0f64;
        let scale = norm_inf(w0).max(self.dt * norm_inf(&y.beam.v)).max(f64::MIN_POSITIVE);
        for it in 1..=self.sub.max_iter {
            let next = self.midpoint(y, Some(&fbar))?;
            let inc = norm_inf(&crate::linalg::sub(&next.beam.w, &prev_w));
            if it > 1 && prev_inc > 0.0 {
                q = q.max(inc / prev_inc);
            }
            if inc <= self.sub.tol * scale.max(norm_inf(&next.beam.w)) {
                return Ok((next, StepReport { iterations: it, contraction: q }));
            }
            if !next.is_finite() || (it > 3 && inc > prev_inc) {
                return Err(Error::FixedPoint { iterations: it, q: inc / prev_inc });
            }
            prev_inc = inc;
            fbar = beam.averaged_force(w0, &next.beam.w);
            prev_w = next.beam.w;
        }
        Err(Error::FixedPoint { iterations: self.sub.max_iter, q })
    }

    fn step_staggered(&self, y: &CoupledState) -> Result<(CoupledState, StepReport)> {
        let m = self.model;
        let lambda = self.resolvent.lambda;
        let g = m.neumann_data(&y.beam);
        let f1: Vec<f64> = y.flow.phi.iter().map(|p| -lambda * p).collect();
        let f2: Vec<f64> = y.flow.psi.iter().map(|p| -lambda * p).collect();
        let mid = self.resolvent.flow.solve(&f1, &f2, &g)?;
        let flow = FlowField {
            phi: mid.phi.iter().zip(&y.flow.phi).map(|(a, b)| 2.0 * a - b).collect(),
            psi: mid.psi.iter().zip(&y.flow.psi).map(|(a, b)| 2.0 * a - b).collect(),
        };
        let l0 = m.flow.beam_load(&y.flow.psi);
        let l1 = m.flow.beam_load(&flow.psi);
        let p0: Vec<f64> = l0.iter().zip(&m.forcing).map(|(a, b)| a + b).collect();
        let p1: Vec<f64> = l1.iter().zip(&m.forcing).map(|(a, b)| a + b).collect();
        let (beam, rep) = m.beam.step(
            &y.beam,
            Some(crate::beam::ForcingSlab { start: &p0, end: &p1 }),
            self.dt,
            crate::beam::BeamScheme::ImplicitMidpoint,
            crate::beam::StageSolver { tol: self.sub.tol.max(1e-12), max_iter: self.sub.max_iter },
        )?;
        let mut next = CoupledState { flow, beam, t: y.t + self.dt };
        m.project(&mut next);
        Ok((next, StepReport { iterations: rep.iterations, contraction: 0.0 }))
    }

    /// Steps `n` times, keeping every state (the initial one included).
    pub fn run(&self, y0: &CoupledState, n: usize) -> Result<(Vec<CoupledState>, Vec<StepReport>)> {
        let mut traj = Vec::with_capacity(n + 1);
        let mut reps = Vec::with_capacity(n);
        traj.push(y0.clone());
        for _ in 0..n {
            let (next, rep) = self.step(traj.last().expect("nonempty"))?;
            traj.push(next);
            reps.push(rep);
        }
        Ok((traj, reps))
    }
}

/// One step of the coupled system; factors the step operator on every call,
/// so loops should hold a [`CoupledStepper`].
pub fn step_coupled(
    model: &CoupledModel,
    state: &CoupledState,
    dt: f64,
    sub: SubIteration,
) -> Result<(CoupledState, StepReport)> {
    CoupledStepper::new(model, dt, CouplingScheme::Monolithic, sub)?.step(state)
}

/// Controls for the slab-wise Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FixedPointConfig {
    /// Bound on `int ||A4 w||^2 dt + sup ||k v||^2` over the slab.
    pub ball_radius: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub window_t: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig { ball_radius: 1e6, tol: 1e-10, max_iters: 60, window_t: 0.5 }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ball_radius > 0.0 && self.tol > 0.0 && self.window_t > 0.0 && self.max_iters > 0) {
            return Err(Error::config("fixed-point radius, tolerance, window and iteration cap must be positive"));
        }
        Ok(())
    }
}

/// Starting trajectory for the Picard iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialGuess {
    /// The initial deflection held fixed over the slab.
    Frozen,
    /// Zero deflection.
    Zero,
    /// Initial deflection plus `t v0`.
    Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContractionReport {
    pub trajectory: Vec<CoupledState>,
    /// Slab solves performed.
    pub iterations: usize,
    /// Sup-in-time beam-norm distance between successive iterates.
    pub differences: Vec<f64>,
    /// Geometric rate fitted to the differences (0 when one solve sufficed).
    pub q: f64,
    /// `int ||A4 w||^2 dt + sup ||k v||^2` of the final iterate.
    pub ball_value: f64,
}

/// Picard iteration of the slab map on `[t0, t0 + window_t]`: each sweep
/// steps the linear system with the nonlinear force frozen at the previous
/// iterate, until the iterates agree to `tol` in the sup-in-time beam norm.
pub fn contraction_solve(
    stepper: &CoupledStepper<'_>,
    state0: &CoupledState,
    config: &FixedPointConfig,
    guess: InitialGuess,
) -> Result<ContractionReport> {
    config.validate()?;
    let model = stepper.model;
    model.check(state0)?;
    let steps = libm::round(config.window_t / stepper.dt).max(1.0) as usize;
    let window = steps as f64 * stepper.dt;
    let beam = &model.beam;
    if beam.params.beta == 0.0 {
        let (traj, _) = stepper.run(state0, steps)?;
        let ball_value = ball_measure(model, &traj, stepper.dt);
        check_ball(ball_value, config)?;
        return Ok(ContractionReport { trajectory: traj, iterations: 1, differences: vec![], q: 0.0, ball_value });
    }
    let mut prev: Vec<BeamState> = (0..=steps)
        .map(|n| {
            let t = n as f64 * stepper.dt;
            let (w, v) = match guess {
                InitialGuess::Frozen => (state0.beam.w.clone(), vec![0.0; beam.n()]),
                InitialGuess::Zero => (vec![0.0; beam.n()], vec![0.0; beam.n()]),
                InitialGuess::Linear => {
                    (state0.beam.w.iter().zip(&state0.beam.v).map(|(w, v)| w + t * v).collect(), state0.beam.v.clone())
                }
            };
            BeamState { w, v }
        })
        .collect();
    let mut differences = Vec::new();
    for it in 1..=config.max_iters {
        let mut traj = Vec::with_capacity(steps + 1);
        traj.push(state0.clone());
        for n in 0..steps {
            let fbar = beam.averaged_force(&prev[n].w, &prev[n + 1].w);
            let next = stepper.step_frozen(&traj[n], &fbar)?;
            traj.push(next);
        }
        let diff = traj
            .iter()
            .zip(&prev)
            .map(|(a, b)| {
                let d = BeamState { w: crate::linalg::sub(&a.beam.w, &b.w), v: crate::linalg::sub(&a.beam.v, &b.v) };
                model.x_norm(&d)
            })
            .fold(0.0, f64::max);
        differences.push(diff);
        let ball_value = ball_measure(model, &traj, stepper.dt);
        check_ball(ball_value, config)?;
        let q = fitted_rate(&differences);
        if diff <= config.tol {
            return Ok(ContractionReport { trajectory: traj, iterations: it, differences, q, ball_value });
        }
        if differences.len() >= 3 && q >= 1.0 {
            return Err(Error::NonContractive { q, window });
        }
        prev = traj.into_iter().map(|s| s.beam).collect();
    }
    Err(Error::NonContractive { q: fitted_rate(&differences), window })
}

/// Contraction over consecutive slabs covering `[0, horizon]`.
pub fn contraction_run(
    stepper: &CoupledStepper<'_>,
    state0: &CoupledState,
    config: &FixedPointConfig,
    horizon: f64,
) -> Result<(Vec<CoupledState>, Vec<ContractionReport>)> {
    let mut traj = vec![state0.clone()];
    let mut reports = Vec::new();
    let total = libm::round(horizon / stepper.dt).max(1.0) as usize;
    let per = libm::round(config.window_t / stepper.dt).max(1.0) as usize;
    let mut done = 0;
    while done < total {
        let take = per.min(total - done);
        let cfg = FixedPointConfig { window_t: take as f64 * stepper.dt, ..*config };
        let start = traj.last().expect("nonempty").clone();
        let mut rep = contraction_solve(stepper, &start, &cfg, InitialGuess::Linear)?;
        traj.extend(rep.trajectory.drain(1..));
        reports.push(rep);
        done += take;
    }
    Ok((traj, reports))
}

/// Halves the window until the slab map contracts; returns the window that
/// worked and its report.
pub fn contractive_window(
    stepper: &CoupledStepper<'_>,
    state0: &CoupledState,
    config: &FixedPointConfig,
    max_halvings: usize,
) -> Result<(f64, ContractionReport)> {
    let mut cfg = *config;
    let mut last = None;
    for _ in 0..=max_halvings {
        match contraction_solve(stepper, state0, &cfg, InitialGuess::Frozen) {
            Ok(rep) => return Ok((cfg.window_t, rep)),
            Err(
                e @ (Error::NonContractive { .. }
                | Error::BallExit { .. }
                | Error::FixedPoint { .. }
                | Error::Divergence { .. }),
            ) => {
                last = Some(e);
                cfg.window_t *= 0.5;
                if cfg.window_t < stepper.dt {
                    break;
                }
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.unwrap_or(Error::NonContractive { q: f64::INFINITY, window: cfg.window_t }))
}

fn ball_measure(model: &CoupledModel, traj: &[CoupledState], dt: f64) -> f64 {
    let beam = &model.beam;
    let mut integral = 0.0;
    let mut sup = 0.0f64;
    for (n, y) in traj.iter().enumerate() {
        let q = beam.a4(&y.beam.w);
        let wq = if n == 0 || n + 1 == traj.len() { 0.5 } else { 1.0 };
        integral += wq * dt * beam.mass_dot(&q, &q);
        let kv = beam.curvature(&y.beam.v);
        sup = sup.max(beam.curv_dot(&kv, &kv));
    }
    integral + sup
}

fn check_ball(value: f64, config: &FixedPointConfig) -> Result<()> {
    if value.is_finite() && value < config.ball_radius {
        Ok(())
    } else {
        Err(Error::BallExit { value, radius: config.ball_radius })
    }
}

/// Geometric rate from a log-linear fit of the differences after the first.
pub fn fitted_rate(d: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> =
        d.iter().enumerate().skip(1).filter(|(_, x)| **x > 0.0).map(|(k, x)| (k as f64, libm::log(*x))).collect();
    match pts.len() {
        0 => 0.0,
        1 => {
            if d[0] > 0.0 {
                d[1] / d[0]
            } else {
                0.0
            }
        }
        n => {
            let nf = n as f64;
            let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
            let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
            let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
            let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
            libm::exp(sxy / sxx)
        }
    }
}

/// Sup-in-time state-norm distance between two trajectories on the same
/// steps.
pub fn trajectory_distance(model: &CoupledModel, a: &[CoupledState], b: &[CoupledState]) -> f64 {
    a.iter().zip(b).map(|(x, y)| model.y_norm(&x.axpy(-1.0, y))).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DeltaRun {
    pub delta: f64,
    /// `None` when the run succeeded.
    pub failure: Option<alloc::string::String>,
    pub sup_energy: f64,
    pub sup_e1: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DeltaSweep {
    pub runs: Vec<DeltaRun>,
    /// Distance between runs `k` and `k+1`.
    pub distances: Vec<f64>,
    pub monotone: bool,
    /// `max_delta sup E / sup E(delta = 0 or last)`.
    pub envelope_ratio: f64,
    pub trajectories: Vec<Vec<CoupledState>>,
}

/// Runs the same data for each damping value and compares trajectories.
///
/// With `beta = 1` and `delta > 0` the slab contraction is used; otherwise
/// the stepper runs directly. A failed member is recorded and skipped.
pub fn delta_sweep(
    model: &CoupledModel,
    state0: &CoupledState,
    deltas: &[f64],
    horizon: f64,
    dt: f64,
    sub: SubIteration,
    fixed_point: &FixedPointConfig,
) -> Result<DeltaSweep> {
    if deltas.windows(2).any(|w| w[1] >= w[0]) || deltas.iter().any(|d| *d < 0.0) {
        return Err(Error::config("deltas must be nonnegative and strictly descending"));
    }
    let steps = libm::round(horizon / dt).max(1.0) as usize;
    let mut runs = Vec::new();
    let mut trajectories = Vec::new();
    for &delta in deltas {
        let m = model.with_beam_params(BeamParams { delta, ..model.beam.params })?;
        let outcome = (|| -> Result<(Vec<CoupledState>, usize)> {
            let stepper = CoupledStepper::new(&m, dt, CouplingScheme::Monolithic, sub)?;
            if m.beam.params.beta != 0.0 && delta > 0.0 {
                let (traj, reps) = contraction_run(&stepper, state0, fixed_point, horizon)?;
                Ok((traj, reps.iter().map(|r| r.iterations).sum()))
            } else {
                let (traj, reps) = stepper.run(state0, steps)?;
                Ok((traj, reps.iter().map(|r| r.iterations).sum()))
            }
        })();
        match outcome {
            Ok((traj, iterations)) => {
                let sup_energy = traj.iter().map(|y| m.energy(y)).fold(0.0, f64::max);
                let sup_e1 = traj
                    .iter()
                    .map(|y| m.beam.energy(&y.beam, EnergyLevel::E1, Some(&m.accel(y))).unwrap_or(f64::NAN))
                    .fold(0.0, f64::max);
                runs.push(DeltaRun { delta, failure: None, sup_energy, sup_e1, iterations });
                trajectories.push(traj);
            }
            Err(e) => {
                runs.push(DeltaRun {
                    delta,
                    failure: Some(alloc::format!("{e}")),
                    sup_energy: f64::NAN,
                    sup_e1: f64::NAN,
                    iterations: 0,
                });
                trajectories.push(Vec::new());
            }
        }
    }
    let mut distances = Vec::new();
    for k in 0..runs.len().saturating_sub(1) {
        let (a, b) = (&trajectories[k], &trajectories[k + 1]);
        distances.push(if a.is_empty() || b.is_empty() { f64::NAN } else { trajectory_distance(model, a, b) });
    }
    let monotone = distances.windows(2).all(|w| w[1] < w[0]) && distances.iter().all(|d| d.is_finite());
    let reference = runs.last().map_or(f64::NAN, |r| r.sup_energy);
    let envelope_ratio = runs.iter().map(|r| r.sup_energy).fold(0.0, f64::max) / reference;
    Ok(DeltaSweep { runs, distances, monotone, envelope_ratio, trajectories })
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MuRun {
    pub mu: f64,
    pub failure: Option<alloc::string::String>,
    /// `min_t (||phi_0|| + int ||phi_t|| - ||phi(t)||)`.
    pub bound_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MuSweep {
    pub runs: Vec<MuRun>,
    /// Sup-in-time distance between consecutive members, measured as
    /// `||phi_a - phi_b|| + ||psi_a - psi_b|| + beam norm`.
    pub distances: Vec<f64>,
}

/// Runs the linear system for each `mu` and checks
/// `||phi(t)|| <= ||phi_0|| + int_0^t ||phi_t||`.
///
/// `phi_t = psi - U Dx phi` is evaluated at the step midpoints, which is
/// where the midpoint rule makes `phi^{n+1} - phi^n = dt phi_t` exact.
pub fn mu_sweep(
    model: &CoupledModel,
    state0: &CoupledState,
    mus: &[f64],
    horizon: f64,
    dt: f64,
    sub: SubIteration,
) -> Result<MuSweep> {
    if mus.windows(2).any(|w| w[1] >= w[0]) || mus.iter().any(|m| !(*m > 0.0)) {
        return Err(Error::config("mus must be positive and strictly descending"));
    }
    let steps = libm::round(horizon / dt).max(1.0) as usize;
    let mut runs = Vec::new();
    let mut trajectories: Vec<Vec<CoupledState>> = Vec::new();
    for &mu in mus {
        let outcome = (|| -> Result<(Vec<CoupledState>, f64)> {
            let m = model.with_flow_params(FlowParams { mu, ..model.flow.params })?;
            let stepper = CoupledStepper::new(&m, dt, CouplingScheme::Monolithic, sub)?;
            let (traj, _) = stepper.run(state0, steps)?;
            let l2 = |a: &[f64]| libm::sqrt(m.flow.dot(a, a));
            let phi_t = |y: &CoupledState| -> Vec<f64> {
                let d = m.flow.ddx(&y.flow.phi);
                (0..m.flow.n()).map(|k| y.flow.psi[k] - m.flow.params.u * d[k]).collect()
            };
            let n0 = l2(&traj[0].flow.phi);
            let mut integral = 0.0;
            let mut margin = f64::INFINITY;
            let mut prev = phi_t(&traj[0]);
            for y in &traj[1..] {
                let cur = phi_t(y);
                let mid: Vec<f64> = prev.iter().zip(&cur).map(|(a, b)| 0.5 * (a + b)).collect();
                integral += dt * l2(&mid);
                margin = margin.min(n0 + integral - l2(&y.flow.phi));
                prev = cur;
            }
            Ok((traj, margin))
        })();
        match outcome {
            Ok((traj, margin)) => {
                runs.push(MuRun { mu, failure: None, bound_margin: margin });
                trajectories.push(traj);
            }
            Err(e) => {
                runs.push(MuRun { mu, failure: Some(alloc::format!("{e}")), bound_margin: f64::NAN });
                trajectories.push(Vec::new());
            }
        }
    }
    let mut distances = Vec::new();
    for k in 0..runs.len().saturating_sub(1) {
        let (a, b) = (&trajectories[k], &trajectories[k + 1]);
        if a.is_empty() || b.is_empty() {
            distances.push(f64::NAN);
            continue;
        }
        let d = a
            .iter()
            .zip(b)
            .map(|(x, y)| {
                let e = x.axpy(-1.0, y);
                libm::sqrt(model.flow.dot(&e.flow.phi, &e.flow.phi))
                    + libm::sqrt(model.flow.dot(&e.flow.psi, &e.flow.psi))
                    + model.x_norm(&e.beam)
            })
            .fold(0.0, f64::max);
        distances.push(d);
    }
    Ok(MuSweep { runs, distances })
}
