//! Named initial data and closed-form manufactured fields.

use alloc::vec;
use alloc::vec::Vec;

use crate::beam::{BeamGrid, BeamParams, BeamState};
use crate::coupled::{CoupledModel, CoupledState};
use crate::elliptic::ResolventData;
use crate::error::{Error, Result};
use crate::flow::{FlowField, FlowGrid, FlowParams};

/// Initial data selectable by name.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "kebab-case"))]
pub enum InitialData {
    Zero,
    /// Static cantilever shape under uniform load with tip deflection
    /// `amplitude`, at rest.
    BeamTipBump {
        amplitude: f64,
    },
    /// Gaussian potential `amplitude exp(-r^2 / width^2)` with `psi = 0`.
    FlowPulse {
        amplitude: f64,
        x0: f64,
        z0: f64,
        width: f64,
    },
}

impl InitialData {
    pub fn build(&self, model: &CoupledModel) -> Result<CoupledState> {
        match *self {
            InitialData::Zero => Ok(CoupledState::zeros(model)),
            InitialData::BeamTipBump { amplitude } => {
                if !amplitude.is_finite() {
                    return Err(Error::config("bump amplitude must be finite"));
                }
                Ok(beam_tip_bump(model, amplitude))
            }
            InitialData::FlowPulse { amplitude, x0, z0, width } => {
                if !(width > 0.0 && amplitude.is_finite()) {
                    return Err(Error::config("pulse width must be positive"));
                }
                Ok(flow_pulse(model, amplitude, x0, z0, width))
            }
        }
    }
}

/// `A xi^2 (6 - 4 xi + xi^2) / 3` with `xi = x / L`: clamped at 0, free
/// (zero moment and shear) at `L`, tip value `A`.
pub fn tip_bump_shape(grid: &BeamGrid, amplitude: f64) -> Vec<f64> {
    let l = grid.length;
    grid.sample(|x| {
        let s = x / l;
        amplitude * s * s * (6.0 - 4.0 * s + s * s) / 3.0
    })
}

pub fn beam_tip_bump(model: &CoupledModel, amplitude: f64) -> CoupledState {
    let mut y = CoupledState::zeros(model);
    y.beam.w = tip_bump_shape(&model.beam.grid, amplitude);
    y
}

pub fn flow_pulse(model: &CoupledModel, amplitude: f64, x0: f64, z0: f64, width: f64) -> CoupledState {
    let mut y = CoupledState::zeros(model);
    y.flow.phi = model.flow.grid.sample(|x, z| {
        let r2 = ((x - x0) * (x - x0) + (z - z0) * (z - z0)) / (width * width);
        amplitude * libm::exp(-r2)
    });
    y
}

/// Dense polynomial in monomial coefficients, lowest degree first.
#[derive(Debug, Clone, PartialEq)]
pub struct Poly(pub Vec<f64>);

impl Poly {
    pub fn eval(&self, x: f64) -> f64 {
        self.0.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }

    pub fn deriv(&self) -> Poly {
        if self.0.len() <= 1 {
            return Poly(vec![0.0]);
        }
        Poly(self.0.iter().enumerate().skip(1).map(|(k, c)| k as f64 * c).collect())
    }

    pub fn nth_deriv(&self, n: usize) -> Poly {
        (0..n).fold(self.clone(), |p, _| p.deriv())
    }

    pub fn mul(&self, other: &Poly) -> Poly {
        let mut out = vec![0.0; self.0.len() + other.0.len() - 1];
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                out[i + j] += a * b;
            }
        }
        Poly(out)
    }

    pub fn pow(&self, n: u32) -> Poly {
        (0..n).fold(Poly(vec![1.0]), |p, _| p.mul(self))
    }

    pub fn scale(&self, s: f64) -> Poly {
        Poly(self.0.iter().map(|c| s * c).collect())
    }
}

/// Smooth compatible state and its resolvent data for
/// `(A - lambda) y = F`, built from closed forms.
///
/// The beam fields vanish to fifth order at both ends, so the Neumann data
/// and the pressure trace are smooth across the junctions; the flow fields
/// are Gaussian in z and decay well inside any reasonable box.
#[derive(Debug, Clone, PartialEq)]
pub struct ManufacturedResolvent {
    pub lambda: f64,
    pub flow: FlowParams,
    pub beam: BeamParams,
    pub sigma: f64,
    pub length: f64,
    /// `exp(-alpha z^2)` decay.
    pub alpha: f64,
    /// Center and width of the x-Gaussian in the free part of the fields.
    pub xc: f64,
    pub ell: f64,
    w: Poly,
    v: Poly,
    pressure: Poly,
}

impl ManufacturedResolvent {
    pub fn new(lambda: f64, flow: FlowParams, beam: BeamParams, sigma: f64, length: f64) -> Self {
        let p = Poly(vec![0.0, length, -1.0]);
        let scale = 1.0 / libm::pow(0.25 * length * length, 5.0);
        let w = p.pow(5).scale(0.02 * scale);
        let v = p.pow(5).mul(&Poly(vec![1.0, 1.0])).scale(0.03 * scale);
        let pressure = p.pow(4).scale(0.05 / libm::pow(0.25 * length * length, 4.0));
        ManufacturedResolvent {
            lambda,
            flow,
            beam,
            sigma,
            length,
            alpha: 1.5,
            xc: 0.5 * length,
            ell: 0.6,
            w,
            v,
            pressure,
        }
    }

    fn on_beam(&self, x: f64) -> bool {
        (0.0..=self.length).contains(&x)
    }

    /// Neumann datum `v + sigma U w'` and its first two x-derivatives.
    fn neumann(&self, x: f64) -> [f64; 3] {
        if !self.on_beam(x) {
            return [0.0; 3];
        }
        let su = self.sigma * self.flow.u;
        let g = |k: usize| self.v.nth_deriv(k).eval(x) + su * self.w.nth_deriv(k + 1).eval(x);
        [g(0), g(1), g(2)]
    }

    fn pressure(&self, x: f64) -> [f64; 3] {
        if !self.on_beam(x) {
            return [0.0; 3];
        }
        let p = |k: usize| self.pressure.nth_deriv(k).eval(x);
        [p(0), p(1), p(2)]
    }

    /// `exp(-((x - xc)/ell)^2)` and its first two derivatives.
    fn xgauss(&self, x: f64) -> [f64; 3] {
        let s = (x - self.xc) / self.ell;
        let e = libm::exp(-s * s);
        let d1 = -2.0 * s / self.ell * e;
        let d2 = (4.0 * s * s - 2.0) / (self.ell * self.ell) * e;
        [e, d1, d2]
    }

    /// `exp(-alpha z^2)` and `z exp(-alpha z^2)` with two z-derivatives.
    fn zprofiles(&self, z: f64) -> ([f64; 3], [f64; 3]) {
        let a = self.alpha;
        let e = libm::exp(-a * z * z);
        let even = [e, -2.0 * a * z * e, (4.0 * a * a * z * z - 2.0 * a) * e];
        let odd = [z * e, (1.0 - 2.0 * a * z * z) * e, (4.0 * a * a * z * z * z - 6.0 * a * z) * e];
        (even, odd)
    }

    /// `phi`, `phi_x`, `phi_xx`, `phi_zz` at a point.
    fn phi(&self, x: f64, z: f64) -> [f64; 4] {
        let g = self.neumann(x);
        let b = self.xgauss(x);
        let (ev, od) = self.zprofiles(z);
        let bump = 0.2;
        [
            g[0] * od[0] + bump * b[0] * ev[0],
            g[1] * od[0] + bump * b[1] * ev[0],
            g[2] * od[0] + bump * b[2] * ev[0],
            g[0] * od[2] + bump * b[0] * ev[2],
        ]
    }

    /// `psi` and `psi_x` at a point.
    fn psi(&self, x: f64, z: f64) -> [f64; 2] {
        let p = self.pressure(x);
        let b = self.xgauss(x);
        let (ev, od) = self.zprofiles(z);
        let amp = 0.3;
        [p[0] * ev[0] + amp * b[0] * od[0], p[1] * ev[0] + amp * b[1] * od[0]]
    }

    pub fn exact(&self, beam: &BeamGrid, flow: &FlowGrid) -> CoupledState {
        CoupledState {
            flow: FlowField { phi: flow.sample(|x, z| self.phi(x, z)[0]), psi: flow.sample(|x, z| self.psi(x, z)[0]) },
            beam: BeamState { w: beam.sample(|x| self.w.eval(x)), v: beam.sample(|x| self.v.eval(x)) },
            t: 0.0,
        }
    }

    pub fn data(&self, beam: &BeamGrid, flow: &FlowGrid) -> ResolventData {
        let (u, mu, lam) = (self.flow.u, self.flow.mu, self.lambda);
        let (d, delta) = (self.beam.d, self.beam.delta);
        let f1 = flow.sample(|x, z| {
            let ph = self.phi(x, z);
            self.psi(x, z)[0] - u * ph[1] - lam * ph[0]
        });
        let f2 = flow.sample(|x, z| {
            let ph = self.phi(x, z);
            let ps = self.psi(x, z);
            ph[2] + ph[3] - mu * ph[0] - u * ps[1] - lam * ps[0]
        });
        let w4 = self.w.nth_deriv(4);
        let v4 = self.v.nth_deriv(4);
        let g1 = beam.sample(|x| self.v.eval(x) - lam * self.w.eval(x));
        let g2 = beam.sample(|x| -d * w4.eval(x) - delta * v4.eval(x) + self.pressure(x)[0] - lam * self.v.eval(x));
        ResolventData { f1, f2, g1, g2 }
    }
}

/// `phi = exp(-x^2)` and `phi_hat = lambda phi + U phi_x` on the given
/// nodes.
pub fn gaussian_ode(xs: &[f64], lambda: f64, u: f64) -> (Vec<f64>, Vec<f64>) {
    let phi: Vec<f64> = xs.iter().map(|x| libm::exp(-x * x)).collect();
    let hat = xs.iter().zip(&phi).map(|(x, p)| (lambda - 2.0 * u * x) * p).collect();
    (phi, hat)
}

/// Interior bump `exp(-((x-xc)^2 + (z-zc)^2)/r^2)` and the strong load
/// `-(1-U^2) q_xx - q_zz + 2 lambda U q_x + (mu + lambda^2) q` it induces.
pub fn zaremba_bump(
    grid: &FlowGrid,
    params: FlowParams,
    lambda: f64,
    center: (f64, f64),
    radius: f64,
) -> (Vec<f64>, Vec<f64>) {
    let (xc, zc) = center;
    let r2 = radius * radius;
    let (u, mu) = (params.u, params.mu);
    let q = |x: f64, z: f64| libm::exp(-((x - xc) * (x - xc) + (z - zc) * (z - zc)) / r2);
    let exact = grid.sample(q);
    let load = grid.sample(|x, z| {
        let e = q(x, z);
        let (dx, dz) = (x - xc, z - zc);
        let qx = -2.0 * dx / r2 * e;
        let qxx = (4.0 * dx * dx / (r2 * r2) - 2.0 / r2) * e;
        let qzz = (4.0 * dz * dz / (r2 * r2) - 2.0 / r2) * e;
        -(1.0 - u * u) * qxx - qzz + 2.0 * lambda * u * qx + (mu + lambda * lambda) * e
    });
    (exact, load)
}
