//! Clamped-free Euler-Bernoulli beam with inextensible stiffness.
//!
//! Nodes `x_i = i h`, `i = 0..n`. Node 0 is the clamp. Curvature is taken as
//! `kappa = D2 w` with an even ghost point at the clamp (`w_x(0) = 0`) and
//! `kappa = 0` at the free end; the fourth-derivative operator is then the
//! weighted normal product `A4 = Hw^-1 D2^T Hk D2`, so
//! `(A4 w, v)_Hw = <D2 w, D2 v>_Hk` holds exactly and the natural conditions
//! at the tip are imposed weakly.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_len, Error, Result};
use crate::linalg::{norm_inf, Banded, BandedLu};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BeamGrid {
    pub n_points: usize,
    pub h: f64,
    pub length: f64,
}

impl BeamGrid {
    pub const MIN_POINTS: usize = 8;

    pub fn new(n_points: usize, length: f64) -> Result<Self> {
        if n_points < Self::MIN_POINTS {
            return Err(Error::config(alloc::format!(
                "beam grid needs at least {} points, got {n_points}",
                Self::MIN_POINTS
            )));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(Error::config("beam length must be positive"));
        }
        Ok(BeamGrid { n_points, h: length / (n_points - 1) as f64, length })
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|i| self.x(i)).collect()
    }

    /// Samples `f` at the nodes, forcing the clamp value to zero.
    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let mut out: Vec<f64> = (0..self.n_points).map(|i| f(self.x(i))).collect();
        out[0] = 0.0;
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BeamState {
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

impl BeamState {
    pub fn zeros(n: usize) -> Self {
        BeamState { w: vec![0.0; n], v: vec![0.0; n] }
    }

    /// Builds a state and enforces the clamp (`w[0] = v[0] = 0`; the slope
    /// closure at the clamp ignores the samples, so `w_x(0) = 0` is built in).
    pub fn new(mut w: Vec<f64>, mut v: Vec<f64>) -> Result<Self> {
        check_len("beam velocity", w.len(), v.len())?;
        if w.is_empty() {
            return Err(Error::config("empty beam state"));
        }
        w[0] = 0.0;
        v[0] = 0.0;
        Ok(BeamState { w, v })
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BeamParams {
    pub d: f64,
    pub delta: f64,
    pub beta: f64,
}

impl Default for BeamParams {
    fn default() -> Self {
        BeamParams { d: 1.0, delta: 0.0, beta: 0.0 }
    }
}

impl BeamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d.is_finite()) {
            return Err(Error::config("bending stiffness D must be positive"));
        }
        if !(self.delta >= 0.0 && self.delta.is_finite()) {
            return Err(Error::config("damping delta must be nonnegative"));
        }
        if self.beta != 0.0 && self.beta != 1.0 {
            return Err(Error::config("beta must be 0 or 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum NonlinearForm {
    /// `D[k^3 + 4 s k k' + s^2 A4 w]` from the derivative stencils.
    Expanded,
    /// Weighted gradient of `(D/2)||s k||^2`: the divergence form.
    Divergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EnergyLevel {
    E0,
    E1,
    E2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum BeamScheme {
    ImplicitMidpoint,
    Newmark,
}

/// Nonlinear stage-solver settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StageSolver {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for StageSolver {
    fn default() -> Self {
        StageSolver { tol: 1e-10, max_iter: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageReport {
    pub iterations: usize,
    pub residual: f64,
    pub fixed_point_fallback: bool,
}

/// Forcing at the two ends of a time step.
#[derive(Debug, Clone, Copy)]
pub struct ForcingSlab<'a> {
    pub start: &'a [f64],
    pub end: &'a [f64],
}

/// At most three taps of a difference stencil.
#[derive(Debug, Clone, Copy)]
struct Taps {
    col: [usize; 3],
    coef: [f64; 3],
    len: usize,
}

impl Taps {
    const EMPTY: Taps = Taps { col: [0; 3], coef: [0.0; 3], len: 0 };

    fn apply(&self, w: &[f64]) -> f64 {
        (0..self.len).map(|k| self.coef[k] * w[self.col[k]]).sum()
    }

    fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        (0..self.len).map(move |k| (self.col[k], self.coef[k]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamOperator {
    pub grid: BeamGrid,
    pub params: BeamParams,
    /// Trapezoid weights of the discrete L2(0, L) product.
    pub mass: Vec<f64>,
    /// Weights of the curvature product; zero at the free end.
    pub curv_weight: Vec<f64>,
}

pub fn assemble_beam_operator(grid: BeamGrid, params: BeamParams) -> Result<BeamOperator> {
    BeamOperator::new(grid, params)
}

impl BeamOperator {
    pub fn new(grid: BeamGrid, params: BeamParams) -> Result<Self> {
        if grid.n_points < BeamGrid::MIN_POINTS {
            return Err(Error::config("beam grid too small for the stencil"));
        }
        params.validate()?;
        let n = grid.n_points;
        let h = grid.h;
        let mut mass = vec![h; n];
        mass[0] = 0.5 * h;
        mass[n - 1] = 0.5 * h;
        let mut curv_weight = mass.clone();
        curv_weight[n - 1] = 0.0;
        Ok(BeamOperator { grid, params, mass, curv_weight })
    }

    pub fn with_params(&self, params: BeamParams) -> Result<Self> {
        Self::new(self.grid, params)
    }

    pub fn n(&self) -> usize {
        self.grid.n_points
    }

    fn d2_taps(&self, i: usize) -> Taps {
        let n = self.n();
        let ih2 = 1.0 / (self.grid.h * self.grid.h);
        if i == 0 {
            Taps { col: [0, 1, 0], coef: [-2.0 * ih2, 2.0 * ih2, 0.0], len: 2 }
        } else if i + 1 < n {
            Taps { col: [i - 1, i, i + 1], coef: [ih2, -2.0 * ih2, ih2], len: 3 }
        } else {
            Taps::EMPTY
        }
    }

    fn sx_taps(&self, i: usize) -> Taps {
        let n = self.n();
        let h = self.grid.h;
        if i == 0 {
            Taps::EMPTY
        } else if i + 1 < n {
            Taps { col: [i - 1, i + 1, 0], coef: [-0.5 / h, 0.5 / h, 0.0], len: 2 }
        } else {
            Taps { col: [i - 1, i, 0], coef: [-1.0 / h, 1.0 / h, 0.0], len: 2 }
        }
    }

    /// `kappa = D2 w`.
    pub fn curvature(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| self.d2_taps(i).apply(w)).collect()
    }

    /// `D2^T c`.
    pub fn curvature_t(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (i, ci) in c.iter().enumerate() {
            for (j, a) in self.d2_taps(i).iter() {
                out[j] += a * ci;
            }
        }
        out
    }

    /// `s = Sx w`, the nodal slope.
    pub fn slope(&self, w: &[f64]) -> Vec<f64> {
        (0..self.n()).map(|i| self.sx_taps(i).apply(w)).collect()
    }

    /// `Sx^T c`.
    pub fn slope_t(&self, c: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (i, ci) in c.iter().enumerate() {
            for (j, a) in self.sx_taps(i).iter() {
                out[j] += a * ci;
            }
        }
        out
    }

    /// Nodal derivative of the curvature (`w_xxx`); both ends use the
    /// reflections implied by the boundary conditions and give zero.
    pub fn curvature_slope(&self, kappa: &[f64]) -> Vec<f64> {
        let n = self.n();
        let h = self.grid.h;
        let mut out = vec![0.0; n];
        for i in 1..n - 1 {
            out[i] = (kappa[i + 1] - kappa[i - 1]) / (2.0 * h);
        }
        out
    }

    /// `A4 w` (the clamp row is zero).
    pub fn a4(&self, w: &[f64]) -> Vec<f64> {
        let kappa = self.curvature(w);
        let wk: Vec<f64> = kappa.iter().zip(&self.curv_weight).map(|(k, c)| k * c).collect();
        let mut out = self.curvature_t(&wk);
        out[0] = 0.0;
        for i in 1..self.n() {
            out[i] /= self.mass[i];
        }
        out
    }

    /// Symmetric stiffness `K4 = D2^T Hk D2` as a band matrix (bandwidth 2).
    pub fn stiffness_band(&self) -> Banded {
        let n = self.n();
        let mut b = Banded::zeros(n, 2, 2);
        for i in 0..n {
            let c = self.curv_weight[i];
            if c == 0.0 {
                continue;
            }
            let t = self.d2_taps(i);
            for (j, a) in t.iter() {
                for (k, bb) in t.iter() {
                    b.add(j, k, c * a * bb);
                }
            }
        }
        b
    }

    /// Dense row-major `A4` (clamp row and column zero).
    pub fn a4_dense(&self) -> Vec<f64> {
        let n = self.n();
        let mut m = vec![0.0; n * n];
        let mut e = vec![0.0; n];
        for k in 1..n {
            e[k] = 1.0;
            let col = self.a4(&e);
            for i in 0..n {
                m[i * n + k] = col[i];
            }
            e[k] = 0.0;
        }
        m
    }

    pub fn mass_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        crate::linalg::wdot(&self.mass, a, b)
    }

    pub fn curv_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        crate::linalg::wdot(&self.curv_weight, a, b)
    }

    /// `<D2 a, D2 b>` over the curvature weights.
    pub fn bending_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.curv_dot(&self.curvature(a), &self.curvature(b))
    }

    /// Discrete potential `(D/2) ||s kappa||^2`.
    pub fn potential(&self, w: &[f64]) -> f64 {
        let s = self.slope(w);
        let k = self.curvature(w);
        let sk: Vec<f64> = s.iter().zip(&k).map(|(a, b)| a * b).collect();
        0.5 * self.params.d * self.curv_dot(&sk, &sk)
    }

    /// Euclidean gradient of [`Self::potential`].
    fn potential_gradient(&self, w: &[f64]) -> Vec<f64> {
        let s = self.slope(w);
        let k = self.curvature(w);
        let d = self.params.d;
        let a: Vec<f64> = (0..self.n()).map(|i| d * self.curv_weight[i] * k[i] * k[i] * s[i]).collect();
        let b: Vec<f64> = (0..self.n()).map(|i| d * self.curv_weight[i] * s[i] * s[i] * k[i]).collect();
        let mut g = self.slope_t(&a);
        for (gi, bi) in g.iter_mut().zip(self.curvature_t(&b)) {
            *gi += bi;
        }
        g
    }

    fn unweight(&self, mut g: Vec<f64>) -> Vec<f64> {
        g[0] = 0.0;
        for i in 1..self.n() {
            g[i] /= self.mass[i];
        }
        g
    }

    /// Inextensible stiffness force `F(w)` in the requested form.
    pub fn nonlinearity(&self, w: &[f64], form: NonlinearForm) -> Vec<f64> {
        match form {
            NonlinearForm::Divergence => self.unweight(self.potential_gradient(w)),
            NonlinearForm::Expanded => self.expanded_force_with(w, &self.a4(w)),
        }
    }

    /// The expanded force with the fourth-derivative slot filled by `q`
    /// instead of `A4 w`; affine in `q`.
    pub fn expanded_force_with(&self, w: &[f64], q: &[f64]) -> Vec<f64> {
        let s = self.slope(w);
        let k = self.curvature(w);
        let kp = self.curvature_slope(&k);
        let d = self.params.d;
        let mut f: Vec<f64> =
            (0..self.n()).map(|i| d * (k[i] * k[i] * k[i] + 4.0 * s[i] * k[i] * kp[i] + s[i] * s[i] * q[i])).collect();
        f[0] = 0.0;
        f
    }

    /// Averaged discrete gradient `int_0^1 F((1-t) w0 + t w1) dt`, exact
    /// for the cubic force by two-point Gauss quadrature.
    pub fn averaged_force(&self, w0: &[f64], w1: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.n()];
        for xi in GAUSS2 {
            let wx: Vec<f64> = w0.iter().zip(w1).map(|(a, b)| a + xi * (b - a)).collect();
            for (gi, v) in g.iter_mut().zip(self.potential_gradient(&wx)) {
                *gi += 0.5 * v;
            }
        }
        self.unweight(g)
    }

    /// Adds `scale * Hess V(w)` into `m`.
    fn add_hessian(&self, m: &mut Banded, w: &[f64], scale: f64) {
        let s = self.slope(w);
        let k = self.curvature(w);
        let d = self.params.d;
        for i in 0..self.n() {
            let c = self.curv_weight[i] * d * scale;
            if c == 0.0 {
                continue;
            }
            let (sx, d2) = (self.sx_taps(i), self.d2_taps(i));
            let (kk, ss, sk) = (k[i] * k[i], s[i] * s[i], 2.0 * s[i] * k[i]);
            for (a, ca) in sx.iter() {
                for (b, cb) in sx.iter() {
                    m.add(a, b, c * kk * ca * cb);
                }
                for (b, cb) in d2.iter() {
                    m.add(a, b, c * sk * ca * cb);
                    m.add(b, a, c * sk * ca * cb);
                }
            }
            for (a, ca) in d2.iter() {
                for (b, cb) in d2.iter() {
                    m.add(a, b, c * ss * ca * cb);
                }
            }
        }
    }

    /// Adds `scale * d/dw1 [Hw * averaged_force(w0, w1)]`.
    fn add_averaged_jacobian(&self, m: &mut Banded, w0: &[f64], w1: &[f64], scale: f64) {
        for xi in GAUSS2 {
            let wx: Vec<f64> = w0.iter().zip(w1).map(|(a, b)| a + xi * (b - a)).collect();
            self.add_hessian(m, &wx, 0.5 * xi * scale);
        }
    }

    /// `w_tt = -A4(D w + delta v) - beta F(w) + p`.
    pub fn accel(&self, state: &BeamState, p: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        check_len("beam state", n, state.len())?;
        check_len("beam forcing", n, p.len())?;
        let BeamParams { d, delta, beta } = self.params;
        let mix: Vec<f64> = state.w.iter().zip(&state.v).map(|(w, v)| d * w + delta * v).collect();
        let mut a = self.a4(&mix);
        for (ai, pi) in a.iter_mut().zip(p) {
            *ai = pi - *ai;
        }
        if beta != 0.0 {
            for (ai, fi) in a.iter_mut().zip(self.nonlinearity(&state.w, NonlinearForm::Divergence)) {
                *ai -= beta * fi;
            }
        }
        a[0] = 0.0;
        Ok(a)
    }

    /// Energy hierarchy. The inextensible contributions to `E0` and `E1`
    /// carry the factor `beta`, so that for `beta = 0` they reduce to the
    /// linear energies conserved by the linear dynamics.
    pub fn energy(&self, state: &BeamState, level: EnergyLevel, w_tt: Option<&[f64]>) -> Result<f64> {
        let n = self.n();
        check_len("beam state", n, state.len())?;
        let (d, beta) = (self.params.d, self.params.beta);
        let prod = |a: &[f64], b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(x, y)| x * y).collect() };
        match level {
            EnergyLevel::E0 => {
                let k = self.curvature(&state.w);
                let sk = prod(&self.slope(&state.w), &k);
                Ok(0.5 * self.mass_dot(&state.v, &state.v)
                    + 0.5 * d * (self.curv_dot(&k, &k) + beta * self.curv_dot(&sk, &sk)))
            }
            EnergyLevel::E1 => {
                let a = w_tt.ok_or(Error::Usage("E1 needs the w_tt field"))?;
                check_len("w_tt", n, a.len())?;
                let kv = self.curvature(&state.v);
                let kw = self.curvature(&state.w);
                let t1 = prod(&self.slope(&state.v), &kw);
                let t2 = prod(&self.slope(&state.w), &kv);
                Ok(0.5
                    * (self.mass_dot(a, a)
                        + d * (self.curv_dot(&kv, &kv) + beta * (self.curv_dot(&t1, &t1) + self.curv_dot(&t2, &t2)))))
            }
            EnergyLevel::E2 => {
                let kv = self.curvature(&state.v);
                let q = self.a4(&state.w);
                Ok(0.5 * (self.curv_dot(&kv, &kv) + self.mass_dot(&q, &q)))
            }
        }
    }

    /// One step of the standalone beam.
    pub fn step(
        &self,
        state: &BeamState,
        forcing: Option<ForcingSlab<'_>>,
        dt: f64,
        scheme: BeamScheme,
        solver: StageSolver,
    ) -> Result<(BeamState, StageReport)> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("time step must be positive"));
        }
        let n = self.n();
        check_len("beam state", n, state.len())?;
        let zero = vec![0.0; n];
        let (p0, p1) = match forcing {
            Some(f) => {
                check_len("beam forcing", n, f.start.len())?;
                check_len("beam forcing", n, f.end.len())?;
                (f.start, f.end)
            }
            None => (&zero[..], &zero[..]),
        };
        match scheme {
            BeamScheme::ImplicitMidpoint => self.step_midpoint(state, p0, p1, dt, solver),
            BeamScheme::Newmark => self.step_newmark(state, p0, p1, dt, solver),
        }
    }

    fn step_midpoint(
        &self,
        st: &BeamState,
        p0: &[f64],
        p1: &[f64],
        tau: f64,
        solver: StageSolver,
    ) -> Result<(BeamState, StageReport)> {
        let n = self.n();
        let BeamParams { d, delta, beta } = self.params;
        let w0 = &st.w;
        let pm: Vec<f64> = p0.iter().zip(p1).map(|(a, b)| 0.5 * (a + b)).collect();
        let linear = {
            let mut m = self.stiffness_band();
            scale_band(&mut m, 0.5 * d + delta / tau);
            for i in 0..n {
                m.add(i, i, 2.0 / (tau * tau) * self.mass[i]);
            }
            m
        };
        // Residual scaled by Hw, clamp row excluded.
        let residual = |w1: &[f64]| -> Vec<f64> {
            let mix: Vec<f64> = (0..n).map(|i| 0.5 * d * (w0[i] + w1[i]) + delta * (w1[i] - w0[i]) / tau).collect();
            let k4 = self.a4(&mix);
            let fb = if beta != 0.0 { self.averaged_force(w0, w1) } else { vec![0.0; n] };
            let mut r: Vec<f64> = (0..n)
                .map(|i| {
                    self.mass[i]
                        * (2.0 / (tau * tau) * (w1[i] - w0[i]) - 2.0 / tau * st.v[i] + k4[i] + beta * fb[i] - pm[i])
                })
                .collect();
            r[0] = 0.0;
            r
        };
        let jacobian = |w1: &[f64]| -> Banded {
            let mut m = linear.clone();
            if beta != 0.0 {
                self.add_averaged_jacobian(&mut m, w0, w1, beta);
            }
            m.pin_row(0);
            m
        };
        let guess: Vec<f64> = (0..n).map(|i| w0[i] + tau * st.v[i]).collect();
        let scale = norm_inf(w0).max(tau * norm_inf(&st.v));
        let (w1, report) = newton(guess, residual, jacobian, &linear, beta != 0.0, scale, solver)?;
        let mut v1: Vec<f64> = (0..n).map(|i| 2.0 * (w1[i] - w0[i]) / tau - st.v[i]).collect();
        v1[0] = 0.0;
        Ok((BeamState { w: w1, v: v1 }, report))
    }

    fn step_newmark(
        &self,
        st: &BeamState,
        p0: &[f64],
        p1: &[f64],
        tau: f64,
        solver: StageSolver,
    ) -> Result<(BeamState, StageReport)> {
        let n = self.n();
        let BeamParams { d, delta, beta } = self.params;
        let a0 = self.accel(st, p0)?;
        let (w0, v0) = (&st.w, &st.v);
        let end_state = |w1: &[f64]| -> (Vec<f64>, Vec<f64>) {
            let a1: Vec<f64> = (0..n).map(|i| 4.0 * (w1[i] - w0[i] - tau * v0[i]) / (tau * tau) - a0[i]).collect();
            let v1: Vec<f64> = (0..n).map(|i| v0[i] + 0.5 * tau * (a0[i] + a1[i])).collect();
            (a1, v1)
        };
        let linear = {
            let mut m = self.stiffness_band();
            scale_band(&mut m, d + 2.0 * delta / tau);
            for i in 0..n {
                m.add(i, i, 4.0 / (tau * tau) * self.mass[i]);
            }
            m
        };
        let residual = |w1: &[f64]| -> Vec<f64> {
            let (a1, v1) = end_state(w1);
            let mix: Vec<f64> = (0..n).map(|i| d * w1[i] + delta * v1[i]).collect();
            let k4 = self.a4(&mix);
            let f = if beta != 0.0 { self.nonlinearity(w1, NonlinearForm::Divergence) } else { vec![0.0; n] };
            let mut r: Vec<f64> = (0..n).map(|i| self.mass[i] * (a1[i] + k4[i] + beta * f[i] - p1[i])).collect();
            r[0] = 0.0;
            r
        };
        let jacobian = |w1: &[f64]| -> Banded {
            let mut m = linear.clone();
            if beta != 0.0 {
                self.add_hessian(&mut m, w1, beta);
            }
            m.pin_row(0);
            m
        };
        let guess: Vec<f64> = (0..n).map(|i| w0[i] + tau * v0[i] + 0.25 * tau * tau * a0[i]).collect();
        let scale = norm_inf(w0).max(tau * norm_inf(v0));
        let (w1, report) = newton(guess, residual, jacobian, &linear, beta != 0.0, scale, solver)?;
        let (_, mut v1) = end_state(&w1);
        v1[0] = 0.0;
        Ok((BeamState { w: w1, v: v1 }, report))
    }

    /// Solves the shifted biharmonic problem `(alpha A4 + lambda2) w = f`
    /// with the clamp pinned.
    pub fn solve_shifted(&self, alpha: f64, lambda2: f64, f: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        check_len("beam data", n, f.len())?;
        let mut m = self.stiffness_band();
        scale_band(&mut m, alpha);
        for i in 0..n {
            m.add(i, i, lambda2 * self.mass[i]);
        }
        m.pin_row(0);
        let lu = BandedLu::new(m)?;
        let mut rhs: Vec<f64> = (0..n).map(|i| self.mass[i] * f[i]).collect();
        rhs[0] = 0.0;
        lu.solve_in_place(&mut rhs);
        Ok(rhs)
    }
}

const GAUSS2: [f64; 2] = [0.211_324_865_405_187_1, 0.788_675_134_594_812_9];

fn scale_band(m: &mut Banded, s: f64) {
    for i in 0..m.n {
        let lo = i.saturating_sub(m.kl);
        let hi = (i + m.ku).min(m.n - 1);
        for j in lo..=hi {
            let v = m.get(i, j);
            m.set(i, j, s * v);
        }
    }
}

fn weighted_norm(r: &[f64]) -> f64 {
    libm::sqrt(r.iter().map(|x| x * x).sum::<f64>())
}

/// Damped Newton with a frozen-nonlinearity fixed-point fallback.
fn newton(
    mut w: Vec<f64>,
    residual: impl Fn(&[f64]) -> Vec<f64>,
    jacobian: impl Fn(&[f64]) -> Banded,
    linear: &Banded,
    nonlinear: bool,
    scale: f64,
    solver: StageSolver,
) -> Result<(Vec<f64>, StageReport)> {
    let n = w.len();
    w[0] = 0.0;
    let mut r = residual(&w);
    let r_ref = weighted_norm(&r).max(f64::MIN_POSITIVE);
    let done = |dw: f64, w: &[f64]| dw <= solver.tol * scale.max(norm_inf(w)) || dw == 0.0;
    let mut newton_ok = true;
    for it in 1..=solver.max_iter {
        let lu = match BandedLu::new(jacobian(&w)) {
            Ok(lu) => lu,
            Err(_) => {
                newton_ok = false;
                break;
            }
        };
        let mut dw: Vec<f64> = r.iter().map(|x| -x).collect();
        dw[0] = 0.0;
        lu.solve_in_place(&mut dw);
        if nonlinear && done(norm_inf(&dw), &w) {
            for i in 0..n {
                w[i] += dw[i];
            }
            r = residual(&w);
            return Ok((
                w,
                StageReport { iterations: it, residual: weighted_norm(&r) / r_ref, fixed_point_fallback: false },
            ));
        }
        let r_norm = weighted_norm(&r);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let trial: Vec<f64> = (0..n).map(|i| w[i] + step * dw[i]).collect();
            let rt = residual(&trial);
            let rn = weighted_norm(&rt);
            if !nonlinear || rn <= (1.0 - 1e-4 * step) * r_norm || rn <= 1e-14 * r_ref {
                accepted = Some((trial, rt));
                break;
            }
            step *= 0.5;
        }
        let Some((trial, rt)) = accepted else {
            newton_ok = false;
            break;
        };
        let inc = step * norm_inf(&dw);
        w = trial;
        r = rt;
        if !nonlinear || done(inc, &w) {
            return Ok((
                w,
                StageReport { iterations: it, residual: weighted_norm(&r) / r_ref, fixed_point_fallback: false },
            ));
        }
    }
    debug_assert!(!newton_ok || nonlinear);
    // Fixed point: freeze the nonlinear part of the residual at the iterate.
    let mut lin = linear.clone();
    lin.pin_row(0);
    let lu = BandedLu::new(lin)?;
    for it in 1..=solver.max_iter {
        let lw = linear_apply(linear, &w);
        let mut rhs: Vec<f64> = (0..n).map(|i| lw[i] - r[i]).collect();
        rhs[0] = 0.0;
        lu.solve_in_place(&mut rhs);
        let inc = norm_inf(&crate::linalg::sub(&rhs, &w));
        w = rhs;
        r = residual(&w);
        if !crate::linalg::all_finite(&w) {
            break;
        }
        if done(inc, &w) {
            return Ok((
                w,
                StageReport { iterations: it, residual: weighted_norm(&r) / r_ref, fixed_point_fallback: true },
            ));
        }
    }
    Err(Error::StageSolve { iterations: solver.max_iter, residual: weighted_norm(&r) / r_ref })
}

fn linear_apply(m: &Banded, w: &[f64]) -> Vec<f64> {
    let mut y = m.mul_vec(w);
    y[0] = 0.0;
    y
}

pub fn beam_nonlinearity(op: &BeamOperator, w: &[f64], form: NonlinearForm) -> Vec<f64> {
    op.nonlinearity(w, form)
}

pub fn beam_accel(op: &BeamOperator, state: &BeamState, p: &[f64]) -> Result<Vec<f64>> {
    op.accel(state, p)
}

pub fn beam_energy(op: &BeamOperator, state: &BeamState, level: EnergyLevel, w_tt: Option<&[f64]>) -> Result<f64> {
    op.energy(state, level, w_tt)
}

pub fn step_beam(
    op: &BeamOperator,
    state: &BeamState,
    forcing: Option<ForcingSlab<'_>>,
    dt: f64,
    scheme: BeamScheme,
    solver: StageSolver,
) -> Result<(BeamState, StageReport)> {
    op.step(state, forcing, dt, scheme, solver)
}
