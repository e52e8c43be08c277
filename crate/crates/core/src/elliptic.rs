//! Mixed (Zaremba) elliptic problems behind the resolvent of the coupled
//! generator.
//!
//! Eliminating `psi = f1 + phi_hat` with `phi_hat = lambda phi + U phi_x`
//! turns the flow rows of `(A - lambda) y = F` into
//!
//! ```text
//! -(1 - U^2) q_xx - q_zz + 2 lambda U q_x + (mu + lambda^2) q = F   in the box
//! q = G1 off the beam,   q_z = G2 on the beam
//! ```
//!
//! whose weak form uses
//! `a(q, z) = (1-U^2)(q_x, z_x) + (q_z, z_z) + lambda U [(q_x, z) - (q, z_x)] + (mu + lambda^2)(q, z)`.
//! The cross term is skew, so `a(z, z)` is the symmetric part alone. `phi`
//! is recovered from `phi_hat` by integrating `lambda phi + U phi_x = phi_hat`
//! along x-lines.
//!
//! The assembly here shares only the grid with the flow operator: it is a
//! second, independent route to the resolvent.

use alloc::vec;
use alloc::vec::Vec;

use crate::beam::BeamState;
use crate::coupled::{resolvent_residuals, CoupledModel, CoupledState, GeneratorResolvent, ResolventResiduals};
use crate::error::{check_len, Error, Result};
use crate::flow::{FlowField, FlowGrid, FlowParams, Junction};
use crate::linalg::{norm_inf, wdot, BandedLu, Csr};

/// Right-hand side `(f1, f2; g1, g2)` of `(A - lambda) y = F`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ResolventData {
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
    pub g1: Vec<f64>,
    pub g2: Vec<f64>,
}

impl ResolventData {
    pub fn zeros(model: &CoupledModel) -> Self {
        let (nf, nb) = (model.flow.n(), model.beam.n());
        ResolventData { f1: vec![0.0; nf], f2: vec![0.0; nf], g1: vec![0.0; nb], g2: vec![0.0; nb] }
    }

    pub fn check(&self, model: &CoupledModel) -> Result<()> {
        check_len("resolvent datum f1", model.flow.n(), self.f1.len())?;
        check_len("resolvent datum f2", model.flow.n(), self.f2.len())?;
        check_len("resolvent datum g1", model.beam.n(), self.g1.len())?;
        check_len("resolvent datum g2", model.beam.n(), self.g2.len())
    }

    /// The data viewed as a state, for measuring it in the state norm.
    pub fn as_state(&self, _model: &CoupledModel) -> CoupledState {
        CoupledState {
            flow: FlowField { phi: self.f1.clone(), psi: self.f2.clone() },
            beam: BeamState { w: self.g1.clone(), v: self.g2.clone() },
            t: 0.0,
        }
    }

    /// `(A_h - lambda) y`, the data that make `y` the exact discrete
    /// resolvent solution.
    pub fn from_state(model: &CoupledModel, lambda: f64, y: &CoupledState) -> Self {
        let r = model.apply(y).axpy(-lambda, y);
        ResolventData { f1: r.flow.phi, f2: r.flow.psi, g1: r.beam.w, g2: r.beam.v }
    }
}

/// Interior load of a Zaremba problem.
#[derive(Debug, Clone, PartialEq)]
pub enum ZarembaLoad {
    /// Nodal values of the strong right-hand side `F`.
    Strong(Vec<f64>),
    /// Flow resolvent data; the load is the pairing
    /// `-(lambda^2 f1 + lambda f2, z) + (2 lambda U f1 + U^2 f1_x + U f2, z_x)`.
    Resolvent { f1: Vec<f64>, f2: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZarembaProblem<'a> {
    pub grid: &'a FlowGrid,
    pub params: FlowParams,
    pub junction: Junction,
    pub lambda: f64,
    pub load: ZarembaLoad,
    /// Dirichlet data on the `z = 0` row (read at constrained columns only).
    pub g1: Vec<f64>,
    /// Neumann data on the beam nodes.
    pub g2: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZarembaSolution {
    pub phi_hat: Vec<f64>,
    /// `||A q - b||_inf / ||b||_inf` on the free rows.
    pub residual: f64,
    /// `a(q0, q0) / ||q0||_1^2` for the homogeneous part `q0`.
    pub coercivity: f64,
    /// `min(1 - U^2, 1, mu + lambda^2)`.
    pub coercivity_bound: f64,
}

/// Assembled and factored Zaremba form for one shift.
#[derive(Debug, Clone)]
pub struct ZarembaSolver<'a> {
    pub grid: &'a FlowGrid,
    pub params: FlowParams,
    pub lambda: f64,
    /// Dirichlet (off-beam) nodes of the `z = 0` row.
    pub dirichlet: Vec<bool>,
    /// Boundary weights of the beam nodes.
    pub neumann_weight: Vec<f64>,
    weight: Vec<f64>,
    kx: Csr,
    kz: Csr,
    dx: Csr,
    form: Csr,
    lu: BandedLu,
}

impl<'a> ZarembaSolver<'a> {
    pub fn new(grid: &'a FlowGrid, params: FlowParams, junction: Junction, lambda: f64) -> Result<Self> {
        params.validate()?;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::config("resolvent shift must be positive"));
        }
        let (nx, nz, hx, hz) = (grid.nx, grid.nz, grid.hx, grid.hz);
        let n = nx * nz;
        let tz = |j: usize| if j == 0 || j + 1 == nz { 0.5 } else { 1.0 };
        let weight: Vec<f64> = (0..n).map(|k| hx * hz * tz(k / nx)).collect();
        let (mut xt, mut zt, mut dt) = (Vec::new(), Vec::new(), Vec::new());
        for j in 0..nz {
            for i in 0..nx {
                let a = j * nx + i;
                let e = j * nx + (i + 1) % nx;
                let w = j * nx + (i + nx - 1) % nx;
                let c = tz(j) * hz / hx;
                xt.extend([(a, a, c), (e, e, c), (a, e, -c), (e, a, -c)]);
                dt.extend([(a, e, 0.5 / hx), (a, w, -0.5 / hx)]);
                if j + 1 < nz {
                    let up = a + nx;
                    let c = hx / hz;
                    zt.extend([(a, a, c), (up, up, c), (a, up, -c), (up, a, -c)]);
                }
            }
        }
        let kx = Csr::from_triplets(n, n, xt);
        let kz = Csr::from_triplets(n, n, zt);
        let dx = Csr::from_triplets(n, n, dt);
        let (u, mu) = (params.u, params.mu);
        let skew: Vec<f64> = weight.iter().map(|w| 2.0 * lambda * u * w).collect();
        let form = kx.lin_comb(1.0 - u * u, &kz, 1.0).lin_comb(1.0, &dx.scale_rows(&skew), 1.0).lin_comb(
            1.0,
            &Csr::diag(&weight),
            mu + lambda * lambda,
        );

        let (i0, i1) = grid.beam_index_range;
        let dirichlet: Vec<bool> = (0..nx)
            .map(|i| match junction {
                Junction::BeamSide => i < i0 || i > i1,
                Junction::WakeSide => i <= i0 || i >= i1,
            })
            .collect();
        let nb = i1 - i0 + 1;
        let neumann_weight: Vec<f64> = (0..nb)
            .map(|k| {
                if dirichlet[i0 + k] {
                    0.0
                } else if k == 0 || k + 1 == nb {
                    0.5 * hx
                } else {
                    hx
                }
            })
            .collect();
        let mut band = form.to_banded();
        for (i, d) in dirichlet.iter().enumerate() {
            if *d {
                band.pin_row(i);
            }
        }
        let lu = band.factor()?;
        Ok(ZarembaSolver { grid, params, lambda, dirichlet, neumann_weight, weight, kx, kz, dx, form, lu })
    }

    pub fn n(&self) -> usize {
        self.weight.len()
    }

    /// `a(q, z)`.
    pub fn bilinear(&self, q: &[f64], z: &[f64]) -> f64 {
        crate::linalg::dot(z, &self.form.mul_vec(q))
    }

    /// The part of `a(q, z)` without the cross term.
    pub fn symmetric_part(&self, q: &[f64], z: &[f64]) -> f64 {
        let u = self.params.u;
        let l2 = self.params.mu + self.lambda * self.lambda;
        (1.0 - u * u) * crate::linalg::dot(z, &self.kx.mul_vec(q))
            + crate::linalg::dot(z, &self.kz.mul_vec(q))
            + l2 * wdot(&self.weight, q, z)
    }

    /// `lambda U [(q_x, z) + (q, z_x)]`, which vanishes for `q = z`.
    pub fn cross_term(&self, q: &[f64], z: &[f64]) -> f64 {
        let lu = self.lambda * self.params.u;
        lu * (wdot(&self.weight, &self.dx.mul_vec(q), z) + wdot(&self.weight, q, &self.dx.mul_vec(z)))
    }

    /// `||q_x||^2 + ||q_z||^2 + ||q||^2`.
    pub fn h1_norm2(&self, q: &[f64]) -> f64 {
        crate::linalg::dot(q, &self.kx.mul_vec(q))
            + crate::linalg::dot(q, &self.kz.mul_vec(q))
            + wdot(&self.weight, q, q)
    }

    /// Load vector of the weak problem, boundary term included.
    pub fn load_vector(&self, load: &ZarembaLoad, g2: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let mut b = match load {
            ZarembaLoad::Strong(f) => {
                check_len("Zaremba load", n, f.len())?;
                f.iter().zip(&self.weight).map(|(f, w)| f * w).collect::<Vec<_>>()
            }
            ZarembaLoad::Resolvent { f1, f2 } => {
                check_len("resolvent datum f1", n, f1.len())?;
                check_len("resolvent datum f2", n, f2.len())?;
                let (l, u) = (self.lambda, self.params.u);
                let df1 = self.dx.mul_vec(f1);
                let flux: Vec<f64> = (0..n).map(|k| 2.0 * l * u * f1[k] + u * u * df1[k] + u * f2[k]).collect();
                let dflux = self.dx.mul_vec(&flux);
                (0..n).map(|k| -self.weight[k] * (l * l * f1[k] + l * f2[k] + dflux[k])).collect()
            }
        };
        check_len("Neumann data", self.neumann_weight.len(), g2.len())?;
        let i0 = self.grid.beam_index_range.0;
        for (k, g) in g2.iter().enumerate() {
            b[i0 + k] -= self.neumann_weight[k] * g;
        }
        Ok(b)
    }

    fn solve_pinned(&self, mut rhs: Vec<f64>, dirichlet: &[f64]) -> Vec<f64> {
        for (i, d) in self.dirichlet.iter().enumerate() {
            if *d {
                rhs[i] = dirichlet[i];
            }
        }
        self.lu.solve_in_place(&mut rhs);
        rhs
    }

    pub fn solve(&self, problem: &ZarembaProblem<'_>) -> Result<ZarembaSolution> {
        let nx = self.grid.nx;
        check_len("Dirichlet data", nx, problem.g1.len())?;
        let b = self.load_vector(&problem.load, &problem.g2)?;
        let n = self.n();
        // Lift: zero load, boundary data only.
        let lift = self.solve_pinned(vec![0.0; n], &problem.g1);
        let alift = self.form.mul_vec(&lift);
        let rhs0: Vec<f64> = (0..n).map(|k| b[k] - alift[k]).collect();
        let q0 = self.solve_pinned(rhs0, &vec![0.0; nx]);
        let phi_hat: Vec<f64> = lift.iter().zip(&q0).map(|(a, b)| a + b).collect();

        let aq = self.form.mul_vec(&phi_hat);
        let mut res = 0.0f64;
        let mut scale = 0.0f64;
        for k in 0..n {
            if k < nx && self.dirichlet[k] {
                res = res.max(libm::fabs(phi_hat[k] - problem.g1[k]));
                scale = scale.max(libm::fabs(problem.g1[k]));
            } else {
                res = res.max(libm::fabs(aq[k] - b[k]));
                scale = scale.max(libm::fabs(b[k]));
            }
        }
        let h1 = self.h1_norm2(&q0);
        let u = self.params.u;
        Ok(ZarembaSolution {
            residual: if scale > 0.0 { res / scale } else { res },
            coercivity: if h1 > 0.0 { self.bilinear(&q0, &q0) / h1 } else { f64::NAN },
            coercivity_bound: (1.0 - u * u).min(1.0).min(self.params.mu + self.lambda * self.lambda),
            phi_hat,
        })
    }
}

pub fn zaremba_solve(problem: &ZarembaProblem<'_>) -> Result<ZarembaSolution> {
    ZarembaSolver::new(problem.grid, problem.params, problem.junction, problem.lambda)?.solve(problem)
}

/// `int_0^1 s^k exp(-c s) ds` for `k = 0..=3`.
fn exp_moments(c: f64) -> [f64; 4] {
    let mut m = [0.0; 4];
    if c < 1.0 {
        for (k, mk) in m.iter_mut().enumerate() {
            let mut term = 1.0;
            let mut sum = 0.0;
            for n in 0..40 {
                if n > 0 {
                    term *= -c / n as f64;
                }
                sum += term / (n + k + 1) as f64;
            }
            *mk = sum;
        }
    } else {
        let e = libm::exp(-c);
        m[0] = (1.0 - e) / c;
        for k in 1..4 {
            m[k] = (k as f64 * m[k - 1] - e) / c;
        }
    }
    m
}

/// Solves `lambda phi + U phi' = phi_hat` on a line of spacing `h`, taking
/// `phi = 0` at the inflow end.
///
/// Each cell integrates the exact propagator against a cubic interpolant of
/// `phi_hat`, so the error is fourth order in `h`. `U = 0` is the algebraic
/// case `phi = phi_hat / lambda`.
pub fn antiderivative_line(phi_hat: &[f64], h: f64, lambda: f64, u: f64) -> Vec<f64> {
    let n = phi_hat.len();
    if u == 0.0 {
        return phi_hat.iter().map(|p| p / lambda).collect();
    }
    if u < 0.0 {
        let rev: Vec<f64> = phi_hat.iter().rev().copied().collect();
        let mut out = antiderivative_line(&rev, h, lambda, -u);
        out.reverse();
        return out;
    }
    let mut phi = vec![0.0; n];
    if n < 4 {
        return phi;
    }
    let c = lambda * h / u;
    let m = exp_moments(c);
    let decay = libm::exp(-c);
    // Weights for a cubic through the nodes at offsets `s = o` (in cells
    // back from the right end of the cell), integrated against exp(-c s).
    let weights = |offsets: [f64; 4]| -> [f64; 4] {
        let mut w = [0.0; 4];
        for a in 0..4 {
            // Coefficients of the Lagrange basis polynomial in s.
            let mut coef = [1.0, 0.0, 0.0, 0.0];
            let mut denom = 1.0;
            for b in 0..4 {
                if a == b {
                    continue;
                }
                let mut next = [0.0; 4];
                for k in 0..3 {
                    next[k + 1] += coef[k];
                    next[k] -= offsets[b] * coef[k];
                }
                coef = next;
                denom *= offsets[a] - offsets[b];
            }
            w[a] = (0..4).map(|k| coef[k] * m[k]).sum::<f64>() / denom * h / u;
        }
        w
    };
    // Stencil i-1..=i+2 for cell (i, i+1); offsets measured from x_{i+1}.
    let interior = weights([2.0, 1.0, 0.0, -1.0]);
    let first = weights([1.0, 0.0, -1.0, -2.0]);
    let last = weights([3.0, 2.0, 1.0, 0.0]);
    for i in 0..n - 1 {
        let (start, w) = if i == 0 {
            (0, &first)
        } else if i + 2 >= n {
            (n - 4, &last)
        } else {
            (i - 1, &interior)
        };
        let inc: f64 = (0..4).map(|a| w[a] * phi_hat[start + a]).sum();
        phi[i + 1] = decay * phi[i] + inc;
    }
    phi
}

#[derive(Debug, Clone, PartialEq)]
pub struct Antiderivative {
    pub phi: Vec<f64>,
    /// `max |phi|` on the first and last columns of the box.
    pub tail: f64,
    /// `max |phi_hat|` on the first and last columns.
    pub margin: f64,
    /// Set when `phi_hat` does not decay at the margin.
    pub warning: bool,
}

/// Line-by-line reconstruction of `phi` from `phi_hat` on a flow grid.
///
/// The grid is periodic in x, but the lines are integrated from the inflow
/// column as on the real line; this assumes `phi_hat` has decayed there,
/// which is checked and flagged.
pub fn reconstruct_antiderivative(
    phi_hat: &[f64],
    lambda: f64,
    params: FlowParams,
    grid: &FlowGrid,
) -> Result<Antiderivative> {
    params.validate()?;
    check_len("phi_hat", grid.n(), phi_hat.len())?;
    if !(lambda > 0.0) {
        return Err(Error::config("resolvent shift must be positive"));
    }
    let nx = grid.nx;
    let mut phi = vec![0.0; grid.n()];
    let mut tail = 0.0f64;
    let mut margin = 0.0f64;
    for j in 0..grid.nz {
        let row = &phi_hat[j * nx..(j + 1) * nx];
        let line = antiderivative_line(row, grid.hx, lambda, params.u);
        tail = tail.max(libm::fabs(line[0])).max(libm::fabs(line[nx - 1]));
        margin = margin.max(libm::fabs(row[0])).max(libm::fabs(row[nx - 1]));
        phi[j * nx..(j + 1) * nx].copy_from_slice(&line);
    }
    let peak = norm_inf(phi_hat);
    Ok(Antiderivative { phi, tail, margin, warning: margin > 1e-8 * peak.max(1.0) })
}

/// Settings of the beam and flow sub-iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MixedIteration {
    pub relaxation: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for MixedIteration {
    fn default() -> Self {
        MixedIteration { relaxation: 0.5, tol: 1e-11, max_iter: 400 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedResolvent {
    pub state: CoupledState,
    pub iterations: usize,
    /// Observed ratio of successive velocity increments.
    pub contraction: f64,
    /// Largest Zaremba algebraic residual over the iterations.
    pub elliptic_residual: f64,
    /// `lambda phi + U Dx phi - phi_hat` measured in sup norm.
    pub ode_residual: f64,
    pub tail: f64,
    pub residuals: ResolventResiduals,
}

/// Resolvent by the mixed route: Zaremba solve for `phi_hat`, `psi = f1 +
/// phi_hat`, antiderivative for `phi`, shifted biharmonic for `w`, and
/// `v = g1 + lambda w`, iterating `v -> psi -> v` with under-relaxation.
pub fn resolvent_solve(
    model: &CoupledModel,
    lambda: f64,
    data: &ResolventData,
    it: MixedIteration,
) -> Result<MixedResolvent> {
    data.check(model)?;
    if model.flow.sponge.iter().any(|s| *s != 0.0) {
        return Err(Error::config("the mixed resolvent route needs the sponge switched off"));
    }
    if !(it.relaxation > 0.0 && it.relaxation <= 1.0) {
        return Err(Error::config("relaxation must lie in (0, 1]"));
    }
    let flow = &model.flow;
    let grid = &flow.grid;
    let params = flow.params;
    let solver = ZarembaSolver::new(grid, params, flow.junction, lambda)?;
    let (nx, nb) = (grid.nx, model.beam.n());
    let h = grid.hx;
    let bp = model.beam.params;
    let a4g1 = model.beam.a4(&data.g1);
    let g1_flow: Vec<f64> = data.f1[..nx].iter().map(|f| -f).collect();

    let mut v = vec![0.0; nb];
    let mut prev_inc = f64::NAN;
    let mut q = 0.0f64;
    let mut elliptic_residual = 0.0f64;
    for iter in 1..=it.max_iter {
        let w: Vec<f64> = (0..nb).map(|k| (v[k] - data.g1[k]) / lambda).collect();
        let g = model.neumann_data(&BeamState { w, v: v.clone() });
        let g2: Vec<f64> = (0..nb)
            .map(|k| {
                let gx = if k == 0 {
                    (-3.0 * g[0] + 4.0 * g[1] - g[2]) / (2.0 * h)
                } else if k + 1 == nb {
                    (3.0 * g[k] - 4.0 * g[k - 1] + g[k - 2]) / (2.0 * h)
                } else {
                    (g[k + 1] - g[k - 1]) / (2.0 * h)
                };
                lambda * g[k] + params.u * gx
            })
            .collect();
        let problem = ZarembaProblem {
            grid,
            params,
            junction: flow.junction,
            lambda,
            load: ZarembaLoad::Resolvent { f1: data.f1.clone(), f2: data.f2.clone() },
            g1: g1_flow.clone(),
            g2,
        };
        let sol = solver.solve(&problem)?;
        elliptic_residual = elliptic_residual.max(sol.residual);
        let mut psi: Vec<f64> = data.f1.iter().zip(&sol.phi_hat).map(|(f, p)| f + p).collect();
        for (k, c) in flow.constrained.iter().enumerate() {
            if *c {
                psi[k] = 0.0;
            }
        }
        let load = flow.beam_load(&psi);
        let rhs: Vec<f64> = (0..nb).map(|k| load[k] - data.g2[k] - lambda * data.g1[k] - bp.delta * a4g1[k]).collect();
        let w_new = model.beam.solve_shifted(bp.d + bp.delta * lambda, lambda * lambda, &rhs)?;
        let mut v_new: Vec<f64> = (0..nb).map(|k| data.g1[k] + lambda * w_new[k]).collect();
        v_new[0] = 0.0;
        let inc = (0..nb).map(|k| libm::fabs(v_new[k] - v[k])).fold(0.0, f64::max);
        if iter > 2 && prev_inc > 0.0 {
            q = inc / prev_inc;
        }
        let vscale = norm_inf(&v_new).max(norm_inf(&data.g1)).max(f64::MIN_POSITIVE);
        let converged = inc <= it.tol * vscale;
        for k in 0..nb {
            v[k] = if converged { v_new[k] } else { (1.0 - it.relaxation) * v[k] + it.relaxation * v_new[k] };
        }
        if converged {
            let anti = reconstruct_antiderivative(&sol.phi_hat, lambda, params, grid)?;
            let dphi = flow.ddx(&anti.phi);
            let ode_residual = (0..flow.n())
                .map(|k| libm::fabs(lambda * anti.phi[k] + params.u * dphi[k] - sol.phi_hat[k]))
                .fold(0.0, f64::max);
            let mut beam = BeamState { w: w_new, v };
            beam.w[0] = 0.0;
            let state = CoupledState { flow: FlowField { phi: anti.phi, psi }, beam, t: 0.0 };
            let residuals = resolvent_residuals(model, lambda, &state, data);
            return Ok(MixedResolvent {
                state,
                iterations: iter,
                contraction: q,
                elliptic_residual,
                ode_residual,
                tail: anti.tail,
                residuals,
            });
        }
        if !inc.is_finite() || (iter > 20 && q >= 1.0) {
            return Err(Error::FixedPoint { iterations: iter, q });
        }
        prev_inc = inc;
    }
    Err(Error::FixedPoint { iterations: it.max_iter, q })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSolve {
    pub state: CoupledState,
    pub residuals: ResolventResiduals,
}

/// Resolvent by direct elimination on the discrete generator; the residual
/// certificate is exact up to rounding.
pub fn resolvent_solve_generator(model: &CoupledModel, lambda: f64, data: &ResolventData) -> Result<GeneratorSolve> {
    let res = GeneratorResolvent::new(model, lambda)?;
    let state = res.solve(data)?;
    let residuals = resolvent_residuals(model, lambda, &state, data);
    Ok(GeneratorSolve { state, residuals })
}
