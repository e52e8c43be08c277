//! Convected wave equation `(d_t + U d_x)^2 phi = Lap phi - mu phi` on a
//! truncated half plane, written for `(phi, psi)` with `psi = phi_t + U phi_x`.
//!
//! Nodes are `(x_i, z_j)`, flattened as `j * nx + i`. The box is periodic in
//! x (absorbing layers separate the two ends), which makes all tangential
//! integrations by parts exact. In z a trapezoid-weighted staggered
//! difference gives `Lap = -H^-1 (Gx^T W Gx + Gz^T W Gz)` with a natural
//! condition at the top. On `z = 0` the beam segment carries Neumann data
//! through a weak boundary term whose weights equal the beam quadrature,
//! and the nodes off the beam have `psi = 0` imposed strongly.

use alloc::vec;
use alloc::vec::Vec;

use crate::beam::BeamGrid;
use crate::error::{check_len, Error, Result};
use crate::linalg::{all_finite, wdot, BandedLu, Csr};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowParams {
    pub u: f64,
    pub mu: f64,
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.u.abs() < 1.0) {
            return Err(Error::Supersonic(self.u.abs()));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::config("mu must be nonnegative"));
        }
        Ok(())
    }
}

/// Which side the two Zaremba junction nodes `x = 0`, `x = L` belong to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum Junction {
    /// Neumann (beam) nodes.
    #[default]
    BeamSide,
    /// Constrained (`psi = 0`) nodes.
    WakeSide,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum FlowScheme {
    ImplicitMidpoint,
    Rk4,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub z_max: f64,
    pub nx: usize,
    pub nz: usize,
    pub hx: f64,
    pub hz: f64,
    pub sponge_width: f64,
    /// First and last flow column of the beam segment (inclusive).
    pub beam_index_range: (usize, usize),
    pub beam_length: f64,
}

impl FlowGrid {
    /// Grid with `nx` periodic columns of spacing `beam.h`, the clamp at
    /// column `upstream`, and `nz` rows spanning `[0, z_max]`.
    pub fn new(beam: &BeamGrid, nx: usize, nz: usize, upstream: usize, z_max: f64, sponge_width: f64) -> Result<Self> {
        let hx = beam.h;
        let n_beam = beam.n_points;
        if nz < 4 {
            return Err(Error::config("flow grid needs at least 4 rows"));
        }
        if upstream + n_beam > nx {
            return Err(Error::config("flow grid too narrow for the beam"));
        }
        if !(z_max > 0.0) {
            return Err(Error::config("z_max must be positive"));
        }
        if !(sponge_width >= 0.0) {
            return Err(Error::config("sponge width must be nonnegative"));
        }
        let x_min = -(upstream as f64) * hx;
        let x_max = x_min + nx as f64 * hx;
        let g = FlowGrid {
            x_min,
            x_max,
            z_max,
            nx,
            nz,
            hx,
            hz: z_max / (nz - 1) as f64,
            sponge_width,
            beam_index_range: (upstream, upstream + n_beam - 1),
            beam_length: beam.length,
        };
        if sponge_width > 0.0 {
            let (ia, ib, jb) = g.window_indices();
            let (i0, i1) = g.beam_index_range;
            if !(ia < i0 && i1 < ib && jb > 0) {
                return Err(Error::config("sponge layers must lie outside a window containing the beam"));
            }
        }
        Ok(g)
    }

    /// Grid from extents; `x_min`/`x_max` are snapped outward to the beam
    /// spacing.
    pub fn from_extents(
        beam: &BeamGrid,
        x_min: f64,
        x_max: f64,
        z_max: f64,
        nz: usize,
        sponge_width: f64,
    ) -> Result<Self> {
        if !(x_min < 0.0 && x_max > beam.length) {
            return Err(Error::config("flow box must contain the beam: x_min < 0 < L < x_max"));
        }
        let upstream = libm::ceil(-x_min / beam.h - 1e-9) as usize;
        let downstream = libm::ceil(x_max / beam.h - 1e-9) as usize;
        Self::new(beam, upstream + downstream, nz, upstream, z_max, sponge_width)
    }

    pub fn n(&self) -> usize {
        self.nx * self.nz
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        self.x_min + i as f64 * self.hx
    }

    pub fn z(&self, j: usize) -> f64 {
        j as f64 * self.hz
    }

    /// Trapezoid factor of row `j`.
    pub fn row_factor(&self, j: usize) -> f64 {
        if j == 0 || j + 1 == self.nz {
            0.5
        } else {
            1.0
        }
    }

    /// Window columns `ia..=ib` and rows `0..=jb`; meaningful only with a
    /// sponge.
    fn window_indices(&self) -> (usize, usize, usize) {
        let s = self.sponge_width;
        let cells = libm::ceil(s / self.hx - 1e-9) as usize;
        let jb = libm::floor((self.z_max - s) / self.hz + 1e-9).max(0.0) as usize;
        (cells, self.nx.saturating_sub(cells), jb.min(self.nz - 1))
    }

    pub fn sample(&self, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n());
        for j in 0..self.nz {
            for i in 0..self.nx {
                out.push(f(self.x(i), self.z(j)));
            }
        }
        out
    }

    pub fn conforms_to(&self, beam: &BeamGrid) -> bool {
        let (i0, i1) = self.beam_index_range;
        i1 - i0 + 1 == beam.n_points && (self.hx - beam.h).abs() <= 1e-12 * beam.h
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowField {
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
}

impl FlowField {
    pub fn zeros(n: usize) -> Self {
        FlowField { phi: vec![0.0; n], psi: vec![0.0; n] }
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.phi) && all_finite(&self.psi)
    }
}

/// Sponge (Rayleigh damping on `psi`) strength; the width is a grid
/// property.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Sponge {
    pub strength: f64,
}

impl Default for Sponge {
    fn default() -> Self {
        Sponge { strength: 4.0 }
    }
}

/// Flow energy split into the physical window and the absorbing layers.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FlowEnergy {
    pub window: f64,
    pub sponge: f64,
}

impl FlowEnergy {
    pub fn total(&self) -> f64 {
        self.window + self.sponge
    }
}

#[derive(Debug, Clone)]
pub struct FlowOperator {
    pub grid: FlowGrid,
    pub params: FlowParams,
    pub junction: Junction,
    /// Node weights of the discrete L2 product.
    pub weight: Vec<f64>,
    /// Rayleigh damping coefficient per node (zero inside the window).
    pub sponge: Vec<f64>,
    pub sponge_strength: f64,
    /// `psi = 0` is imposed at these nodes.
    pub constrained: Vec<bool>,
    /// Neumann weight per beam node (the beam trapezoid weight, or zero at a
    /// constrained junction).
    pub neumann_weight: Vec<f64>,
    /// Window share of each node weight.
    window_node: Vec<f64>,
    /// Window share of the x-cell `(i, i+1)` gradient weights, per node.
    window_xcell: Vec<f64>,
    /// Window share of the z-cell `(j, j+1)` gradient weights, per node.
    window_zcell: Vec<f64>,
    /// Central periodic `d/dx`.
    pub dx: Csr,
    /// Discrete `Lap - mu` with the natural condition everywhere on the
    /// boundary (boundary data enters separately).
    pub lap: Csr,
}

pub fn assemble_flow_operator(
    grid: FlowGrid,
    params: FlowParams,
    sponge: Sponge,
    junction: Junction,
) -> Result<FlowOperator> {
    FlowOperator::new(grid, params, sponge, junction)
}

impl FlowOperator {
    pub fn new(grid: FlowGrid, params: FlowParams, sponge: Sponge, junction: Junction) -> Result<Self> {
        params.validate()?;
        if !(sponge.strength >= 0.0) {
            return Err(Error::config("sponge strength must be nonnegative"));
        }
        let (nx, nz) = (grid.nx, grid.nz);
        let n = grid.n();
        let (hx, hz) = (grid.hx, grid.hz);
        let weight: Vec<f64> = (0..n).map(|k| hx * hz * grid.row_factor(k / nx)).collect();

        let mut dx_t = Vec::with_capacity(2 * n);
        let mut k_t = Vec::with_capacity(5 * n);
        for j in 0..nz {
            let tz = grid.row_factor(j);
            for i in 0..nx {
                let a = grid.idx(i, j);
                let b = grid.idx((i + 1) % nx, j);
                let c = grid.idx((i + nx - 1) % nx, j);
                dx_t.push((a, b, 0.5 / hx));
                dx_t.push((a, c, -0.5 / hx));
                let wxc = hz * tz / hx;
                k_t.extend([(a, a, wxc), (b, b, wxc), (a, b, -wxc), (b, a, -wxc)]);
                if j + 1 < nz {
                    let u = grid.idx(i, j + 1);
                    let wzc = hx / hz;
                    k_t.extend([(a, a, wzc), (u, u, wzc), (a, u, -wzc), (u, a, -wzc)]);
                }
            }
        }
        let dx = Csr::from_triplets(n, n, dx_t);
        let stiff = Csr::from_triplets(n, n, k_t);
        let inv_w: Vec<f64> = weight.iter().map(|w| -1.0 / w).collect();
        let lap = stiff.scale_rows(&inv_w).lin_comb(1.0, &Csr::identity(n), -params.mu);

        let (i0, i1) = grid.beam_index_range;
        let on_beam = |i: usize| match junction {
            Junction::BeamSide => i0 <= i && i <= i1,
            Junction::WakeSide => i0 < i && i < i1,
        };
        let mut constrained = vec![false; n];
        for (i, c) in constrained.iter_mut().enumerate().take(nx) {
            *c = !on_beam(i);
        }
        let n_beam = i1 - i0 + 1;
        let neumann_weight: Vec<f64> = (0..n_beam)
            .map(|k| {
                if !on_beam(i0 + k) {
                    0.0
                } else if k == 0 || k + 1 == n_beam {
                    0.5 * hx
                } else {
                    hx
                }
            })
            .collect();

        let mut sponge_v = vec![0.0; n];
        let mut window_node = vec![1.0; n];
        let mut window_xcell = vec![1.0; n];
        let mut window_zcell = vec![1.0; n];
        if grid.sponge_width > 0.0 {
            let s = grid.sponge_width;
            let (ia, ib, jb) = grid.window_indices();
            let (xl, xr, zt) = (grid.x(ia), grid.x(ib), grid.z(jb));
            for j in 0..nz {
                let fz = if j < jb || jb + 1 == nz {
                    1.0
                } else if j == jb {
                    0.5
                } else {
                    0.0
                };
                for i in 0..nx {
                    let k = grid.idx(i, j);
                    let fx = if ia < i && i < ib {
                        1.0
                    } else if i == ia || i == ib {
                        0.5
                    } else {
                        0.0
                    };
                    window_node[k] = fx * fz;
                    window_xcell[k] = if ia <= i && i < ib { fz } else { 0.0 };
                    window_zcell[k] = if j < jb { fx } else { 0.0 };
                    let (x, z) = (grid.x(i), grid.z(j));
                    let dxs = if x < xl {
                        (xl - x) / s
                    } else if x > xr {
                        (x - xr) / s
                    } else {
                        0.0
                    };
                    let dzs = if z > zt { (z - zt) / s } else { 0.0 };
                    let r = dxs.max(dzs).min(1.0);
                    sponge_v[k] = sponge.strength * r * r;
                }
            }
        }
        Ok(FlowOperator {
            grid,
            params,
            junction,
            weight,
            sponge: sponge_v,
            sponge_strength: sponge.strength,
            constrained,
            neumann_weight,
            window_node,
            window_xcell,
            window_zcell,
            dx,
            lap,
        })
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// Same grid, sponge and junction convention with new flow parameters.
    pub fn with_params(&self, params: FlowParams) -> Result<Self> {
        Self::new(self.grid.clone(), params, Sponge { strength: self.sponge_strength }, self.junction)
    }

    pub fn n_beam(&self) -> usize {
        self.neumann_weight.len()
    }

    /// Flow index of beam node `k`.
    pub fn beam_node(&self, k: usize) -> usize {
        self.grid.idx(self.grid.beam_index_range.0 + k, 0)
    }

    /// Trace of a field on the beam segment.
    pub fn trace(&self, f: &[f64]) -> Vec<f64> {
        (0..self.n_beam()).map(|k| f[self.beam_node(k)]).collect()
    }

    /// Trace on the beam segment as seen by the beam: zero at constrained
    /// junctions.
    pub fn beam_load(&self, psi: &[f64]) -> Vec<f64> {
        let mut t = self.trace(psi);
        for (k, tk) in t.iter_mut().enumerate() {
            if self.constrained[self.beam_node(k)] {
                *tk = 0.0;
            }
        }
        t
    }

    /// The weak Neumann term `H^-1 B g` as a nodal field.
    pub fn neumann_term(&self, g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n()];
        for (k, gk) in g.iter().enumerate() {
            let node = self.beam_node(k);
            out[node] = self.neumann_weight[k] * gk / self.weight[node];
        }
        out
    }

    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        wdot(&self.weight, a, b)
    }

    /// `<G a, G b>` over the staggered cells.
    pub fn grad_dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let (x, z) = self.grad_parts(a, b, None);
        x + z
    }

    /// x- and z-parts of `<G a, G b>`, optionally weighted by a cell share.
    fn grad_parts(&self, a: &[f64], b: &[f64], share: Option<(&[f64], &[f64])>) -> (f64, f64) {
        let g = &self.grid;
        let (mut sx, mut sz) = (0.0, 0.0);
        for j in 0..g.nz {
            let tz = g.row_factor(j);
            for i in 0..g.nx {
                let k = g.idx(i, j);
                let kr = g.idx((i + 1) % g.nx, j);
                let fxs = share.map_or(1.0, |s| s.0[k]);
                sx += fxs * tz * g.hz / g.hx * (a[kr] - a[k]) * (b[kr] - b[k]);
                if j + 1 < g.nz {
                    let ku = g.idx(i, j + 1);
                    let fzs = share.map_or(1.0, |s| s.1[k]);
                    sz += fzs * g.hx / g.hz * (a[ku] - a[k]) * (b[ku] - b[k]);
                }
            }
        }
        (sx, sz)
    }

    /// `(Dx a)` at every node.
    pub fn ddx(&self, a: &[f64]) -> Vec<f64> {
        self.dx.mul_vec(a)
    }

    /// Semi-discrete right-hand side `(phi_t, psi_t)` for Neumann data `g`.
    pub fn rhs(&self, f: &FlowField, g: &[f64]) -> FlowField {
        let u = self.params.u;
        let dphi_x = self.ddx(&f.phi);
        let dpsi_x = self.ddx(&f.psi);
        let lp = self.lap.mul_vec(&f.phi);
        let sat = self.neumann_term(g);
        let n = self.n();
        let mut out = FlowField::zeros(n);
        for k in 0..n {
            out.phi[k] = f.psi[k] - u * dphi_x[k];
            out.psi[k] =
                if self.constrained[k] { 0.0 } else { lp[k] - sat[k] - u * dpsi_x[k] - self.sponge[k] * f.psi[k] };
        }
        out
    }

    /// `E_f = (||psi||^2 + ||G phi||^2 + mu ||phi||^2) / 2`, split by region.
    pub fn energy(&self, f: &FlowField) -> FlowEnergy {
        let mu = self.params.mu;
        let mut node_w = 0.0;
        let mut node_all = 0.0;
        for k in 0..self.n() {
            let e = self.weight[k] * (f.psi[k] * f.psi[k] + mu * f.phi[k] * f.phi[k]);
            node_all += e;
            node_w += self.window_node[k] * e;
        }
        let (gx, gz) = self.grad_parts(&f.phi, &f.phi, None);
        let (wx, wz) = self.grad_parts(&f.phi, &f.phi, Some((&self.window_xcell, &self.window_zcell)));
        let window = 0.5 * (node_w + wx + wz);
        let total = 0.5 * (node_all + gx + gz);
        FlowEnergy { window, sponge: total - window }
    }

    /// Area of the physical window under the node weights.
    pub fn window_area(&self) -> f64 {
        wdot(&self.window_node, &self.weight, &vec![1.0; self.n()])
    }

    /// Rate of energy removal by the sponge, `(sponge psi, psi)_H`.
    pub fn sponge_dissipation(&self, psi: &[f64]) -> f64 {
        (0..self.n()).map(|k| self.weight[k] * self.sponge[k] * psi[k] * psi[k]).sum()
    }

    /// Largest stable step for the explicit scheme.
    pub fn rk4_dt_limit(&self) -> f64 {
        let g = &self.grid;
        let wave = 2.0 * libm::sqrt(1.0 / (g.hx * g.hx) + 1.0 / (g.hz * g.hz) + 0.25 * self.params.mu);
        let smax = self.sponge.iter().fold(0.0f64, |a, b| a.max(*b));
        2.5 / (self.params.u.abs() / g.hx + wave + smax)
    }

    /// Assembles the reduced `phi` system of `(A_f - lambda) y = f`.
    ///
    /// Eliminating `psi = P (f1 + E phi)`, `E = lambda + U Dx`, leaves
    /// `[(lambda + s + U Dx) P E - Lap_mu] phi = rhs` on free rows and
    /// `E phi = -f1` on constrained rows.
    fn reduced_matrix(&self, lambda: f64) -> Csr {
        let n = self.n();
        let u = self.params.u;
        let id = Csr::identity(n);
        let e = id.lin_comb(lambda, &self.dx, u);
        let mask: Vec<f64> = self.constrained.iter().map(|&c| if c { 0.0 } else { 1.0 }).collect();
        let pe = e.scale_rows(&mask);
        let shift: Vec<f64> = self.sponge.iter().map(|s| lambda + s).collect();
        let s = Csr::diag(&shift).lin_comb(1.0, &self.dx, u);
        let free = s.matmul(&pe).lin_comb(1.0, &self.lap, -1.0);
        free.splice_rows(&self.constrained, &e)
    }

    pub fn resolvent(&self, lambda: f64) -> Result<FlowResolvent<'_>> {
        if !(lambda > 0.0) {
            return Err(Error::config("resolvent shift must be positive"));
        }
        let lu = self.reduced_matrix(lambda).to_banded().factor()?;
        Ok(FlowResolvent { op: self, lambda, lu })
    }
}

/// Factored solver for `(A_f - lambda)(phi, psi) = (f1, f2)` with Neumann
/// data `g` on the beam segment.
#[derive(Debug, Clone)]
pub struct FlowResolvent<'a> {
    pub op: &'a FlowOperator,
    pub lambda: f64,
    lu: BandedLu,
}

impl FlowResolvent<'_> {
    /// Right-hand side of the reduced system.
    fn reduced_rhs(&self, f1: &[f64], f2: &[f64], g: Option<&[f64]>) -> Vec<f64> {
        let op = self.op;
        let n = op.n();
        let u = op.params.u;
        let pf1: Vec<f64> = (0..n).map(|k| if op.constrained[k] { 0.0 } else { f1[k] }).collect();
        let dpf1 = op.ddx(&pf1);
        let sat = g.map(|g| op.neumann_term(g));
        (0..n)
            .map(|k| {
                if op.constrained[k] {
                    -f1[k]
                } else {
                    let s = sat.as_ref().map_or(0.0, |s| s[k]);
                    -f2[k] - s - (self.lambda + op.sponge[k]) * pf1[k] - u * dpf1[k]
                }
            })
            .collect()
    }

    /// `psi = P (f1 + (lambda + U Dx) phi)`.
    pub fn psi_of(&self, f1: &[f64], phi: &[f64]) -> Vec<f64> {
        let op = self.op;
        let d = op.ddx(phi);
        (0..op.n())
            .map(|k| if op.constrained[k] { 0.0 } else { f1[k] + self.lambda * phi[k] + op.params.u * d[k] })
            .collect()
    }

    pub fn solve(&self, f1: &[f64], f2: &[f64], g: &[f64]) -> Result<FlowField> {
        let n = self.op.n();
        check_len("flow datum f1", n, f1.len())?;
        check_len("flow datum f2", n, f2.len())?;
        check_len("Neumann data", self.op.n_beam(), g.len())?;
        let mut phi = self.reduced_rhs(f1, f2, Some(g));
        self.lu.solve_in_place(&mut phi);
        let psi = self.psi_of(f1, &phi);
        Ok(FlowField { phi, psi })
    }

    /// Response `phi` to unit Neumann data at beam node `k` (zero interior
    /// data).
    pub fn neumann_response(&self, k: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.op.n_beam()];
        g[k] = 1.0;
        let sat = self.op.neumann_term(&g);
        let mut phi: Vec<f64> = (0..self.op.n()).map(|i| -sat[i]).collect();
        self.lu.solve_in_place(&mut phi);
        phi
    }

    pub fn solve_free(&self, f1: &[f64], f2: &[f64]) -> Vec<f64> {
        let mut phi = self.reduced_rhs(f1, f2, None);
        self.lu.solve_in_place(&mut phi);
        phi
    }
}

/// Neumann data at the two ends of a step.
#[derive(Debug, Clone, Copy)]
pub struct NeumannSlab<'a> {
    pub start: &'a [f64],
    pub end: &'a [f64],
}

/// Flow-only time stepper.
#[derive(Debug, Clone)]
pub struct FlowStepper<'a> {
    pub op: &'a FlowOperator,
    pub dt: f64,
    pub scheme: FlowScheme,
    resolvent: Option<FlowResolvent<'a>>,
}

impl<'a> FlowStepper<'a> {
    pub fn new(op: &'a FlowOperator, dt: f64, scheme: FlowScheme) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::config("time step must be positive"));
        }
        let resolvent = match scheme {
            FlowScheme::ImplicitMidpoint => Some(op.resolvent(2.0 / dt)?),
            FlowScheme::Rk4 => {
                let limit = op.rk4_dt_limit();
                if dt > limit {
                    return Err(Error::Cfl { dt, limit });
                }
                None
            }
        };
        Ok(FlowStepper { op, dt, scheme, resolvent })
    }

    pub fn step(&self, f: &FlowField, g: NeumannSlab<'_>, t: f64) -> Result<FlowField> {
        let op = self.op;
        let n = op.n();
        check_len("flow field", n, f.phi.len())?;
        check_len("flow field", n, f.psi.len())?;
        check_len("Neumann data", op.n_beam(), g.start.len())?;
        check_len("Neumann data", op.n_beam(), g.end.len())?;
        let mut next = match &self.resolvent {
            Some(r) => {
                let gm: Vec<f64> = g.start.iter().zip(g.end).map(|(a, b)| 0.5 * (a + b)).collect();
                let f1: Vec<f64> = f.phi.iter().map(|p| -r.lambda * p).collect();
                let f2: Vec<f64> = f.psi.iter().map(|p| -r.lambda * p).collect();
                let mid = r.solve(&f1, &f2, &gm)?;
                FlowField {
                    phi: (0..n).map(|k| 2.0 * mid.phi[k] - f.phi[k]).collect(),
                    psi: (0..n).map(|k| 2.0 * mid.psi[k] - f.psi[k]).collect(),
                }
            }
            None => {
                let gm: Vec<f64> = g.start.iter().zip(g.end).map(|(a, b)| 0.5 * (a + b)).collect();
                let dt = self.dt;
                let add = |a: &FlowField, b: &FlowField, s: f64| FlowField {
                    phi: a.phi.iter().zip(&b.phi).map(|(x, y)| x + s * y).collect(),
                    psi: a.psi.iter().zip(&b.psi).map(|(x, y)| x + s * y).collect(),
                };
                let k1 = op.rhs(f, g.start);
                let k2 = op.rhs(&add(f, &k1, 0.5 * dt), &gm);
                let k3 = op.rhs(&add(f, &k2, 0.5 * dt), &gm);
                let k4 = op.rhs(&add(f, &k3, dt), g.end);
                FlowField {
                    phi: (0..n)
                        .map(|k| f.phi[k] + dt / 6.0 * (k1.phi[k] + 2.0 * k2.phi[k] + 2.0 * k3.phi[k] + k4.phi[k]))
                        .collect(),
                    psi: (0..n)
                        .map(|k| f.psi[k] + dt / 6.0 * (k1.psi[k] + 2.0 * k2.psi[k] + 2.0 * k3.psi[k] + k4.psi[k]))
                        .collect(),
                }
            }
        };
        for k in 0..n {
            if op.constrained[k] {
                next.psi[k] = 0.0;
            }
        }
        if !next.is_finite() {
            return Err(Error::Divergence { t: t + self.dt });
        }
        Ok(next)
    }
}

/// Neumann data `v + sigma U w_x` on the beam nodes.
pub fn boundary_data(
    beam_op: &crate::beam::BeamOperator,
    state: &crate::beam::BeamState,
    sigma: f64,
    params: &FlowParams,
) -> Result<Vec<f64>> {
    check_len("beam state", beam_op.n(), state.len())?;
    let s = beam_op.slope(&state.w);
    Ok(state.v.iter().zip(&s).map(|(v, s)| v + sigma * params.u * s).collect())
}

/// One flow step; factors the step matrix on every call, so loops should
/// hold a [`FlowStepper`] instead.
pub fn step_flow(
    op: &FlowOperator,
    field: &FlowField,
    neumann: NeumannSlab<'_>,
    dt: f64,
    scheme: FlowScheme,
) -> Result<FlowField> {
    FlowStepper::new(op, dt, scheme)?.step(field, neumann, 0.0)
}

pub fn flow_energy(op: &FlowOperator, field: &FlowField) -> FlowEnergy {
    op.energy(field)
}
