//! Energy ledgers, higher-order identities as measured residuals, the
//! boundary trace surrogate norm and the blow-up envelope fit.
//!
//! Time integrals are trapezoid sums over the stored steps, so every
//! balance closes at second order in `dt` even where the stepper itself is
//! exact.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::beam::{BeamOperator, EnergyLevel, NonlinearForm};
use crate::coupled::{CoupledModel, CoupledState};

/// One row of the ledger. `int_*` entries are running trapezoid integrals.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LedgerRow {
    pub t: f64,
    /// Beam energies (nonlinear parts weighted by beta).
    pub e0: f64,
    pub e1: f64,
    pub e2: f64,
    /// Flow energy of the state and of its time derivative, whole box.
    pub ef0: f64,
    pub ef1: f64,
    /// `sigma U <w_x, psi|>` integrated in time.
    pub int_coupling: f64,
    /// `sigma U <w_xt, psi_t|>` integrated in time.
    pub int_coupling1: f64,
    /// Kelvin-Voigt and sponge losses at both levels, and forcing work.
    pub int_damping: f64,
    pub int_damping1: f64,
    pub int_sponge: f64,
    pub int_sponge1: f64,
    pub int_forcing: f64,
    /// Level-one nonlinear correction with boundary coefficient `-2D`.
    pub j: f64,
    /// The same expression with the coefficient `-4D`.
    pub j_alt: f64,
    /// `E(t) - E(0)` plus losses, level zero.
    pub balance0: f64,
    /// Same at level one, after subtracting `j`.
    pub balance1: f64,
    /// Running closure residual of the fourth-order identity.
    pub equipartition: f64,
    /// `D ||s A4 w||^2` at the last step midpoint (never negative).
    pub quartic: f64,
    /// Running `int (F(w), w_t)` against the change of `(D/2)||s k||^2`.
    pub force_work: f64,
    pub potential_change: f64,
}

impl LedgerRow {
    pub fn is_finite(&self) -> bool {
        [
            self.t,
            self.e0,
            self.e1,
            self.e2,
            self.ef0,
            self.ef1,
            self.int_coupling,
            self.int_coupling1,
            self.int_damping,
            self.int_damping1,
            self.int_sponge,
            self.int_sponge1,
            self.int_forcing,
            self.j,
            self.j_alt,
            self.balance0,
            self.balance1,
            self.equipartition,
            self.quartic,
            self.force_work,
            self.potential_change,
        ]
        .iter()
        .all(|x| x.is_finite())
    }

    /// Total energies `E_i + E_f,i`.
    pub fn total0(&self) -> f64 {
        self.e0 + self.ef0
    }

    pub fn total1(&self) -> f64 {
        self.e1 + self.ef1
    }
}

/// Instantaneous quantities at one state.
#[derive(Debug, Clone)]
struct Snapshot {
    state: CoupledState,
    e0: f64,
    e1: f64,
    e2: f64,
    ef0: f64,
    ef1: f64,
    coupling: f64,
    coupling1: f64,
    damping: f64,
    damping1: f64,
    sponge: f64,
    sponge1: f64,
    forcing: f64,
    /// `(s k, s_v k_v)`.
    j_boundary: f64,
    /// `(k k_v, s_v^2) + (s s_v, k_v^2)`.
    j_cubic: f64,
    potential: f64,
}

fn snapshot(model: &CoupledModel, y: &CoupledState) -> Snapshot {
    let beam = &model.beam;
    let flow = &model.flow;
    let ydot = model.rhs(y);
    let a = &ydot.beam.v;
    let prm = beam.params;
    let e0 = beam.energy(&y.beam, EnergyLevel::E0, None).expect("model shapes");
    let e1 = beam.energy(&y.beam, EnergyLevel::E1, Some(a)).expect("model shapes");
    let e2 = beam.energy(&y.beam, EnergyLevel::E2, None).expect("model shapes");
    let su = model.sigma * flow.params.u;
    let sv = beam.slope(&y.beam.v);
    let sw = beam.slope(&y.beam.w);
    let kw = beam.curvature(&y.beam.w);
    let kv = beam.curvature(&y.beam.v);
    let ka = beam.curvature(a);
    let tr = flow.trace(&ydot.flow.psi);
    let coupling1: f64 = (0..sv.len()).map(|k| su * flow.neumann_weight[k] * sv[k] * tr[k]).sum();
    let n = beam.n();
    let mut j_boundary = 0.0;
    let mut j_cubic = 0.0;
    for i in 0..n {
        let c = beam.curv_weight[i];
        j_boundary += c * sw[i] * kw[i] * sv[i] * kv[i];
        j_cubic += c * (kw[i] * kv[i] * sv[i] * sv[i] + sw[i] * sv[i] * kv[i] * kv[i]);
    }
    Snapshot {
        e0,
        e1,
        e2,
        ef0: flow.energy(&y.flow).total(),
        ef1: flow.energy(&ydot.flow).total(),
        coupling: model.interface_flux(y),
        coupling1,
        damping: prm.delta * beam.curv_dot(&kv, &kv),
        damping1: prm.delta * beam.curv_dot(&ka, &ka),
        sponge: flow.sponge_dissipation(&y.flow.psi),
        sponge1: flow.sponge_dissipation(&ydot.flow.psi),
        forcing: beam.mass_dot(&model.forcing, &y.beam.v),
        j_boundary,
        j_cubic,
        potential: beam.potential(&y.beam.w),
        state: y.clone(),
    }
}

/// Per-step fourth-order identity between two states of a midpoint step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EquipartitionStep {
    /// `(delta/2) d||A4 w||^2 + dt D ||q||^2 + dt beta D ||s q||^2`.
    pub lhs: f64,
    /// `-dt (w_tt, q) + dt (psi| + p, q)`.
    pub rhs_known: f64,
    /// `dt beta R` with `R = D ||s q||^2 - (F(w), q)`.
    pub remainder: f64,
    /// `D ||s q||^2`.
    pub quartic: f64,
}

impl EquipartitionStep {
    pub fn residual(&self) -> f64 {
        self.lhs - self.rhs_known - self.remainder
    }
}

/// Tests the beam row of the step `y0 -> y1` with `q = A4 w` at the step
/// midpoint; `w_tt` is the difference quotient of the velocity.
pub fn equipartition_step(model: &CoupledModel, y0: &CoupledState, y1: &CoupledState) -> EquipartitionStep {
    let beam = &model.beam;
    let dt = y1.t - y0.t;
    let n = beam.n();
    let prm = beam.params;
    let wm: Vec<f64> = (0..n).map(|i| 0.5 * (y0.beam.w[i] + y1.beam.w[i])).collect();
    let q = interior_a4(beam, &wm);
    let a: Vec<f64> = (0..n).map(|i| (y1.beam.v[i] - y0.beam.v[i]) / dt).collect();
    let l0 = model.flow.beam_load(&y0.flow.psi);
    let l1 = model.flow.beam_load(&y1.flow.psi);
    let load: Vec<f64> = (0..n).map(|i| 0.5 * (l0[i] + l1[i]) + model.forcing[i]).collect();
    let s = beam.slope(&wm);
    let sq: Vec<f64> = (0..n).map(|i| s[i] * q[i]).collect();
    let quartic = prm.d * beam.mass_dot(&sq, &sq);
    let q0 = interior_a4(beam, &y0.beam.w);
    let q1 = interior_a4(beam, &y1.beam.w);
    let lhs = 0.5 * prm.delta * (beam.mass_dot(&q1, &q1) - beam.mass_dot(&q0, &q0))
        + dt * prm.d * beam.mass_dot(&q, &q)
        + dt * prm.beta * quartic;
    let rhs_known = -dt * beam.mass_dot(&a, &q) + dt * beam.mass_dot(&load, &q);
    let f = beam.nonlinearity(&wm, NonlinearForm::Divergence);
    let remainder = dt * prm.beta * (quartic - beam.mass_dot(&f, &q));
    EquipartitionStep { lhs, rhs_known, remainder, quartic }
}

/// `A4 w` with the clamp row zeroed: the clamp carries no equation.
fn interior_a4(beam: &BeamOperator, w: &[f64]) -> Vec<f64> {
    let mut q = beam.a4(w);
    q[0] = 0.0;
    q
}

/// Sum of the per-step closure residuals along a trajectory.
pub fn equipartition_residual(model: &CoupledModel, traj: &[CoupledState]) -> f64 {
    traj.windows(2).map(|p| equipartition_step(model, &p[0], &p[1]).residual()).sum()
}

/// `[(G(2q), 2q) - 2 (G(q), q)] / 2` where `G` is the expanded force with
/// the fourth-derivative slot filled by its argument: the part of
/// `(F(w), q)` quadratic in `q`.
pub fn quartic_sign_probe(beam: &BeamOperator, w: &[f64], q: &[f64]) -> f64 {
    let q2: Vec<f64> = q.iter().map(|x| 2.0 * x).collect();
    let g1 = beam.expanded_force_with(w, q);
    let g2 = beam.expanded_force_with(w, &q2);
    0.5 * (beam.mass_dot(&g2, &q2) - 2.0 * beam.mass_dot(&g1, q))
}

/// Running energy ledger of a trajectory.
#[derive(Debug, Clone, Default)]
pub struct EnergyLedger {
    pub rows: Vec<LedgerRow>,
    first: Option<Snapshot>,
    last: Option<Snapshot>,
}

impl EnergyLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_trajectory(model: &CoupledModel, traj: &[CoupledState]) -> Self {
        let mut l = Self::new();
        for y in traj {
            l.push(model, y);
        }
        l
    }

    /// Appends the row for `y`, the next state of the trajectory.
    pub fn push(&mut self, model: &CoupledModel, y: &CoupledState) -> LedgerRow {
        let snap = snapshot(model, y);
        let d = model.beam.params.d;
        let beta = model.beam.params.beta;
        let row = match (&self.first, &self.last, self.rows.last()) {
            (Some(first), Some(prev), Some(prow)) => {
                let dt = y.t - prev.state.t;
                let trap = |a: f64, b: f64| 0.5 * dt * (a + b);
                let eq = equipartition_step(model, &prev.state, y);
                let n = model.beam.n();
                let wm: Vec<f64> = (0..n).map(|i| 0.5 * (prev.state.beam.w[i] + y.beam.w[i])).collect();
                let vm: Vec<f64> = (0..n).map(|i| 0.5 * (prev.state.beam.v[i] + y.beam.v[i])).collect();
                let f = model.beam.nonlinearity(&wm, NonlinearForm::Divergence);
                let mut r = LedgerRow {
                    t: y.t,
                    e0: snap.e0,
                    e1: snap.e1,
                    e2: snap.e2,
                    ef0: snap.ef0,
                    ef1: snap.ef1,
                    int_coupling: prow.int_coupling + trap(prev.coupling, snap.coupling),
                    int_coupling1: prow.int_coupling1 + trap(prev.coupling1, snap.coupling1),
                    int_damping: prow.int_damping + trap(prev.damping, snap.damping),
                    int_damping1: prow.int_damping1 + trap(prev.damping1, snap.damping1),
                    int_sponge: prow.int_sponge + trap(prev.sponge, snap.sponge),
                    int_sponge1: prow.int_sponge1 + trap(prev.sponge1, snap.sponge1),
                    int_forcing: prow.int_forcing + trap(prev.forcing, snap.forcing),
                    equipartition: prow.equipartition + eq.residual(),
                    quartic: eq.quartic,
                    force_work: prow.force_work + dt * model.beam.mass_dot(&f, &vm),
                    potential_change: snap.potential - first.potential,
                    ..LedgerRow::default()
                };
                let cubic = prow_cubic(prow, beta, d) + trap(prev.j_cubic, snap.j_cubic);
                let bnd = snap.j_boundary - first.j_boundary;
                r.j = beta * (-2.0 * d * bnd + 3.0 * d * cubic);
                r.j_alt = beta * (-4.0 * d * bnd + 3.0 * d * cubic);
                r.balance0 = snap.e0 + snap.ef0 - first.e0 - first.ef0 + r.int_coupling + r.int_damping + r.int_sponge
                    - r.int_forcing;
                r.balance1 =
                    snap.e1 + snap.ef1 - first.e1 - first.ef1 + r.int_coupling1 + r.int_damping1 + r.int_sponge1 - r.j;
                r
            }
            _ => {
                self.first = Some(snap.clone());
                LedgerRow {
                    t: y.t,
                    e0: snap.e0,
                    e1: snap.e1,
                    e2: snap.e2,
                    ef0: snap.ef0,
                    ef1: snap.ef1,
                    ..LedgerRow::default()
                }
            }
        };
        self.last = Some(snap);
        self.rows.push(row);
        row
    }

    pub fn max_abs(&self, f: impl Fn(&LedgerRow) -> f64) -> f64 {
        self.rows.iter().map(|r| libm::fabs(f(r))).fold(0.0, f64::max)
    }
}

/// Recovers the running cubic integral from a row (`j = beta(-2D b + 3D c)`
/// and `j_alt = beta(-4D b + 3D c)` give `c`).
fn prow_cubic(r: &LedgerRow, beta: f64, d: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    // 2 j - j_alt = 3 beta D c.
    (2.0 * r.j - r.j_alt) / (3.0 * beta * d)
}

/// Squared `H^s` surrogate of one period of samples on spacing `h`:
/// `P sum_k (1 + kappa_k^2)^s |c_k|^2` with `c_k` the normalized DFT and
/// `P = M h` the period.
pub fn periodic_hs_norm2(values: &[f64], h: f64, s: f64) -> f64 {
    let m = values.len();
    if m == 0 {
        return 0.0;
    }
    let period = m as f64 * h;
    let mut total = 0.0;
    for k in 0..m {
        let (mut re, mut im) = (0.0, 0.0);
        for (j, f) in values.iter().enumerate() {
            let ang = -2.0 * PI * ((k * j) % m) as f64 / m as f64;
            re += f * libm::cos(ang);
            im += f * libm::sin(ang);
        }
        let kk = if k <= m / 2 { k as f64 } else { k as f64 - m as f64 };
        let kappa = 2.0 * PI * kk / period;
        let c2 = (re * re + im * im) / (m as f64 * m as f64);
        total += libm::pow(1.0 + kappa * kappa, s) * c2;
    }
    period * total
}

/// Samples of the pressure trace on the beam, one vector per step.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceSeries {
    pub times: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
    /// Beam node spacing.
    pub h: f64,
    pub eps: f64,
}

impl TraceSeries {
    pub fn from_trajectory(model: &CoupledModel, traj: &[CoupledState], eps: f64) -> Self {
        TraceSeries {
            times: traj.iter().map(|y| y.t).collect(),
            samples: traj.iter().map(|y| model.flow.trace(&y.flow.psi)).collect(),
            h: model.beam.grid.h,
            eps,
        }
    }

    /// The Sobolev exponent `-1/2 - eps`.
    pub fn exponent(&self) -> f64 {
        -0.5 - self.eps
    }

    /// Time differences of the samples (`psi_t` on the boundary).
    pub fn differenced(&self) -> TraceSeries {
        let mut times = Vec::new();
        let mut samples = Vec::new();
        for k in 1..self.samples.len() {
            let dt = self.times[k] - self.times[k - 1];
            times.push(0.5 * (self.times[k] + self.times[k - 1]));
            samples.push(self.samples[k].iter().zip(&self.samples[k - 1]).map(|(a, b)| (a - b) / dt).collect());
        }
        TraceSeries { times, samples, h: self.h, eps: self.eps }
    }
}

/// Zero extension of a beam trace of `N` nodes to the `4 (N - 1)`-point
/// period `4 L`.
pub fn zero_extend(trace: &[f64]) -> Vec<f64> {
    let n = trace.len();
    let mut out = vec![0.0; 4 * (n.max(1) - 1)];
    let m = n.min(out.len());
    out[..m].copy_from_slice(&trace[..m]);
    out
}

/// `int ||psi|_(0,L)||^2_{H^s} dt` for the series exponent.
pub fn trace_norm(series: &TraceSeries) -> f64 {
    trace_norm_with(series, series.exponent())
}

pub fn trace_norm_with(series: &TraceSeries, s: f64) -> f64 {
    let vals: Vec<f64> = series.samples.iter().map(|t| periodic_hs_norm2(&zero_extend(t), series.h, s)).collect();
    trapezoid(&series.times, &vals)
}

pub fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    (1..t.len()).map(|k| 0.5 * (t[k] - t[k - 1]) * (f[k] + f[k - 1])).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TraceBound {
    /// `int ||psi|||^2_{H^{-1/2-eps}} dt`.
    pub lhs: f64,
    /// Initial flow energy.
    pub flow_energy0: f64,
    /// `int ||w_t + sigma U w_x||^2 dt` over the beam.
    pub data_integral: f64,
    /// `lhs / (flow_energy0 + data_integral)`; zero for zero data.
    pub c_emp: f64,
}

pub fn trace_bound_check(model: &CoupledModel, traj: &[CoupledState], eps: f64) -> TraceBound {
    let series = TraceSeries::from_trajectory(model, traj, eps);
    let lhs = trace_norm(&series);
    let f2: Vec<f64> = traj
        .iter()
        .map(|y| {
            let g = model.neumann_data(&y.beam);
            model.beam.mass_dot(&g, &g)
        })
        .collect();
    let data_integral = trapezoid(&series.times, &f2);
    let flow_energy0 = traj.first().map_or(0.0, |y| model.flow.energy(&y.flow).total());
    let denom = flow_energy0 + data_integral;
    let c_emp = if denom > 0.0 { lhs / denom } else { 0.0 };
    TraceBound { lhs, flow_energy0, data_integral, c_emp }
}

/// Fit of `E1(t) <= f1 + f2 t + C int_0^t E1^2` and the envelope it
/// implies.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BlowupFit {
    pub f1: f64,
    pub f2: f64,
    pub c: f64,
    /// `None` when `C (f1 t + f2 t^2)` never reaches 1.
    pub t_star: Option<f64>,
    /// `M1(t) = (f1 + f2 t) / (1 - C (f1 t + f2 t^2))` at the sample times
    /// (infinite past `t_star`).
    pub envelope: Vec<f64>,
    /// Some observed value exceeds the envelope.
    pub violation: bool,
}

/// Nonnegative least squares of `E1` on `[1, t, int E1^2]` by enumerating
/// the active sets, then lifting `f1` so the fitted curve bounds the data.
pub fn blowup_monitor(times: &[f64], e1: &[f64]) -> BlowupFit {
    let n = times.len().min(e1.len());
    let sq: Vec<f64> = e1[..n].iter().map(|e| e * e).collect();
    let mut integral = vec![0.0; n];
    for k in 1..n {
        integral[k] = integral[k - 1] + 0.5 * (times[k] - times[k - 1]) * (sq[k] + sq[k - 1]);
    }
    let t0 = times.first().copied().unwrap_or(0.0);
    let cols: [Vec<f64>; 3] = [vec![1.0; n], times[..n].iter().map(|t| t - t0).collect(), integral.clone()];
    let mut best = ([0.0; 3], f64::INFINITY);
    for mask in 0u8..8 {
        let free: Vec<usize> = (0..3).filter(|b| mask & (1 << b) != 0).collect();
        let coef = match least_squares(&cols, &free, &e1[..n]) {
            Some(c) => c,
            None => continue,
        };
        if coef.iter().any(|c| *c < 0.0) {
            continue;
        }
        let mut full = [0.0; 3];
        for (k, &b) in free.iter().enumerate() {
            full[b] = coef[k];
        }
        let res: f64 = (0..n)
            .map(|i| {
                let r = e1[i] - (0..3).map(|b| full[b] * cols[b][i]).sum::<f64>();
                r * r
            })
            .sum();
        if res < best.1 {
            best = (full, res);
        }
    }
    let [mut f1, f2, c] = best.0;
    let lift = (0..n).map(|i| e1[i] - (f1 + f2 * cols[1][i] + c * integral[i])).fold(0.0, f64::max);
    f1 += lift;
    let t_star = if c > 0.0 && (f1 > 0.0 || f2 > 0.0) {
        Some(if f2 > 0.0 { (-f1 + libm::sqrt(f1 * f1 + 4.0 * f2 / c)) / (2.0 * f2) } else { 1.0 / (c * f1) })
    } else {
        None
    };
    let envelope: Vec<f64> = (0..n)
        .map(|i| {
            let t = cols[1][i];
            let den = 1.0 - c * (f1 * t + f2 * t * t);
            if den > 0.0 {
                (f1 + f2 * t) / den
            } else {
                f64::INFINITY
            }
        })
        .collect();
    let violation = (0..n).any(|i| e1[i] > envelope[i] * (1.0 + 1e-9) + 1e-300);
    BlowupFit { f1, f2, c, t_star: t_star.map(|t| t + t0), envelope, violation }
}

/// Normal-equation solve restricted to the columns in `free`.
fn least_squares(cols: &[Vec<f64>; 3], free: &[usize], y: &[f64]) -> Option<Vec<f64>> {
    let m = free.len();
    if m == 0 {
        return Some(Vec::new());
    }
    let mut a = vec![0.0; m * m];
    let mut b = vec![0.0; m];
    for (r, &i) in free.iter().enumerate() {
        for (c, &j) in free.iter().enumerate() {
            a[r * m + c] = cols[i].iter().zip(&cols[j]).map(|(x, z)| x * z).sum();
        }
        b[r] = cols[i].iter().zip(y).map(|(x, z)| x * z).sum();
    }
    let scale = (0..m).map(|r| a[r * m + r]).fold(0.0, f64::max);
    if scale <= 0.0 {
        return None;
    }
    for r in 0..m {
        if a[r * m + r] <= 1e-14 * scale {
            return None;
        }
    }
    let lu = crate::linalg::DenseLu::new(m, a).ok()?;
    let x = lu.solve(&b);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// `|psi|_{H^1} / (E0 + E1 + ||Lap_mu phi_0||^2)^(1/2)` along a trajectory,
/// the ratio the fourth-order step bounds by a constant.
pub fn h1_control_ratio(model: &CoupledModel, traj: &[CoupledState]) -> f64 {
    let Some(first) = traj.first() else {
        return 0.0;
    };
    let flow = &model.flow;
    let lp = flow.lap.mul_vec(&first.flow.phi);
    let lap0 = flow.dot(&lp, &lp);
    traj.iter()
        .map(|y| {
            let s = snapshot(model, y);
            let denom = libm::sqrt(s.e0 + s.ef0 + s.e1 + s.ef1 + lap0);
            let num = libm::sqrt(flow.grad_dot(&y.flow.psi, &y.flow.psi));
            if denom > 0.0 {
                num / denom
            } else {
                0.0
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn least_squares_recovers_exact_combination() {
        let t: Vec<f64> = (0..12).map(|i| 0.1 * i as f64).collect();
        let cols = [vec![1.0; t.len()], t.clone(), t.iter().map(|x| x * x).collect::<Vec<_>>()];
        let y: Vec<f64> = t.iter().map(|x| 0.5 - 2.0 * x + 3.0 * x * x).collect();
        let c = least_squares(&cols, &[0, 1, 2], &y).unwrap();
        assert!((c[0] - 0.5).abs() < 1e-10);
        assert!((c[1] + 2.0).abs() < 1e-10);
        assert!((c[2] - 3.0).abs() < 1e-10);
        assert!(least_squares(&cols, &[], &y).unwrap().is_empty());
    }

    #[test]
    fn trapezoid_is_exact_on_lines() {
        let t = [0.0, 0.5, 1.5, 2.0];
        let f: Vec<f64> = t.iter().map(|x| 1.0 + 2.0 * x).collect();
        assert!((trapezoid(&t, &f) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn zero_extension_keeps_samples() {
        let tr = [1.0, 2.0, 3.0];
        let ext = zero_extend(&tr);
        assert_eq!(ext.len(), 8);
        assert_eq!(&ext[..3], &tr);
        assert!(ext[3..].iter().all(|v| *v == 0.0));
    }
}
