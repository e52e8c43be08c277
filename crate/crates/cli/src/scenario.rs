//! Scenario drivers. Each one returns a JSON report plus a list of failed
//! assertions; [`run_scenario`] writes artifacts and the manifest.

use std::fmt;
use std::time::Instant;

use flowbeam_core::beam::{
    assemble_beam_operator, BeamGrid, BeamParams, BeamScheme, BeamState, EnergyLevel, StageSolver,
};
use flowbeam_core::coupled::{
    delta_sweep, dissipativity_check, fitted_rate, mu_sweep, CoupledModel, CoupledState, CoupledStepper,
    CouplingScheme, Sampling,
};
use flowbeam_core::diagnostics::{blowup_monitor, trace_bound_check, EnergyLedger};
use flowbeam_core::elliptic::{resolvent_solve, resolvent_solve_generator, MixedIteration, ResolventData};
use flowbeam_core::flow::{assemble_flow_operator, FlowGrid, FlowParams, Sponge};
use flowbeam_core::initial::{InitialData, ManufacturedResolvent};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Format, InitialDatum, SimConfig};
use crate::error::{CliError, ErrorRecord};
use crate::output::{beam_rows, csv_bytes, json_bytes, snapshot_bytes, trace_rows, ArtifactEntry, Artifacts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    Simulate,
    BeamOnly,
    ResolventCheck,
    DissipativityCheck,
    DeltaSweep,
    MuSweep,
    TraceDiagnostic,
    ConvergenceStudy,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).expect("unit variant");
        f.write_str(s.as_str().expect("string"))
    }
}

/// What a finished run left behind.
#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: u8,
    pub report: Option<Value>,
    pub error: Option<ErrorRecord>,
    pub artifacts: Vec<ArtifactEntry>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    core_version: &'static str,
    scenario: Scenario,
    seed: u64,
    config_sha256: String,
    /// Normalized config; rerunning the scenario on it reproduces the run.
    config: String,
    status: &'static str,
    exit_code: u8,
    wall_time_s: f64,
    artifacts: &'a [ArtifactEntry],
}

struct Report {
    value: Value,
    failures: Vec<String>,
}

struct Ctx<'a> {
    cfg: &'a SimConfig,
    out: Artifacts,
}

impl Ctx<'_> {
    fn wants(&self, f: Format) -> bool {
        self.cfg.output.formats.contains(&f)
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = T>) -> Result<(), CliError> {
        if self.wants(Format::Csv) {
            let bytes = csv_bytes(rows)?;
            self.out.write(name, &bytes)?;
        }
        Ok(())
    }

    fn snapshot(&mut self, name: &str, model: &CoupledModel, y: &CoupledState) -> Result<(), CliError> {
        if self.wants(Format::Bin) {
            self.out.write(name, &snapshot_bytes(model, y))?;
        }
        Ok(())
    }
}

/// Runs `scenario`, writing every artifact, the report, any error record
/// and the manifest into the configured output directory.
pub fn run_scenario(cfg: &SimConfig, scenario: Scenario) -> Result<RunOutcome, CliError> {
    let start = Instant::now();
    let mut ctx = Ctx { cfg, out: Artifacts::create(&cfg.output.directory)? };
    ctx.out.write("config.toml", cfg.normalized().as_bytes())?;
    let result = dispatch(&mut ctx, scenario).and_then(|r| {
        if ctx.wants(Format::Json) {
            ctx.out.write("report.json", &json_bytes(&r.value))?;
        }
        if r.failures.is_empty() {
            Ok(r.value)
        } else {
            Err(CliError::Assertion(r.failures.join("; ")))
        }
    });
    let (report, error) = match result {
        Ok(v) => (Some(v), None),
        Err(e) => {
            let rec = e.record();
            ctx.out.write("error.json", &json_bytes(&rec))?;
            (None, Some(rec))
        }
    };
    let exit_code = error.as_ref().map_or(0, |e| e.exit_code);
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        core_version: flowbeam_core::VERSION,
        scenario,
        seed: cfg.seed,
        config_sha256: cfg.hash(),
        config: cfg.normalized(),
        status: error.as_ref().map_or("ok", |e| e.kind),
        exit_code,
        wall_time_s: start.elapsed().as_secs_f64(),
        artifacts: &ctx.out.written,
    };
    let bytes = json_bytes(&manifest);
    ctx.out.write("manifest.json", &bytes)?;
    Ok(RunOutcome { exit_code, report, error, artifacts: ctx.out.written })
}

fn dispatch(ctx: &mut Ctx<'_>, scenario: Scenario) -> Result<Report, CliError> {
    match scenario {
        Scenario::Simulate => simulate(ctx),
        Scenario::BeamOnly => beam_only(ctx),
        Scenario::ResolventCheck => resolvent_check(ctx),
        Scenario::DissipativityCheck => dissipativity(ctx),
        Scenario::DeltaSweep => delta(ctx),
        Scenario::MuSweep => mu(ctx),
        Scenario::TraceDiagnostic => trace(ctx),
        Scenario::ConvergenceStudy => convergence(ctx),
    }
}

/// Model knobs that scenarios vary away from the config.
#[derive(Debug, Clone, Copy)]
pub struct Overrides {
    pub u: f64,
    pub mu: f64,
    pub sigma: f64,
    pub sponge: f64,
    pub beam: BeamParams,
}

impl Overrides {
    pub fn from_config(cfg: &SimConfig) -> Self {
        Overrides {
            u: cfg.u(),
            mu: cfg.flow.mu,
            sigma: cfg.flow.sigma,
            sponge: cfg.flow.sponge,
            beam: cfg.beam_params(),
        }
    }
}

pub fn build_model(cfg: &SimConfig) -> Result<CoupledModel, CliError> {
    build_model_with(cfg, Overrides::from_config(cfg))
}

pub fn build_model_with(cfg: &SimConfig, o: Overrides) -> Result<CoupledModel, CliError> {
    let g = &cfg.grid;
    let bg = BeamGrid::new(g.beam_points, cfg.beam.length)?;
    let rows = g.flow_rows.expect("normalized");
    let fg = FlowGrid::from_extents(&bg, g.x_min, g.x_max, g.z_max, rows, cfg.flow.sponge_width)?;
    let beam = assemble_beam_operator(bg, o.beam)?;
    let flow =
        assemble_flow_operator(fg, FlowParams { u: o.u, mu: o.mu }, Sponge { strength: o.sponge }, cfg.flow.junction)?;
    Ok(CoupledModel::new(beam, flow, o.sigma)?)
}

pub fn initial_state(cfg: &SimConfig, model: &CoupledModel) -> Result<CoupledState, CliError> {
    let data = match cfg.initial {
        InitialDatum::Zero => InitialData::Zero,
        InitialDatum::BeamTipBump { amplitude } => InitialData::BeamTipBump { amplitude },
        InitialDatum::FlowPulse { amplitude, x0, z0, width } => InitialData::FlowPulse { amplitude, x0, z0, width },
        InitialDatum::ManufacturedResolvent { lambda } => {
            let m = manufactured(model, lambda);
            let mut y = m.exact(&model.beam.grid, &model.flow.grid);
            model.project(&mut y);
            return Ok(y);
        }
    };
    Ok(data.build(model)?)
}

fn manufactured(model: &CoupledModel, lambda: f64) -> ManufacturedResolvent {
    ManufacturedResolvent::new(lambda, model.flow.params, model.beam.params, model.sigma, model.beam.grid.length)
}

fn stepper<'a>(cfg: &SimConfig, model: &'a CoupledModel, dt: f64) -> Result<CoupledStepper<'a>, CliError> {
    Ok(CoupledStepper::new(model, dt, cfg.time.scheme, cfg.sub_iteration())?)
}

fn checked(y: CoupledState) -> Result<CoupledState, CliError> {
    if y.is_finite() {
        Ok(y)
    } else {
        Err(CliError::Solver(flowbeam_core::Error::Divergence { t: y.t }))
    }
}

/// Steps `n` times and returns the final state; `visit` sees every state.
fn march(
    st: &CoupledStepper<'_>,
    y0: CoupledState,
    n: usize,
    mut visit: impl FnMut(usize, &CoupledState) -> Result<(), CliError>,
) -> Result<(CoupledState, usize), CliError> {
    let mut y = y0;
    let mut iterations = 0;
    visit(0, &y)?;
    for k in 1..=n {
        let (next, rep) = st.step(&y)?;
        y = checked(next)?;
        iterations += rep.iterations;
        visit(k, &y)?;
    }
    Ok((y, iterations))
}

fn conservative(cfg: &SimConfig) -> bool {
    cfg.beam.delta == 0.0 && cfg.flow.sponge == 0.0 && cfg.u() == 0.0 && cfg.time.scheme == CouplingScheme::Monolithic
}

fn simulate(ctx: &mut Ctx<'_>) -> Result<Report, CliError> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let y0 = initial_state(cfg, &model)?;
    let st = stepper(cfg, &model, cfg.dt())?;
    let n = cfg.steps();
    let every = cfg.output.snapshot_every;
    let mut ledger = EnergyLedger::new();
    let (y, iterations) = march(&st, y0, n, |k, y| {
        ledger.push(&model, y);
        if every > 0 && k % every == 0 && k != n {
            ctx.snapshot(&format!("snapshot_{k:06}.bin"), &model, y)?;
        }
        Ok(())
    })?;
    ctx.snapshot(&format!("snapshot_{n:06}.bin"), &model, &y)?;
    ctx.csv("ledger.csv", &ledger.rows)?;
    ctx.csv("beam.csv", beam_rows(&model, &y))?;
    ctx.csv("trace.csv", trace_rows(&model, &y))?;

    let first = ledger.rows[0];
    let scale = first.total0().abs().max(f64::MIN_POSITIVE);
    let balance = ledger.max_abs(|r| r.balance0);
    let relative = balance / scale;
    let mut failures = Vec::new();
    let conserved = conservative(cfg);
    if conserved && !(relative <= cfg.diagnostics.balance_tol) {
        failures.push(format!("relative energy balance {relative:e} exceeds {:e}", cfg.diagnostics.balance_tol));
    }
    let times: Vec<f64> = ledger.rows.iter().map(|r| r.t).collect();
    let e1: Vec<f64> = ledger.rows.iter().map(|r| r.e1).collect();
    let blowup = (cfg.beam.beta != 0.0).then(|| blowup_monitor(&times, &e1));
    let value = json!({
        "scenario": "simulate",
        "steps": n,
        "final_time": y.t,
        "sub_iterations": iterations,
        "energy_initial": first.total0(),
        "energy_final": ledger.rows.last().map(|r| r.total0()),
        "max_abs_balance0": balance,
        "relative_balance0": relative,
        "max_abs_balance1": ledger.max_abs(|r| r.balance1),
        "balance_asserted": conserved,
        "blowup": blowup.map(|b| json!({"f1": b.f1, "f2": b.f2, "c": b.c, "t_star": b.t_star, "violation": b.violation})),
    });
    Ok(Report { value, failures })
}

#[derive(Debug, Clone, Copy, Serialize)]
struct BeamLedgerRow {
    t: f64,
    e0: f64,
    e1: f64,
    drift0: f64,
}

fn beam_only(ctx: &mut Ctx<'_>) -> Result<Report, CliError> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let beam = &model.beam;
    let y0 = initial_state(cfg, &model)?;
    let solver = StageSolver { tol: cfg.time.sub_tol.max(1e-14), max_iter: cfg.time.sub_max_iter };
    let zero = vec![0.0; beam.n()];
    let row = |t: f64, s: &BeamState, e00: f64| -> Result<BeamLedgerRow, CliError> {
        let a = beam.accel(s, &zero)?;
        let e0 = beam.energy(s, EnergyLevel::E0, None)?;
        let e1 = beam.energy(s, EnergyLevel::E1, Some(&a))?;
        Ok(BeamLedgerRow { t, e0, e1, drift0: e0 - e00 })
    };
    let mut s = y0.beam.clone();
    let e00 = beam.energy(&s, EnergyLevel::E0, None)?;
    let mut rows = vec![row(0.0, &s, e00)?];
    let mut iterations = 0;
    let n = cfg.steps();
    for k in 1..=n {
        let (next, rep) = beam.step(&s, None, cfg.dt(), BeamScheme::ImplicitMidpoint, solver)?;
        if !next.w.iter().chain(&next.v).all(|x| x.is_finite()) {
            return Err(CliError::Solver(flowbeam_core::Error::Divergence { t: k as f64 * cfg.dt() }));
        }
        s = next;
        iterations += rep.iterations;
        rows.push(row(k as f64 * cfg.dt(), &s, e00)?);
    }
    ctx.csv("ledger.csv", &rows)?;
    let mut yf = CoupledState::zeros(&model);
    yf.beam = s;
    yf.t = n as f64 * cfg.dt();
    ctx.csv("beam.csv", beam_rows(&model, &yf))?;
    let drift = rows.iter().map(|r| r.drift0.abs()).fold(0.0, f64::max);
    let relative = drift / e00.abs().max(f64::MIN_POSITIVE);
    let monotone = rows.windows(2).all(|w| w[1].e0 <= w[0].e0 + cfg.diagnostics.balance_tol * e00.abs());
    let mut failures = Vec::new();
    if cfg.beam.delta == 0.0 && !(relative <= cfg.diagnostics.balance_tol) {
        failures.push(format!("beam energy drift {relative:e} exceeds {:e}", cfg.diagnostics.balance_tol));
    }
    if cfg.beam.delta > 0.0 && !monotone {
        failures.push("damped beam energy increased".to_string());
    }
    let value = json!({
        "scenario": "beam-only",
        "steps": n,
        "stage_iterations": iterations,
        "energy_initial": e00,
        "energy_final": rows.last().map(|r| r.e0),
        "relative_drift0": relative,
        "nonincreasing": monotone,
    });
    Ok(Report { value, failures })
}

#[derive(Debug, Clone, Copy, Serialize)]
struct ResolventRow {
    lambda: f64,
    /// Relative residual of the generator solve.
    residual: f64,
    /// Error recovering an exact discrete solution from its own data.
    roundtrip: f64,
    /// Relative error against the manufactured continuous solution.
    discretization_error: f64,
    /// Relative distance between the two solution routes (NaN when the
    /// mixed route does not apply).
    route_gap: f64,
    mixed_iterations: usize,
}

fn resolvent_check(ctx: &mut Ctx<'_>) -> Result<Report, CliError> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let tol = cfg.diagnostics.resolvent_tol;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &lambda in &cfg.sweep.lambdas {
        let m = manufactured(&model, lambda);
        let mut exact = m.exact(&model.beam.grid, &model.flow.grid);
        let data = m.data(&model.beam.grid, &model.flow.grid);
        let gen = resolvent_solve_generator(&model, lambda, &data)?;
        let norm = model.y_norm(&exact).max(f64::MIN_POSITIVE);
        let discretization_error = model.y_norm(&gen.state.axpy(-1.0, &exact)) / norm;

        model.project(&mut exact);
        let own = ResolventData::from_state(&model, lambda, &exact);
        let back = resolvent_solve_generator(&model, lambda, &own)?;
        let roundtrip = model.y_norm(&back.state.axpy(-1.0, &exact)) / model.y_norm(&exact).max(f64::MIN_POSITIVE);

        let (route_gap, mixed_iterations) = if model.flow.sponge_strength == 0.0 {
            let mixed = resolvent_solve(&model, lambda, &data, MixedIteration::default())?;
            let gap =
                model.y_norm(&mixed.state.axpy(-1.0, &gen.state)) / model.y_norm(&gen.state).max(f64::MIN_POSITIVE);
            (gap, mixed.iterations)
        } else {
            (f64::NAN, 0)
        };
        let residual = gen.residuals.relative;
        if !(residual <= tol) {
            failures.push(format!("resolvent residual {residual:e} at lambda {lambda} exceeds {tol:e}"));
        }
        if !(roundtrip <= tol) {
            failures.push(format!("resolvent roundtrip error {roundtrip:e} at lambda {lambda} exceeds {tol:e}"));
        }
        rows.push(ResolventRow { lambda, residual, roundtrip, discretization_error, route_gap, mixed_iterations });
    }
    ctx.csv("resolvent.csv", &rows)?;
    let value = json!({ "scenario": "resolvent-check", "rows": rows });
    Ok(Report { value, failures })
}

#[derive(Debug, Clone, Copy, Serialize)]
struct DissipativityRow {
    operator: &'static str,
    sampling: &'static str,
    samples: usize,
    max_ratio: f64,
    green: f64,
    convection: f64,
    beam: f64,
    interface: f64,
    kj_flux: f64,
    damping: f64,
    sponge: f64,
    total: f64,
}

fn dissipativity(ctx: &mut Ctx<'_>) -> Result<Report, CliError> {
    let cfg = ctx.cfg;
    let configured = Overrides::from_config(cfg);
    // The generator proper: no coupling perturbation, no losses.
    let skew = Overrides { sigma: 0.0, sponge: 0.0, beam: BeamParams { delta: 0.0, ..configured.beam }, ..configured };
    let generator = build_model_with(cfg, skew)?;
    let full = build_model_with(cfg, configured)?;
    let n = cfg.diagnostics.samples;
    let mut rows = Vec::new();
    let cases = [
        ("generator", &generator, Sampling::Random, "random"),
        ("generator", &generator, Sampling::Constants, "constants"),
        ("configured", &full, Sampling::Random, "random"),
    ];
    for (operator, model, sampling, name) in cases {
        let r = dissipativity_check(model, n, sampling, cfg.seed);
        let w = r.worst;
        rows.push(DissipativityRow {
            operator,
            sampling: name,
            samples: r.samples,
            max_ratio: r.max_ratio,
            green: w.green,
            convection: w.convection,
            beam: w.beam,
            interface: w.interface,
            kj_flux: w.kj_flux,
            damping: w.damping,
            sponge: w.sponge,
            total: w.total,
        });
    }
    ctx.csv("dissipativity.csv", &rows)?;
    let tol = cfg.diagnostics.dissipativity_tol;
    let max_ratio = rows.iter().filter(|r| r.operator == "generator").map(|r| r.max_ratio).fold(0.0, f64::max);
    let mut failures = Vec::new();
    if !(max_ratio <= tol) {
        failures.push(format!("generator ratio {max_ratio:e} exceeds {tol:e}"));
    }
    let value = json!({
        "scenario": "dissipativity-check",
        "seed": cfg.seed,
        "max_ratio": max_ratio,
        "configured_max_ratio": rows[2].max_ratio,
        "rows": rows,
    });
    Ok(Report { value, failures })
}

#[derive(Debug, Clone, Serialize)]
struct DeltaRow {
    delta: f64,
    failure: String,
    sup_energy: f64,
    sup_e1: f64,
    iterations: usize,
    distance_to_next: f64,
}

fn delta(ctx: &mut Ctx<'_>) -> Result<Report, CliError> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let y0 = initial_state(cfg, &model)?;
    let sweep =
        delta_sweep(&model, &y0, &cfg.sweep.deltas, cfg.horizon(), cfg.dt(), cfg.sub_iteration(), &cfg.fixed_point())?;
    let rows: Vec<DeltaRow> = sweep
        .runs
        .iter()
        .enumerate()
        .map(|(k, r)| DeltaRow {
            delta: r.delta,
            failure: r.failure.clone().unwrap_or_default(),
            sup_energy: r.sup_energy,
            sup_e1: r.sup_e1,
            iterations: r.iterations,
            distance_to_next: sweep.distances.get(k).copied().unwrap_or(f64::NAN),
        })
        .collect();
    ctx.csv("ledger.csv", &rows)?;
    let mut failures: Vec<String> =
        sweep.runs.iter().filter_map(|r| r.failure.as_ref().map(|f| format!("delta {}: {f}", r.delta))).collect();
    if sweep.distances.iter().any(|d| !d.is_finite()) {
        failures.push("non-finite distance between sweep members".to_string());
    }
    let value = json!({
        "scenario": "delta-sweep",
        "runs": sweep.runs,
        "distances": sweep.distances,
        "monotone": sweep.monotone,
        "envelope_ratio": sweep.envelope_ratio,
        "distance_rate": fitted_rate(&sweep.distances),
    });
    Ok(Report { value, failures })
}

#[derive(Debug, Clone, Serialize)]
struct MuRow {
    mu: f64,
    failure: String,
    bound_margin: f64,
    distance_to_next: f64,
}

fn mu(ctx: &mut Ctx<'_>) -> Result<Report, CliError> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let y0 = initial_state(cfg, &model)?;
    let sweep = mu_sweep(&model, &y0, &cfg.sweep.mus, cfg.horizon(), cfg.dt(), cfg.sub_iteration())?;
    let rows: Vec<MuRow> = sweep
        .runs
        .iter()
        .enumerate()
        .map(|(k, r)| MuRow {
            mu: r.mu,
            failure: r.failure.clone().unwrap_or_default(),
            bound_margin: r.bound_margin,
            distance_to_next: sweep.distances.get(k).copied().unwrap_or(f64::NAN),
        })
        .collect();
    ctx.csv("ledger.csv", &rows)?;
    let mut failures: Vec<String> =
        sweep.runs.iter().filter_map(|r| r.failure.as_ref().map(|f| format!("mu {}: {f}", r.mu))).collect();
    // The bound holds exactly for the midpoint rule; allow rounding only.
    for r in sweep.runs.iter().filter(|r| r.failure.is_none()) {
        if r.bound_margin < -1e-10 {
            failures.push(format!("mu {}: potential bound violated by {:e}", r.mu, -r.bound_margin));
        }
    }
    let value = json!({ "scenario": "mu-sweep", "runs": sweep.runs, "distances": sweep.distances });
    Ok(Report { value, failures })
}

#[derive(Debug, Clone, Copy, Serialize)]
struct TraceBoundRow {
    u: f64,
    amplitude: f64,
    lhs: f64,
    flow_energy0: f64,
    data_integral: f64,
    c_emp: f64,
}

fn trace(ctx: &mut Ctx<'_>) -> Result<Report, CliError> {
    let cfg = ctx.cfg;
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let n = cfg.steps();
    for &u in &cfg.sweep.us {
        let model = build_model_with(cfg, Overrides { u, ..Overrides::from_config(cfg) })?;
        let base = initial_state(cfg, &model)?;
        let st = stepper(cfg, &model, cfg.dt())?;
        for &amplitude in &cfg.sweep.amplitudes {
            let mut traj = Vec::with_capacity(n + 1);
            march(&st, base.scaled(amplitude), n, |_, y| {
                traj.push(y.clone());
                Ok(())
            })?;
            let tb = trace_bound_check(&model, &traj, cfg.diagnostics.eps);
            if !tb.c_emp.is_finite() {
                failures.push(format!("non-finite trace constant at U = {u}"));
            }
            rows.push(TraceBoundRow {
                u,
                amplitude,
                lhs: tb.lhs,
                flow_energy0: tb.flow_energy0,
                data_integral: tb.data_integral,
                c_emp: tb.c_emp,
            });
            let last = traj.last().expect("nonempty");
            ctx.csv("trace.csv", trace_rows(&model, last))?;
        }
    }
    // Every term is quadratic in the data, so for the linear beam the
    // constant cannot depend on the amplitude.
    if cfg.beam.beta == 0.0 {
        for &u in &cfg.sweep.us {
            let cs: Vec<f64> = rows.iter().filter(|r| r.u == u && r.amplitude != 0.0).map(|r| r.c_emp).collect();
            let hi = cs.iter().copied().fold(f64::MIN, f64::max);
            let lo = cs.iter().copied().fold(f64::MAX, f64::min);
            if cs.len() > 1 && (hi - lo) > 1e-8 * hi.abs() {
                failures.push(format!("trace constant at U = {u} depends on the amplitude: [{lo:e}, {hi:e}]"));
            }
        }
    }
    ctx.csv("trace_bound.csv", &rows)?;
    let c_max = rows.iter().map(|r| r.c_emp).fold(0.0, f64::max);
    let value = json!({
        "scenario": "trace-diagnostic",
        "eps": cfg.diagnostics.eps,
        "exponent": -0.5 - cfg.diagnostics.eps,
        "c_emp_max": c_max,
        "rows": rows,
    });
    Ok(Report { value, failures })
}

#[derive(Debug, Clone, Copy, Serialize)]
struct ConvergenceRow {
    dt: f64,
    steps: usize,
    /// State-norm distance of the final state to the finest level.
    error: f64,
    order: f64,
    max_abs_balance0: f64,
    balance_order: f64,
}

fn convergence(ctx: &mut Ctx<'_>) -> Result<Report, CliError> {
    let cfg = ctx.cfg;
    let model = build_model(cfg)?;
    let y0 = initial_state(cfg, &model)?;
    let levels = cfg.sweep.levels;
    let base = cfg.steps();
    let mut finals = Vec::new();
    let mut balances = Vec::new();
    for k in 0..levels {
        let steps = base << k;
        let dt = cfg.horizon() / steps as f64;
        let st = stepper(cfg, &model, dt)?;
        let mut ledger = EnergyLedger::new();
        let (y, _) = march(&st, y0.clone(), steps, |_, y| {
            ledger.push(&model, y);
            Ok(())
        })?;
        finals.push((dt, steps, y));
        balances.push(ledger.max_abs(|r| r.balance0));
    }
    let finest = &finals[levels - 1].2;
    let errors: Vec<f64> = finals.iter().map(|(_, _, y)| model.y_norm(&y.axpy(-1.0, finest))).collect();
    let order_of = |v: &[f64], k: usize| if k == 0 { f64::NAN } else { (v[k - 1] / v[k]).log2() };
    // The finest level is the reference, so its own error is zero.
    let rows: Vec<ConvergenceRow> = (0..levels)
        .map(|k| ConvergenceRow {
            dt: finals[k].0,
            steps: finals[k].1,
            error: errors[k],
            order: if k + 1 < levels { order_of(&errors, k) } else { f64::NAN },
            max_abs_balance0: balances[k],
            balance_order: order_of(&balances, k),
        })
        .collect();
    ctx.csv("ledger.csv", &rows)?;
    ctx.csv("beam.csv", beam_rows(&model, finest))?;
    ctx.snapshot("snapshot_final.bin", &model, finest)?;
    // Successive differences shrink like (1 - 2^-p) 2^-pk, so the ratio of
    // the last two reference errors still estimates 2^p.
    let orders: Vec<f64> = rows.iter().map(|r| r.order).filter(|o| o.is_finite()).collect();
    let observed = orders.last().copied().unwrap_or(f64::NAN);
    let scale = model.y_norm(finest).max(f64::MIN_POSITIVE);
    let resolved = errors[0] > 1e-10 * scale;
    let mut failures = Vec::new();
    if resolved && !(observed >= cfg.diagnostics.min_order) {
        failures.push(format!("observed order {observed:.3} below {}", cfg.diagnostics.min_order));
    }
    let value = json!({
        "scenario": "convergence-study",
        "observed_order": observed,
        "order_asserted": resolved,
        "rows": rows,
    });
    Ok(Report { value, failures })
}
