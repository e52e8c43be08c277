//! Run configuration: TOML in, validated [`SimConfig`] and a canonical
//! normalized echo out.

use std::path::PathBuf;

use flowbeam_core::beam::{BeamGrid, BeamParams};
use flowbeam_core::coupled::{CouplingScheme, FixedPointConfig, SubIteration};
use flowbeam_core::flow::Junction;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ConfigError;

/// Keys with no default.
pub const REQUIRED: [&str; 3] = ["flow.u", "time.dt", "time.horizon"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// Seeds every random draw of a run.
    pub seed: u64,
    pub flow: FlowSection,
    pub beam: BeamSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub fixed_point: FixedPointSection,
    pub initial: InitialDatum,
    pub sweep: SweepSection,
    pub diagnostics: DiagnosticsSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u: Option<f64>,
    pub mu: f64,
    /// Coupling strength between pressure and beam.
    pub sigma: f64,
    /// Rayleigh damping rate inside the sponge layers.
    pub sponge: f64,
    pub sponge_width: f64,
    pub junction: Junction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamSection {
    pub d: f64,
    pub delta: f64,
    /// 0 for the linear beam, 1 for the inextensible one.
    pub beta: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    pub beam_points: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub z_max: f64,
    /// Defaults to `z_max / h + 1`, the square-cell choice.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_rows: Option<usize>,
    /// Flow column spacing; must equal the beam spacing when given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flow_dx: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    pub scheme: CouplingScheme,
    pub sub_tol: f64,
    pub sub_max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointSection {
    pub ball_radius: f64,
    pub tol: f64,
    pub max_iters: usize,
    pub window: f64,
}

/// Initial data by name. The default flow pulse is smooth on the grid; the
/// tip bump excites the stiffest beam modes, so time-step studies on it stay
/// pre-asymptotic until `dt` resolves them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InitialDatum {
    Zero,
    BeamTipBump {
        amplitude: f64,
    },
    FlowPulse {
        amplitude: f64,
        x0: f64,
        z0: f64,
        width: f64,
    },
    /// The exact solution of the manufactured resolvent problem at `lambda`.
    ManufacturedResolvent {
        lambda: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Strictly descending, nonnegative.
    pub deltas: Vec<f64>,
    /// Strictly descending, positive.
    pub mus: Vec<f64>,
    pub us: Vec<f64>,
    /// Scalings of the initial state.
    pub amplitudes: Vec<f64>,
    /// Resolvent parameters.
    pub lambdas: Vec<f64>,
    /// Time-step halvings in a convergence study.
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Trace exponent is `-1/2 - eps`.
    pub eps: f64,
    pub samples: usize,
    pub dissipativity_tol: f64,
    /// Relative energy-balance tolerance in conservative runs.
    pub balance_tol: f64,
    pub resolvent_tol: f64,
    /// Smallest accepted observed order in a convergence study.
    pub min_order: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Snapshot every this many steps; 0 writes only the final state.
    pub snapshot_every: usize,
    pub formats: Vec<Format>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Csv,
    Json,
    Bin,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection { u: None, mu: 1.0, sigma: 1.0, sponge: 0.0, sponge_width: 0.5, junction: Junction::BeamSide }
    }
}

impl Default for BeamSection {
    fn default() -> Self {
        let p = BeamParams::default();
        BeamSection { d: p.d, delta: p.delta, beta: p.beta, length: 1.0 }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { beam_points: 17, x_min: -1.5, x_max: 2.5, z_max: 2.0, flow_rows: None, flow_dx: None }
    }
}

impl Default for TimeSection {
    fn default() -> Self {
        let s = SubIteration::default();
        TimeSection {
            dt: None,
            horizon: None,
            scheme: CouplingScheme::Monolithic,
            sub_tol: s.tol,
            sub_max_iter: s.max_iter,
        }
    }
}

impl Default for FixedPointSection {
    fn default() -> Self {
        let f = FixedPointConfig::default();
        FixedPointSection { ball_radius: f.ball_radius, tol: f.tol, max_iters: f.max_iters, window: f.window_t }
    }
}

impl Default for InitialDatum {
    fn default() -> Self {
        InitialDatum::FlowPulse { amplitude: 0.01, x0: 0.5, z0: 0.5, width: 0.3 }
    }
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            deltas: vec![1e-2, 1e-3, 0.0],
            mus: vec![1.0, 0.5, 0.25],
            us: vec![0.2, 0.5, 0.8],
            amplitudes: vec![1.0],
            lambdas: vec![0.5, 1.0, 2.0],
            levels: 3,
        }
    }
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        DiagnosticsSection {
            eps: 0.5,
            samples: 64,
            dissipativity_tol: 1e-12,
            balance_tol: 1e-8,
            resolvent_tol: 1e-8,
            min_order: 1.5,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("out"),
            snapshot_every: 0,
            formats: vec![Format::Csv, Format::Json, Format::Bin],
        }
    }
}

/// Parses and validates a TOML config, filling every default.
pub fn parse_config(source: &str) -> Result<SimConfig, ConfigError> {
    let mut cfg: SimConfig = toml::from_str(source).map_err(|e| ConfigError::Parse(e.message().to_string()))?;
    cfg.normalize()?;
    Ok(cfg)
}

impl SimConfig {
    pub fn u(&self) -> f64 {
        self.flow.u.expect("validated")
    }

    pub fn dt(&self) -> f64 {
        self.time.dt.expect("validated")
    }

    pub fn horizon(&self) -> f64 {
        self.time.horizon.expect("validated")
    }

    pub fn beam_h(&self) -> f64 {
        self.beam.length / (self.grid.beam_points.max(2) - 1) as f64
    }

    pub fn steps(&self) -> usize {
        ((self.horizon() / self.dt()).round() as usize).max(1)
    }

    pub fn beam_params(&self) -> BeamParams {
        BeamParams { d: self.beam.d, delta: self.beam.delta, beta: self.beam.beta }
    }

    pub fn sub_iteration(&self) -> SubIteration {
        SubIteration { tol: self.time.sub_tol, max_iter: self.time.sub_max_iter }
    }

    pub fn fixed_point(&self) -> FixedPointConfig {
        FixedPointConfig {
            ball_radius: self.fixed_point.ball_radius,
            tol: self.fixed_point.tol,
            max_iters: self.fixed_point.max_iters,
            window_t: self.fixed_point.window,
        }
    }

    /// Checks every invariant and fills the derived defaults.
    pub fn normalize(&mut self) -> Result<(), ConfigError> {
        let u = self.flow.u.ok_or(ConfigError::Missing("flow.u"))?;
        let dt = self.time.dt.ok_or(ConfigError::Missing("time.dt"))?;
        let horizon = self.time.horizon.ok_or(ConfigError::Missing("time.horizon"))?;
        if !(u.abs() < 1.0) {
            return Err(ConfigError::Subsonic(u));
        }
        positive("time.dt", dt)?;
        positive("time.horizon", horizon)?;
        if dt > horizon {
            return Err(ConfigError::Invalid { field: "time.dt", reason: "exceeds the horizon".into() });
        }
        nonnegative("flow.mu", self.flow.mu)?;
        finite("flow.sigma", self.flow.sigma)?;
        nonnegative("flow.sponge", self.flow.sponge)?;
        nonnegative("flow.sponge_width", self.flow.sponge_width)?;
        positive("beam.d", self.beam.d)?;
        nonnegative("beam.delta", self.beam.delta)?;
        if self.beam.beta != 0.0 && self.beam.beta != 1.0 {
            return Err(ConfigError::Invalid { field: "beam.beta", reason: "must be 0 or 1".into() });
        }
        positive("beam.length", self.beam.length)?;
        positive("time.sub_tol", self.time.sub_tol)?;
        positive("fixed_point.ball_radius", self.fixed_point.ball_radius)?;
        positive("fixed_point.tol", self.fixed_point.tol)?;
        positive("fixed_point.window", self.fixed_point.window)?;
        if self.time.sub_max_iter == 0 || self.fixed_point.max_iters == 0 {
            return Err(ConfigError::Invalid {
                field: "time.sub_max_iter",
                reason: "iteration caps must be positive".into(),
            });
        }
        self.normalize_grid()?;
        self.normalize_sweeps()?;
        self.normalize_initial()?;
        positive("diagnostics.eps", self.diagnostics.eps)?;
        positive("diagnostics.dissipativity_tol", self.diagnostics.dissipativity_tol)?;
        positive("diagnostics.balance_tol", self.diagnostics.balance_tol)?;
        positive("diagnostics.resolvent_tol", self.diagnostics.resolvent_tol)?;
        finite("diagnostics.min_order", self.diagnostics.min_order)?;
        if self.diagnostics.samples == 0 {
            return Err(ConfigError::Invalid { field: "diagnostics.samples", reason: "must be positive".into() });
        }
        if self.output.directory.as_os_str().is_empty() {
            return Err(ConfigError::Invalid { field: "output.directory", reason: "must not be empty".into() });
        }
        self.output.formats.sort_by_key(|f| *f as u8);
        self.output.formats.dedup();
        Ok(())
    }

    fn normalize_grid(&mut self) -> Result<(), ConfigError> {
        let g = &mut self.grid;
        if g.beam_points < BeamGrid::MIN_POINTS {
            return Err(ConfigError::Invalid {
                field: "grid.beam_points",
                reason: format!("at least {} points needed for the stencil", BeamGrid::MIN_POINTS),
            });
        }
        let h = self.beam.length / (g.beam_points - 1) as f64;
        positive("grid.z_max", g.z_max)?;
        if !(g.x_min < 0.0 && g.x_max > self.beam.length) {
            return Err(ConfigError::Conformity("flow box must contain the beam: x_min < 0 < length < x_max".into()));
        }
        if let Some(dx) = g.flow_dx {
            if (dx - h).abs() > 1e-12 * h {
                return Err(ConfigError::Conformity(format!(
                    "flow spacing {dx} differs from the beam spacing {h}; no interpolation between the grids is available"
                )));
            }
        }
        for (name, x) in [("grid.x_min", g.x_min), ("grid.x_max", g.x_max)] {
            let k = x / h;
            if (k - k.round()).abs() > 1e-9 {
                return Err(ConfigError::Conformity(format!("{name} = {x} is not a multiple of the beam spacing {h}")));
            }
        }
        g.flow_dx = Some(h);
        let rows = g.flow_rows.unwrap_or((g.z_max / h).round() as usize + 1);
        if rows < 4 {
            return Err(ConfigError::Invalid { field: "grid.flow_rows", reason: "at least 4 rows needed".into() });
        }
        g.flow_rows = Some(rows);
        Ok(())
    }

    fn normalize_sweeps(&mut self) -> Result<(), ConfigError> {
        let s = &self.sweep;
        if s.deltas.windows(2).any(|w| w[1] >= w[0]) || s.deltas.iter().any(|d| !(*d >= 0.0)) {
            return Err(ConfigError::Invalid {
                field: "sweep.deltas",
                reason: "must be nonnegative and strictly descending".into(),
            });
        }
        if s.mus.windows(2).any(|w| w[1] >= w[0]) || s.mus.iter().any(|m| !(*m > 0.0)) {
            return Err(ConfigError::Invalid {
                field: "sweep.mus",
                reason: "must be positive and strictly descending".into(),
            });
        }
        if let Some(u) = s.us.iter().find(|u| !(u.abs() < 1.0)) {
            return Err(ConfigError::Subsonic(*u));
        }
        if s.amplitudes.iter().any(|a| !a.is_finite()) {
            return Err(ConfigError::Invalid { field: "sweep.amplitudes", reason: "must be finite".into() });
        }
        if s.lambdas.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(ConfigError::Invalid { field: "sweep.lambdas", reason: "must be positive".into() });
        }
        if s.levels < 3 {
            return Err(ConfigError::Invalid {
                field: "sweep.levels",
                reason: "at least 3 levels needed for an order".into(),
            });
        }
        Ok(())
    }

    fn normalize_initial(&self) -> Result<(), ConfigError> {
        match self.initial {
            InitialDatum::Zero => Ok(()),
            InitialDatum::BeamTipBump { amplitude } => finite("initial.amplitude", amplitude),
            InitialDatum::FlowPulse { amplitude, x0, z0, width } => {
                finite("initial.amplitude", amplitude)?;
                finite("initial.x0", x0)?;
                finite("initial.z0", z0)?;
                positive("initial.width", width)
            }
            InitialDatum::ManufacturedResolvent { lambda } => positive("initial.lambda", lambda),
        }
    }

    /// Canonical TOML of the validated config, headed by the defaults that
    /// apply to omitted keys.
    pub fn normalized(&self) -> String {
        let defaults = toml::to_string(&SimConfig::default()).expect("defaults serialize");
        let mut out = String::from("# Normalized flowbeam configuration.\n#\n");
        out.push_str(&format!("# Required keys: {}.\n", REQUIRED.join(", ")));
        out.push_str("# grid.flow_rows defaults to z_max / h + 1; grid.flow_dx is the beam spacing h.\n");
        out.push_str("# Defaults for every other key:\n#\n");
        for line in defaults.lines() {
            if line.is_empty() {
                out.push_str("#\n");
            } else {
                out.push_str("#   ");
                out.push_str(line);
                out.push('\n');
            }
        }
        out.push('\n');
        out.push_str(&toml::to_string(self).expect("config serializes"));
        out
    }

    /// SHA-256 of the canonical config body, hex encoded.
    pub fn hash(&self) -> String {
        let body = toml::to_string(self).expect("config serializes");
        let digest = Sha256::digest(body.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn finite(field: &'static str, x: f64) -> Result<(), ConfigError> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid { field, reason: "must be finite".into() })
    }
}

fn positive(field: &'static str, x: f64) -> Result<(), ConfigError> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid { field, reason: format!("must be positive, got {x}") })
    }
}

fn nonnegative(field: &'static str, x: f64) -> Result<(), ConfigError> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid { field, reason: format!("must be nonnegative, got {x}") })
    }
}
