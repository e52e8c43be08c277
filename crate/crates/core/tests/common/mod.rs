//! Model builders shared by the integration tests.
#![allow(dead_code)]

use flowbeam_core::beam::{assemble_beam_operator, BeamGrid, BeamParams};
use flowbeam_core::coupled::CoupledModel;
use flowbeam_core::flow::{assemble_flow_operator, FlowGrid, FlowParams, Junction, Sponge};

#[derive(Debug, Clone, Copy)]
pub struct Setup {
    pub nb: usize,
    /// Box extents in units of the beam length.
    pub upstream: f64,
    pub downstream: f64,
    pub z_max: f64,
    pub u: f64,
    pub mu: f64,
    pub sigma: f64,
    pub sponge: f64,
    pub sponge_width: f64,
    pub junction: Junction,
    pub beam: BeamParams,
}

impl Default for Setup {
    fn default() -> Self {
        Setup {
            nb: 17,
            upstream: 1.5,
            downstream: 1.5,
            z_max: 2.0,
            u: 0.4,
            mu: 1.0,
            sigma: 1.0,
            sponge: 0.0,
            sponge_width: 0.5,
            junction: Junction::BeamSide,
            beam: BeamParams::default(),
        }
    }
}

impl Setup {
    pub fn build(&self) -> CoupledModel {
        let bg = BeamGrid::new(self.nb, 1.0).unwrap();
        let h = bg.h;
        let up = (self.upstream / h).round() as usize;
        let down = (self.downstream / h).round() as usize;
        let nz = (self.z_max / h).round() as usize + 1;
        let fg = FlowGrid::new(&bg, up + self.nb + down, nz, up, self.z_max, self.sponge_width).unwrap();
        let b = assemble_beam_operator(bg, self.beam).unwrap();
        let f = assemble_flow_operator(
            fg,
            FlowParams { u: self.u, mu: self.mu },
            Sponge { strength: self.sponge },
            self.junction,
        )
        .unwrap();
        CoupledModel::new(b, f, self.sigma).unwrap()
    }
}

/// Least-squares slope of `log2(err)` against `-log2(h)` for errors on
/// successively halved grids.
pub fn observed_order(errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = errors.iter().enumerate().map(|(k, e)| (k as f64, -e.log2())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
