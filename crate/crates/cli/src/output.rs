//! File formats. Every file is written to a temporary sibling and renamed
//! into place, so readers never see a partial artifact.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use flowbeam_core::coupled::{CoupledModel, CoupledState};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SNAPSHOT_MAGIC: [u8; 8] = *b"FBSNAP\0\0";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| CliError::io(path, std::io::ErrorKind::InvalidInput.into()))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(path, e)
    })
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn csv_bytes<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| CliError::io("<csv>", std::io::Error::other(e)))?;
    }
    w.into_inner().map_err(|e| CliError::io("<csv>", std::io::Error::other(e.to_string())))
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("json serializes");
    v.push(b'\n');
    v
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct BeamRow {
    pub x: f64,
    pub w: f64,
    pub v: f64,
}

pub fn beam_rows(model: &CoupledModel, y: &CoupledState) -> Vec<BeamRow> {
    (0..model.beam.n()).map(|i| BeamRow { x: model.beam.grid.x(i), w: y.beam.w[i], v: y.beam.v[i] }).collect()
}

/// Boundary values on `z = 0` across the whole box.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TraceRow {
    pub x: f64,
    pub psi: f64,
    pub phi: f64,
}

pub fn trace_rows(model: &CoupledModel, y: &CoupledState) -> Vec<TraceRow> {
    let g = &model.flow.grid;
    (0..g.nx)
        .map(|i| {
            let k = g.idx(i, 0);
            TraceRow { x: g.x(i), psi: y.flow.psi[k], phi: y.flow.phi[k] }
        })
        .collect()
}

/// Decoded binary snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub nx: u32,
    pub nz: u32,
    pub nb: u32,
    pub x_min: f64,
    pub x_max: f64,
    pub z_max: f64,
    pub beam_length: f64,
    pub t: f64,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub w: Vec<f64>,
    pub v: Vec<f64>,
}

/// Little-endian layout: magic, version, `nx nz nb` as u32, then
/// `x_min x_max z_max beam_length t` and the fields `phi psi w v` as f64.
/// Flow fields are row-major with x fastest.
pub fn snapshot_bytes(model: &CoupledModel, y: &CoupledState) -> Vec<u8> {
    let g = &model.flow.grid;
    let mut b = Vec::with_capacity(64 + 8 * (2 * g.n() + 2 * model.beam.n()));
    b.extend_from_slice(&SNAPSHOT_MAGIC);
    b.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
    for n in [g.nx, g.nz, model.beam.n()] {
        b.extend_from_slice(&(n as u32).to_le_bytes());
    }
    for x in [g.x_min, g.x_max, g.z_max, model.beam.grid.length, y.t] {
        b.extend_from_slice(&x.to_le_bytes());
    }
    for field in [&y.flow.phi, &y.flow.psi, &y.beam.w, &y.beam.v] {
        for x in field.iter() {
            b.extend_from_slice(&x.to_le_bytes());
        }
    }
    b
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SnapshotError {
    #[error("not a flowbeam snapshot")]
    Magic,
    #[error("unsupported snapshot version {0}")]
    Version(u32),
    #[error("snapshot truncated or oversized")]
    Length,
}

pub fn read_snapshot(bytes: &[u8]) -> Result<Snapshot, SnapshotError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != SNAPSHOT_MAGIC {
        return Err(SnapshotError::Magic);
    }
    let version = r.u32()?;
    if version != SNAPSHOT_VERSION {
        return Err(SnapshotError::Version(version));
    }
    let (nx, nz, nb) = (r.u32()?, r.u32()?, r.u32()?);
    let (x_min, x_max, z_max, beam_length, t) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?, r.f64()?);
    let nf = (nx as usize).checked_mul(nz as usize).ok_or(SnapshotError::Length)?;
    let phi = r.f64s(nf)?;
    let psi = r.f64s(nf)?;
    let w = r.f64s(nb as usize)?;
    let v = r.f64s(nb as usize)?;
    if r.pos != bytes.len() {
        return Err(SnapshotError::Length);
    }
    Ok(Snapshot { nx, nz, nb, x_min, x_max, z_max, beam_length, t, phi, psi, w, v })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], SnapshotError> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.bytes.len()).ok_or(SnapshotError::Length)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, SnapshotError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64, SnapshotError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, SnapshotError> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Collects artifacts of one run and writes them atomically.
#[derive(Debug)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub written: Vec<ArtifactEntry>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ArtifactEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Artifacts { dir: dir.to_path_buf(), written: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.written.retain(|a| a.path != name);
        self.written.push(ArtifactEntry { path: name.to_string(), sha256: sha256_hex(bytes), bytes: bytes.len() });
        Ok(())
    }
}
