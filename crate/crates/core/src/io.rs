//! Binary dumps of trajectories and boundary operators.
//!
//! Snapshot files hold a 16-byte header (`d: u32`, `n: u32`, `steps: u64`, all
//! little-endian) followed by little-endian `f64` values, one stored step after
//! another. A JSON sidecar next to the binary records the time grid and storage.
//!
//! Operator files start with a little-endian `u64` byte length, then that many
//! bytes of JSON header, then the matrix as row-major little-endian `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::boundary::{BoundaryBasis, BoundaryOperator, Horizon, TemporalAtoms};
use crate::error::{Error, Result};
use crate::forward::{DisplacementTrajectory, Storage};
use crate::linalg::DenseMatrix;
use crate::mesh::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SnapshotHeader {
    pub dim: u32,
    pub n: u32,
    pub steps: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotSidecar {
    pub dt: f64,
    pub horizon: f64,
    pub storage: Storage,
    pub first_step: usize,
    pub stored_steps: usize,
    /// Node indices of each stored snapshot when only part of the grid is kept.
    pub nodes: Option<Vec<usize>>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_snapshots(traj: &DisplacementTrajectory, g: &Grid, mut w: impl Write) -> Result<SnapshotSidecar> {
    let range = traj.stored_steps();
    w.write_all(&(g.dim() as u32).to_le_bytes())?;
    w.write_all(&(g.n() as u32).to_le_bytes())?;
    w.write_all(&(traj.time().steps as u64).to_le_bytes())?;
    for n in range.clone() {
        for v in traj.stored(n).expect("step in stored range") {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(SnapshotSidecar {
        dt: traj.dt(),
        horizon: traj.horizon(),
        storage: traj.storage(),
        first_step: range.start,
        stored_steps: range.len(),
        nodes: traj.stored_nodes().map(|n| n.to_vec()),
    })
}

/// Writes `path` and its `.json` sidecar.
pub fn write_snapshot_files(traj: &DisplacementTrajectory, g: &Grid, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let side = write_snapshots(traj, g, &mut w)?;
    w.flush()?;
    std::fs::write(sidecar_path(path), serde_json::to_vec_pretty(&side)?)?;
    Ok(())
}

pub fn read_snapshots(mut r: impl Read) -> Result<(SnapshotHeader, Vec<f64>)> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    let header = SnapshotHeader {
        dim: u32::from_le_bytes(head[0..4].try_into().unwrap()),
        n: u32::from_le_bytes(head[4..8].try_into().unwrap()),
        steps: u64::from_le_bytes(head[8..16].try_into().unwrap()),
    };
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Parse("snapshot payload is not a whole number of f64 values".into()));
    }
    let values = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header, values))
}

pub fn read_snapshot_files(path: &Path) -> Result<(SnapshotHeader, SnapshotSidecar, Vec<f64>)> {
    let (h, v) = read_snapshots(BufReader::new(File::open(path)?))?;
    let side: SnapshotSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    Ok((h, side, v))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisDescription {
    pub dim: usize,
    pub boundary_nodes: usize,
    pub atoms: TemporalAtoms,
}

impl BasisDescription {
    pub fn of(basis: &BoundaryBasis) -> Self {
        BasisDescription { dim: basis.dim(), boundary_nodes: basis.boundary_nodes(), atoms: basis.atoms().clone() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorHeader {
    pub horizon: Horizon,
    pub rows: usize,
    pub cols: usize,
    pub basis: Option<BasisDescription>,
    /// SHA-256 of the input then output weights as little-endian bytes.
    pub weights_digest: String,
}

pub fn weights_digest(w_in: &[f64], w_out: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in w_in.iter().chain(w_out) {
        h.update(v.to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn write_operator(op: &BoundaryOperator, basis: Option<&BoundaryBasis>, mut w: impl Write) -> Result<OperatorHeader> {
    let header = OperatorHeader {
        horizon: op.horizon,
        rows: op.rows(),
        cols: op.cols(),
        basis: basis.map(BasisDescription::of),
        weights_digest: weights_digest(&op.w_in, &op.w_out),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in &op.matrix.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(header)
}

pub fn write_operator_file(op: &BoundaryOperator, basis: Option<&BoundaryBasis>, path: &Path) -> Result<OperatorHeader> {
    let mut w = BufWriter::new(File::create(path)?);
    let h = write_operator(op, basis, &mut w)?;
    w.flush()?;
    Ok(h)
}

pub fn read_operator(mut r: impl Read) -> Result<(OperatorHeader, DenseMatrix)> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: OperatorHeader = serde_json::from_slice(&json)?;
    let mut bytes = vec![0u8; header.rows * header.cols * 8];
    r.read_exact(&mut bytes)?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    Ok((header.clone(), DenseMatrix { rows: header.rows, cols: header.cols, data }))
}
