//! Snapshots of height fields: a CSV `q,p,h` with one row per half-grid node
//! and a JSON sidecar `{Q, d, Nq, Np, p0}` next to it (same stem, `.json`).
//!
//! Floats are written in shortest round-trip form, so a snapshot reads back
//! bit-exactly.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::heightpde::{mean_top, Grid, HeightField};

#[derive(Debug, thiserror::Error)]
pub enum SnapshotError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnapshotMeta {
    #[serde(rename = "Q")]
    pub q: f64,
    pub d: f64,
    #[serde(rename = "Nq")]
    pub nq: usize,
    #[serde(rename = "Np")]
    pub np: usize,
    pub p0: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    q: f64,
    p: f64,
    h: f64,
}

pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the CSV and its sidecar.
pub fn write_snapshot(field: &HeightField, csv_path: &Path) -> Result<(), SnapshotError> {
    let g = field.grid;
    let csv_err = |source| SnapshotError::Csv { path: csv_path.to_owned(), source };
    let mut wr = csv::Writer::from_path(csv_path).map_err(csv_err)?;
    for i in 0..g.nq {
        for j in 0..g.np {
            wr.serialize(Row { q: g.q(i), p: g.p(j), h: field.at(i, j) }).map_err(csv_err)?;
        }
    }
    wr.flush().map_err(|source| SnapshotError::Io { path: csv_path.to_owned(), source })?;

    let meta = SnapshotMeta { q: field.q, d: mean_top(field), nq: g.nq, np: g.np, p0: g.p0 };
    let side = sidecar_path(csv_path);
    let text = serde_json::to_string_pretty(&meta).map_err(|source| SnapshotError::Json { path: side.clone(), source })?;
    std::fs::write(&side, text + "\n").map_err(|source| SnapshotError::Io { path: side, source })
}

/// Reads a snapshot back. Rows must come in the order they are written
/// (q-major, p ascending) and their coordinates must match the grid.
pub fn read_snapshot(csv_path: &Path) -> Result<HeightField, SnapshotError> {
    let side = sidecar_path(csv_path);
    let file = File::open(&side).map_err(|source| SnapshotError::Io { path: side.clone(), source })?;
    let meta: SnapshotMeta = serde_json::from_reader(file).map_err(|source| SnapshotError::Json { path: side.clone(), source })?;
    let format = |msg: String| SnapshotError::Format { path: csv_path.to_owned(), msg };
    let grid = Grid::new(meta.nq, meta.np, meta.p0).map_err(|e| format(e.to_string()))?;
    if !(meta.p0 < 0.0) || !meta.q.is_finite() {
        return Err(format(format!("invalid sidecar values: p0 = {}, Q = {}", meta.p0, meta.q)));
    }

    let mut rd = csv::Reader::from_path(csv_path).map_err(|source| SnapshotError::Csv { path: csv_path.to_owned(), source })?;
    let mut h = Vec::with_capacity(grid.n_nodes());
    for (n, row) in rd.deserialize::<Row>().enumerate() {
        let row = row.map_err(|source| SnapshotError::Csv { path: csv_path.to_owned(), source })?;
        if n >= grid.n_nodes() {
            return Err(format(format!("more than {} rows", grid.n_nodes())));
        }
        let (i, j) = (n / grid.np, n % grid.np);
        let tol = 1e-12 * (1.0 + meta.p0.abs());
        if (row.q - grid.q(i)).abs() > tol || (row.p - grid.p(j)).abs() > tol {
            return Err(format(format!("row {} has (q, p) = ({}, {}), expected ({}, {})", n + 2, row.q, row.p, grid.q(i), grid.p(j))));
        }
        h.push(row.h);
    }
    if h.len() != grid.n_nodes() {
        return Err(format(format!("expected {} rows, found {}", grid.n_nodes(), h.len())));
    }
    Ok(HeightField { grid, h, q: meta.q })
}
