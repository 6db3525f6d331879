//! Result artifacts: saddle list, pathway graph, trajectories and grids.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::landscape::{LandscapeGraph, FROM_INITIAL_POINT};
use crate::system::SystemSpec;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleEntry {
    pub id: usize,
    pub position: Vec<f64>,
    pub morse_index: usize,
    /// Parent saddle ids; searches started from a plain point are omitted.
    pub parents: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddleFile {
    pub schema_version: u32,
    pub saddles: Vec<SaddleEntry>,
}

impl SaddleFile {
    pub fn from_graph(graph: &LandscapeGraph) -> Self {
        let saddles = graph
            .saddles
            .iter()
            .map(|s| SaddleEntry {
                id: s.id,
                position: s.position.iter().copied().collect(),
                morse_index: s.morse_index,
                parents: s.parents.iter().filter(|&&p| p >= 0).map(|&p| p as usize).collect(),
            })
            .collect();
        SaddleFile { schema_version: SCHEMA_VERSION, saddles }
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: SaddleFile = serde_json::from_str(text)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported saddle file schema version {}", file.schema_version)));
        }
        Ok(file)
    }
}

/// Graphviz rendering: one rank per Morse index, highest on top.
pub fn to_dot(graph: &LandscapeGraph) -> String {
    let mut out = String::from("digraph landscape {\n    rankdir=TB;\n    node [shape=ellipse];\n");
    let mut indices: Vec<usize> = graph.saddles.iter().map(|s| s.morse_index).collect();
    indices.sort_unstable_by(|a, b| b.cmp(a));
    indices.dedup();
    for k in indices {
        out.push_str("    { rank=same;");
        for s in graph.saddles.iter().filter(|s| s.morse_index == k) {
            let _ = write!(out, " {} [label=\"{} (index {})\"];", s.id, s.id, k);
        }
        out.push_str(" }\n");
    }
    for (p, c) in graph.edges() {
        let _ = writeln!(out, "    {p} -> {c};");
    }
    out.push_str("}\n");
    out
}

fn csv_row(out: &mut String, t: f64, x: &DVector<f64>) {
    let _ = write!(out, "{t}");
    for v in x.iter() {
        let _ = write!(out, ",{v}");
    }
    out.push('\n');
}

fn csv_header(dim: usize, first: &str) -> String {
    let mut h = first.to_string();
    for i in 1..=dim {
        let _ = write!(h, ",x{i}");
    }
    h.push('\n');
    h
}

/// Writes `<child>_<parent>.csv` for every recorded pathway. Pathways
/// without a stored trajectory become a straight two-row segment.
pub fn write_trajectories(graph: &LandscapeGraph, primary_point: &DVector<f64>, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let dim = primary_point.len();
    let mut written = Vec::new();
    for rec in &graph.detail_records {
        let mut out = csv_header(dim, "t");
        match &rec.trajectory {
            Some(traj) if !traj.points.is_empty() => {
                for (t, x) in traj.times.iter().zip(&traj.points) {
                    csv_row(&mut out, *t, x);
                }
            }
            _ => {
                let start = if rec.parent == FROM_INITIAL_POINT {
                    primary_point
                } else {
                    &graph.saddles[rec.parent as usize].position
                };
                csv_row(&mut out, 0.0, start);
                csv_row(&mut out, 1.0, &graph.saddles[rec.child].position);
            }
        }
        let path = dir.join(format!("{}_{}.csv", rec.child, rec.parent));
        fs::write(&path, out)?;
        written.push(path);
    }
    Ok(written)
}

/// Writes `gnorm_<search id>.csv` for every search in the log.
pub fn write_gnorm_histories(graph: &LandscapeGraph, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for log in &graph.search_logs {
        let mut out = String::from("iteration,gnorm\n");
        for (i, g) in log.gnorm_history.iter().enumerate() {
            let _ = writeln!(out, "{},{g}", i + 1);
        }
        let path = dir.join(format!("gnorm_{}.csv", log.search_id));
        fs::write(&path, out)?;
        written.push(path);
    }
    Ok(written)
}

fn padded(range: (f64, f64), margin: f64) -> (f64, f64) {
    let pad = margin * (range.1 - range.0).max(1e-3);
    (range.0 - pad, range.1 + pad)
}

fn axis(range: (f64, f64), n: usize) -> impl Iterator<Item = f64> {
    let step = (range.1 - range.0) / (n - 1) as f64;
    (0..n).map(move |i| range.0 + step * i as f64)
}

/// Energy sampled on a regular grid over `bounds` widened by `margin`
/// (relative). Only 1D and 2D systems with an energy are supported.
pub fn energy_grid_csv(spec: &SystemSpec, bounds: &[(f64, f64)], n: usize, margin: f64) -> Result<String> {
    if !spec.has_energy() {
        return Err(Error::Config("grid export needs a system with an energy".into()));
    }
    if n < 2 {
        return Err(Error::Config("grid export needs at least 2 points per axis".into()));
    }
    let mut out = String::new();
    match spec.dim() {
        1 => {
            out.push_str("x,E\n");
            for x in axis(padded(bounds[0], margin), n) {
                let e = spec.energy(&DVector::from_element(1, x)).unwrap_or(f64::NAN);
                let _ = writeln!(out, "{x},{e}");
            }
        }
        2 => {
            out.push_str("x,y,E\n");
            let ys: Vec<f64> = axis(padded(bounds[1], margin), n).collect();
            for x in axis(padded(bounds[0], margin), n) {
                for &y in &ys {
                    let e = spec.energy(&DVector::from_vec(vec![x, y])).unwrap_or(f64::NAN);
                    let _ = writeln!(out, "{x},{y},{e}");
                }
            }
        }
        d => {
            return Err(Error::Config(format!(
                "grid export is limited to 1D and 2D systems (dim {d}); use a projection instead"
            )))
        }
    }
    Ok(out)
}

/// Saddle positions mapped through a `2 x d` projection.
pub fn projected_saddles_csv(graph: &LandscapeGraph, projection: &DMatrix<f64>) -> Result<String> {
    let mut out = String::from("id,morse_index,p1,p2\n");
    for s in &graph.saddles {
        if projection.ncols() != s.position.len() || projection.nrows() != 2 {
            return Err(Error::DimensionMismatch { expected: s.position.len(), found: projection.ncols() });
        }
        let p = projection * &s.position;
        let _ = writeln!(out, "{},{},{},{}", s.id, s.morse_index, p[0], p[1]);
    }
    Ok(out)
}
