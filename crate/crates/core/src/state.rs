//! Run manifest and resumable landscape snapshots.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::dynamics::{SearchStatus, Trajectory};
use crate::export::SCHEMA_VERSION;
use crate::landscape::{DetailRecord, Landscape, LandscapeGraph, SaddleRecord, SearchLog};
use crate::{Error, Result};

/// Reproducibility record written next to every run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub seed: u64,
    pub system_hash: String,
    pub duration_secs: f64,
    /// Runs are single-threaded and seeded, so repeated runs agree bit for bit.
    pub deterministic: bool,
    pub notices: Vec<String>,
    pub warnings: Vec<String>,
    pub config: Config,
}

impl RunManifest {
    pub fn new(config: &Config, notices: Vec<String>, warnings: Vec<String>, duration_secs: f64) -> Self {
        RunManifest {
            schema_version: SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            seed: config.rng_seed,
            system_hash: config.system_hash(),
            duration_secs,
            deterministic: true,
            notices,
            warnings,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SaddleState {
    id: usize,
    position: Vec<f64>,
    morse_index: usize,
    /// Row-major, `dim` rows by `morse_index` columns.
    unstable_basis: Vec<Vec<f64>>,
    parents: Vec<i64>,
    degenerate: bool,
    gnorm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryState {
    times: Vec<f64>,
    points: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DetailState {
    child: usize,
    parent: i64,
    trajectory: Option<TrajectoryState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SearchLogState {
    search_id: usize,
    from: i64,
    target_index: usize,
    status: SearchStatus,
    iterations: usize,
    found: Option<usize>,
    gnorm_history: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GraphState {
    saddles: Vec<SaddleState>,
    detail_records: Vec<DetailState>,
    search_logs: Vec<SearchLogState>,
    bounds: Vec<(f64, f64)>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Config(format!("stored matrix is not {nrows}x{ncols}")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

impl GraphState {
    fn from_graph(g: &LandscapeGraph) -> Self {
        GraphState {
            saddles: g
                .saddles
                .iter()
                .map(|s| SaddleState {
                    id: s.id,
                    position: s.position.iter().copied().collect(),
                    morse_index: s.morse_index,
                    unstable_basis: rows_of(&s.unstable_basis),
                    parents: s.parents.clone(),
                    degenerate: s.degenerate,
                    gnorm: s.gnorm,
                })
                .collect(),
            detail_records: g
                .detail_records
                .iter()
                .map(|d| DetailState {
                    child: d.child,
                    parent: d.parent,
                    trajectory: d.trajectory.as_ref().map(|t| TrajectoryState {
                        times: t.times.clone(),
                        points: t.points.iter().map(|p| p.iter().copied().collect()).collect(),
                    }),
                })
                .collect(),
            search_logs: g
                .search_logs
                .iter()
                .map(|l| SearchLogState {
                    search_id: l.search_id,
                    from: l.from,
                    target_index: l.target_index,
                    status: l.status,
                    iterations: l.iterations,
                    found: l.found,
                    gnorm_history: l.gnorm_history.clone(),
                })
                .collect(),
            bounds: g.bounds.clone(),
        }
    }

    fn into_graph(self, dim: usize) -> Result<LandscapeGraph> {
        let mut saddles = Vec::with_capacity(self.saddles.len());
        for (i, s) in self.saddles.into_iter().enumerate() {
            if s.id != i || s.position.len() != dim {
                return Err(Error::Config(format!("stored saddle {i} is inconsistent")));
            }
            saddles.push(SaddleRecord {
                id: s.id,
                unstable_basis: matrix_from_rows(&s.unstable_basis, dim, s.morse_index)?,
                position: DVector::from_vec(s.position),
                morse_index: s.morse_index,
                parents: s.parents,
                degenerate: s.degenerate,
                gnorm: s.gnorm,
            });
        }
        let n = saddles.len() as i64;
        let mut detail_records = Vec::new();
        for d in self.detail_records {
            if d.child as i64 >= n || d.parent >= n || d.parent < -1 {
                return Err(Error::Config("stored pathway references an unknown saddle".into()));
            }
            detail_records.push(DetailRecord {
                child: d.child,
                parent: d.parent,
                trajectory: d.trajectory.map(|t| Trajectory {
                    times: t.times,
                    points: t.points.into_iter().map(DVector::from_vec).collect(),
                }),
            });
        }
        let search_logs = self
            .search_logs
            .into_iter()
            .map(|l| SearchLog {
                search_id: l.search_id,
                from: l.from,
                target_index: l.target_index,
                status: l.status,
                iterations: l.iterations,
                found: l.found,
                gnorm_history: l.gnorm_history,
            })
            .collect();
        Ok(LandscapeGraph { saddles, detail_records, search_logs, bounds: self.bounds })
    }
}

/// Everything needed to resume a landscape in a later process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub schema_version: u32,
    pub manifest: RunManifest,
    graph: GraphState,
}

impl Snapshot {
    pub fn new(manifest: RunManifest, graph: &LandscapeGraph) -> Self {
        Snapshot { schema_version: SCHEMA_VERSION, manifest, graph: GraphState::from_graph(graph) }
    }

    pub fn graph(&self) -> Result<LandscapeGraph> {
        self.graph.clone().into_graph(self.manifest.config.dim)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(&fs::read_to_string(path)?)?;
        if snap.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported state schema version {}", snap.schema_version)));
        }
        Ok(snap)
    }

    /// Rebuilds the system from the stored config and attaches the graph.
    /// Vector files referenced by the config resolve against `base`.
    pub fn landscape(&self, base: Option<&Path>) -> Result<Landscape> {
        let config = &self.manifest.config;
        let spec = config.build_system()?;
        if config.system_hash() != self.manifest.system_hash {
            return Err(Error::Config("stored system hash does not match the stored config".into()));
        }
        let landscape =
            Landscape::new(spec, config.search_config(), config.landscape_config(base)?, config.initial_point())?;
        Ok(landscape.with_graph(self.graph()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gallery::butterfly_config;

    #[test]
    fn snapshot_round_trip_and_resume() {
        let mut config = butterfly_config();
        config.max_index = 1;
        let spec = config.build_system().unwrap();
        let mut land = Landscape::new(
            spec,
            config.search_config(),
            config.landscape_config(None).unwrap(),
            config.initial_point(),
        )
        .unwrap();
        land.run().unwrap();
        let snap = Snapshot::new(RunManifest::new(&config, vec![], vec![], 0.5), land.graph());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.json");
        snap.save(&path).unwrap();
        let loaded = Snapshot::load(&path).unwrap();
        assert_eq!(loaded, snap);
        assert_eq!(&loaded.graph().unwrap(), land.graph());

        let mut resumed = loaded.landscape(None).unwrap();
        let before = resumed.graph().len();
        resumed.restart_from_point(&DVector::from_vec(vec![0.1, 0.1]), 1).unwrap();
        assert_eq!(resumed.graph().len(), before);
    }

    #[test]
    fn tampered_hash_is_rejected() {
        let config = butterfly_config();
        let mut manifest = RunManifest::new(&config, vec![], vec![], 0.0);
        manifest.system_hash = "0".repeat(64);
        let snap = Snapshot::new(manifest, &LandscapeGraph::default());
        assert!(snap.landscape(None).is_err());
    }
}
