//! Run configuration: parsing, default resolution and conversion into the
//! solver types.
//!
//! Configs are TOML or JSON documents with flat snake_case keys. Resolution
//! fills every missing parameter with its default and records a notice, so a
//! resolved config written back out resolves to itself.

use std::collections::BTreeSet;
use std::fmt::Debug;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::dynamics::{Acceleration, NesterovChoice, SearchConfig};
use crate::eigen::{EigenConfig, EigenMethod};
use crate::expr::parse_expression;
use crate::gallery::phase_field_force;
use crate::landscape::{EigenCombination, LandscapeConfig, PerturbationMethod, SameJudgement};
use crate::system::{
    build_from_energy, build_from_force, build_from_force_exprs, linear_field, EnergySource, ProbeOptions,
    SystemOptions, SystemSpec,
};
use crate::{Error, Result};

/// Named force fields that are not expressible as expressions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ForcePlugin {
    /// Periodic Allen–Cahn field on an `n_grid x n_grid` grid.
    PhaseField { n_grid: usize, kappa: f64 },
    /// `G(x) = M x` with `M` given row by row.
    Linear { matrix: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum SameJudgementSpec {
    Euclidean { tol: f64 },
    Translation { rows: usize, cols: usize, tol: f64 },
    TranslationFft { rows: usize, cols: usize, threshold: f64 },
}

impl SameJudgementSpec {
    pub fn to_predicate(&self) -> SameJudgement {
        match *self {
            SameJudgementSpec::Euclidean { tol } => SameJudgement::Euclidean { tol },
            SameJudgementSpec::Translation { rows, cols, tol } => SameJudgement::Translation { rows, cols, tol },
            SameJudgementSpec::TranslationFft { rows, cols, threshold } => {
                SameJudgement::TranslationFft { rows, cols, threshold }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RestartSpec {
    Point { x: Vec<f64>, max_index: usize },
    Saddle { id: usize, perturbation: Vec<f64>, max_index: usize },
}

/// Either an inline `d x K` matrix (rows) or a path to a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialVectors {
    Inline(Vec<Vec<f64>>),
    Path(String),
}

/// Fully resolved configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub dim: usize,
    pub initial_point: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy_expression: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_expressions: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_gradient: Option<bool>,
    pub numerical_grad: bool,
    pub dimer_length: f64,
    pub symmetry_check: bool,
    pub probe_samples: usize,
    pub probe_tol: f64,
    pub exact_hessian: bool,
    pub saddle_index: usize,
    pub time_step: f64,
    pub max_iter: usize,
    pub tolerance: f64,
    pub search_area: f64,
    pub bb_step: bool,
    pub bb_cap: f64,
    pub acceleration: Acceleration,
    pub momentum: f64,
    pub nesterov_choice: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nesterov_restart: Option<usize>,
    pub verbose: bool,
    pub report_interval: usize,
    pub save_trajectory: bool,
    pub eigen_method: String,
    pub eigen_max_iter: usize,
    pub eigen_step_size: f64,
    pub precision_tol: f64,
    pub eigvec_unified: bool,
    pub lobpcg_tol: f64,
    pub hessian_dimer_length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search_center: Option<Vec<f64>>,
    pub max_index: usize,
    pub max_index_gap: usize,
    pub perturbation_method: PerturbationMethod,
    pub perturbation_radius: f64,
    pub perturbation_number: usize,
    pub eigen_combination: EigenCombination,
    pub rng_seed: u64,
    pub grid_n: usize,
    pub grid_margin: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projection: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_eigen_vectors: Option<InitialVectors>,
    pub restarts: Vec<RestartSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub force_plugin: Option<ForcePlugin>,
    pub same_judgement: SameJudgementSpec,
}

/// Result of [`validate_config`].
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    pub config: Config,
    /// Defaults applied and automatic adjustments, in resolution order.
    pub notices: Vec<String>,
    /// Non-fatal problems such as unknown keys.
    pub warnings: Vec<String>,
}

struct Reader<'a> {
    map: &'a Map<String, Value>,
    used: BTreeSet<&'static str>,
    notices: Vec<String>,
}

fn display_default<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => "?".into(),
    }
}

impl<'a> Reader<'a> {
    fn optional<T: DeserializeOwned>(&mut self, key: &'static str) -> Result<Option<T>> {
        self.used.insert(key);
        match self.map.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| Error::Config(format!("invalid value for `{key}`: {e}"))),
        }
    }

    fn with_default<T: DeserializeOwned + Serialize>(&mut self, key: &'static str, default: T) -> Result<T> {
        match self.optional(key)? {
            Some(v) => Ok(v),
            None => {
                self.notices.push(format!(
                    "Parameter `{key}` not specified - using default value {}.",
                    display_default(&default)
                ));
                Ok(default)
            }
        }
    }

    fn positive(&mut self, key: &'static str, default: f64) -> Result<f64> {
        let v: f64 = self.with_default(key, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Config(format!("`{key}` must be positive, got {v}")));
        }
        Ok(v)
    }

    fn at_least(&mut self, key: &'static str, default: usize, min: usize) -> Result<usize> {
        let v: usize = self.with_default(key, default)?;
        if v < min {
            return Err(Error::Config(format!("`{key}` must be at least {min}, got {v}")));
        }
        Ok(v)
    }
}

const KNOWN_KEYS: &[&str] = &[
    "dim",
    "initial_point",
    "energy_expression",
    "force_expressions",
    "force_plugin",
    "is_gradient",
    "numerical_grad",
    "dimer_length",
    "symmetry_check",
    "probe_samples",
    "probe_tol",
    "exact_hessian",
    "saddle_index",
    "time_step",
    "max_iter",
    "tolerance",
    "search_area",
    "bb_step",
    "bb_cap",
    "acceleration",
    "momentum",
    "nesterov_choice",
    "nesterov_restart",
    "verbose",
    "report_interval",
    "save_trajectory",
    "eigen_method",
    "eigen_max_iter",
    "eigen_step_size",
    "precision_tol",
    "eigvec_unified",
    "lobpcg_tol",
    "hessian_dimer_length",
    "search_center",
    "max_index",
    "max_index_gap",
    "same_judgement",
    "perturbation_method",
    "perturbation_radius",
    "perturbation_number",
    "eigen_combination",
    "initial_eigen_vectors",
    "rng_seed",
    "restarts",
    "projection",
    "grid_n",
    "grid_margin",
];

/// Parses a config file; `.json` files as JSON, everything else as TOML.
pub fn load_config_file(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)?;
    if path.extension().and_then(|e| e.to_str()) == Some("json") {
        Ok(serde_json::from_str(&text)?)
    } else {
        parse_toml(&text)
    }
}

pub fn parse_toml(text: &str) -> Result<Value> {
    let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(format!("malformed TOML: {e}")))?;
    Ok(serde_json::to_value(table)?)
}

pub fn to_toml(config: &Config) -> Result<String> {
    toml::to_string(config).map_err(|e| Error::Config(format!("cannot encode config: {e}")))
}

/// Resolves a raw config document, applying defaults and checking ranges.
pub fn validate_config(raw: &Value) -> Result<Resolved> {
    let map = raw.as_object().ok_or_else(|| Error::Config("config must be a table of key/value pairs".into()))?;
    let mut r = Reader { map, used: BTreeSet::new(), notices: Vec::new() };
    let mut warnings = Vec::new();

    let initial_point: Vec<f64> =
        r.optional("initial_point")?.ok_or_else(|| Error::Config("missing required key `initial_point`".into()))?;
    if initial_point.is_empty() || initial_point.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("`initial_point` must be a non-empty list of finite numbers".into()));
    }
    let dim = match r.optional::<usize>("dim")? {
        Some(d) if d == initial_point.len() => d,
        _ => {
            r.notices.push(format!(
                "[Config Sync] `dim` parameter auto-adjusted to {} based on `initial_point` dimensionality.",
                initial_point.len()
            ));
            initial_point.len()
        }
    };

    let energy_expression: Option<String> = r.optional("energy_expression")?;
    let force_expressions: Option<Vec<String>> = r.optional("force_expressions")?;
    let force_plugin: Option<ForcePlugin> = r.optional("force_plugin")?;
    let sources = [energy_expression.is_some(), force_expressions.is_some(), force_plugin.is_some()];
    match sources.iter().filter(|s| **s).count() {
        0 => {
            return Err(Error::Config(
                "one of `energy_expression`, `force_expressions` or `force_plugin` is required".into(),
            ))
        }
        1 => {}
        _ => {
            return Err(Error::Config(
                "`energy_expression`, `force_expressions` and `force_plugin` are mutually exclusive".into(),
            ))
        }
    }
    if let Some(src) = &energy_expression {
        parse_expression(src, dim).map_err(|e| Error::Config(format!("`energy_expression`: {e}")))?;
        log::info!("Using `energy_expression` - enabling symbolic differentiation mode.");
    }
    if let Some(list) = &force_expressions {
        if list.len() != dim {
            return Err(Error::Config(format!(
                "`force_expressions` has {} components but the dimension is {dim}",
                list.len()
            )));
        }
        for (i, src) in list.iter().enumerate() {
            parse_expression(src, dim).map_err(|e| Error::Config(format!("`force_expressions[{i}]`: {e}")))?;
        }
    }
    match &force_plugin {
        Some(ForcePlugin::PhaseField { n_grid, kappa }) => {
            if n_grid * n_grid != dim {
                return Err(Error::Config(format!(
                    "`force_plugin`: phase_field with n_grid {n_grid} needs dim {}",
                    n_grid * n_grid
                )));
            }
            if !(*kappa > 0.0) {
                return Err(Error::Config("`force_plugin`: kappa must be positive".into()));
            }
        }
        Some(ForcePlugin::Linear { matrix }) if matrix.len() != dim || matrix.iter().any(|row| row.len() != dim) => {
            return Err(Error::Config(format!("`force_plugin`: linear matrix must be {dim}x{dim}")));
        }
        _ => {}
    }
    let mut is_gradient: Option<bool> = r.optional("is_gradient")?;
    if energy_expression.is_some() {
        if is_gradient == Some(false) {
            return Err(Error::Config("an `energy_expression` system cannot be declared non-gradient".into()));
        }
        is_gradient = None;
    }

    let numerical_grad = r.with_default("numerical_grad", false)?;
    let dimer_length = r.positive("dimer_length", 1e-5)?;
    let symmetry_check = r.with_default("symmetry_check", true)?;
    let probe_samples = r.at_least("probe_samples", 10, 1)?;
    let probe_tol = r.positive("probe_tol", 1e-6)?;
    let exact_hessian = r.with_default("exact_hessian", false)?;
    if exact_hessian && energy_expression.is_none() && force_expressions.is_none() {
        return Err(Error::Config("`exact_hessian` needs `energy_expression` or `force_expressions`".into()));
    }

    let max_index: usize = r.with_default("max_index", 1.min(dim))?;
    if max_index > dim {
        return Err(Error::Config(format!("`max_index` {max_index} exceeds the dimension {dim}")));
    }
    let saddle_index: usize = r.with_default("saddle_index", max_index)?;
    if saddle_index > dim {
        return Err(Error::Config(format!("`saddle_index` {saddle_index} exceeds the dimension {dim}")));
    }
    let time_step = r.positive("time_step", 1e-2)?;
    let max_iter = r.at_least("max_iter", 10000, 1)?;
    let tolerance = r.positive("tolerance", 1e-6)?;
    let search_area = r.positive("search_area", 1000.0)?;
    let bb_step = r.with_default("bb_step", false)?;
    let bb_cap = r.positive("bb_cap", 0.5)?;
    let acceleration: Acceleration = r.with_default("acceleration", Acceleration::None)?;
    let momentum: f64 = r.with_default("momentum", 0.0)?;
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!("`momentum` must lie in [0, 1), got {momentum}")));
    }
    let nesterov_choice: u8 = r.with_default("nesterov_choice", 1)?;
    if nesterov_choice != 1 && nesterov_choice != 2 {
        return Err(Error::Config(format!("`nesterov_choice` must be 1 or 2, got {nesterov_choice}")));
    }
    let nesterov_restart: Option<usize> = r.optional("nesterov_restart")?;
    if nesterov_restart == Some(0) {
        return Err(Error::Config("`nesterov_restart` must be at least 1".into()));
    }
    let verbose = r.with_default("verbose", false)?;
    let report_interval = r.at_least("report_interval", 100, 1)?;
    let save_trajectory = r.with_default("save_trajectory", dim <= 100)?;

    let eigen_method: String = r.with_default("eigen_method", "auto".to_string())?;
    let eigen_method = eigen_method.to_ascii_lowercase();
    let parsed_method = match eigen_method.as_str() {
        "auto" => None,
        other => Some(EigenMethod::parse(other).ok_or_else(|| {
            Error::Config(format!("`eigen_method` must be auto, euler, power or lobpcg, got {other}"))
        })?),
    };
    if parsed_method == Some(EigenMethod::Lobpcg) && is_gradient == Some(false) {
        return Err(Error::Config(
            "`eigen_method` lobpcg requires a gradient system, but `is_gradient` is false".into(),
        ));
    }
    let eigen_max_iter = r.at_least("eigen_max_iter", 10, 1)?;
    let eigen_step_size = r.positive("eigen_step_size", 1e-2)?;
    let precision_tol = r.positive("precision_tol", 1e-5)?;
    let eigvec_unified = r.with_default("eigvec_unified", false)?;
    let lobpcg_tol = r.positive("lobpcg_tol", 1e-7)?;
    let hessian_dimer_length = r.positive("hessian_dimer_length", 1e-5)?;
    let search_center: Option<Vec<f64>> = r.optional("search_center")?;
    if let Some(c) = &search_center {
        if c.len() != dim {
            return Err(Error::Config(format!("`search_center` must have {dim} entries")));
        }
    }

    let max_index_gap = r.at_least("max_index_gap", 1, 1)?;
    let same_judgement: SameJudgementSpec =
        r.with_default("same_judgement", SameJudgementSpec::Euclidean { tol: 1e-3 })?;
    match &same_judgement {
        SameJudgementSpec::Euclidean { tol } if !(*tol > 0.0) => {
            return Err(Error::Config("`same_judgement` tolerance must be positive".into()))
        }
        SameJudgementSpec::Translation { rows, cols, .. } | SameJudgementSpec::TranslationFft { rows, cols, .. }
            if rows * cols != dim =>
        {
            return Err(Error::Config(format!("`same_judgement` grid {rows}x{cols} does not match dim {dim}")))
        }
        _ => {}
    }
    let perturbation_method = r.with_default("perturbation_method", PerturbationMethod::Uniform)?;
    let perturbation_radius = r.positive("perturbation_radius", 1e-2)?;
    let perturbation_number = r.at_least("perturbation_number", 1, 1)?;
    let eigen_combination = r.with_default("eigen_combination", EigenCombination::All)?;
    let initial_eigen_vectors: Option<InitialVectors> = r.optional("initial_eigen_vectors")?;
    if let Some(InitialVectors::Inline(rows)) = &initial_eigen_vectors {
        if rows.len() != dim || rows.iter().any(|row| row.len() < max_index) {
            return Err(Error::Config(format!(
                "`initial_eigen_vectors` must be {dim} rows of at least {max_index} columns"
            )));
        }
    }
    let rng_seed = r.with_default("rng_seed", 1121u64)?;
    let grid_n = r.at_least("grid_n", 100, 2)?;
    let grid_margin: f64 = r.with_default("grid_margin", 0.1)?;
    if !(grid_margin >= 0.0) {
        return Err(Error::Config("`grid_margin` must be non-negative".into()));
    }
    let projection: Option<Vec<Vec<f64>>> = r.optional("projection")?;
    if let Some(p) = &projection {
        if p.len() != 2 || p.iter().any(|row| row.len() != dim) {
            return Err(Error::Config(format!("`projection` must be a 2x{dim} matrix")));
        }
    }
    let restarts: Vec<RestartSpec> = r.optional("restarts")?.unwrap_or_default();
    for rs in &restarts {
        let (len, k) = match rs {
            RestartSpec::Point { x, max_index } => (x.len(), *max_index),
            RestartSpec::Saddle { perturbation, max_index, .. } => (perturbation.len(), *max_index),
        };
        if len != dim || k > dim {
            return Err(Error::Config(format!("restart entry {rs:?} does not match dimension {dim}")));
        }
    }

    for key in map.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            let msg = format!("Unknown configuration key `{key}` ignored.");
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }

    let config = Config {
        dim,
        initial_point,
        energy_expression,
        force_expressions,
        is_gradient,
        numerical_grad,
        dimer_length,
        symmetry_check,
        probe_samples,
        probe_tol,
        exact_hessian,
        saddle_index,
        time_step,
        max_iter,
        tolerance,
        search_area,
        bb_step,
        bb_cap,
        acceleration,
        momentum,
        nesterov_choice,
        nesterov_restart,
        verbose,
        report_interval,
        save_trajectory,
        eigen_method,
        eigen_max_iter,
        eigen_step_size,
        precision_tol,
        eigvec_unified,
        lobpcg_tol,
        hessian_dimer_length,
        search_center,
        max_index,
        max_index_gap,
        perturbation_method,
        perturbation_radius,
        perturbation_number,
        eigen_combination,
        rng_seed,
        grid_n,
        grid_margin,
        projection,
        initial_eigen_vectors,
        restarts,
        force_plugin,
        same_judgement,
    };
    Ok(Resolved { config, notices: r.notices, warnings })
}

impl Config {
    /// Re-serializes and resolves; a resolved config maps to itself.
    pub fn to_value(&self) -> Result<Value> {
        Ok(serde_json::to_value(self)?)
    }

    pub fn initial_point(&self) -> DVector<f64> {
        DVector::from_vec(self.initial_point.clone())
    }

    pub fn system_options(&self) -> SystemOptions {
        SystemOptions {
            dimer_length: self.dimer_length,
            numerical_grad: self.numerical_grad,
            numerical_step: 1e-6,
            symmetry_check: self.symmetry_check,
            probe: ProbeOptions {
                samples: self.probe_samples,
                tol: self.probe_tol,
                center: Some(self.initial_point()),
                seed: self.rng_seed,
                dimer_length: self.dimer_length,
            },
        }
    }

    pub fn build_system(&self) -> Result<SystemSpec> {
        let options = self.system_options();
        let spec = if let Some(src) = &self.energy_expression {
            build_from_energy(EnergySource::Symbolic(parse_expression(src, self.dim)?), self.dim, &options)?
        } else if let Some(list) = &self.force_expressions {
            let exprs =
                list.iter().map(|s| parse_expression(s, self.dim)).collect::<std::result::Result<Vec<_>, _>>()?;
            build_from_force_exprs(exprs, self.is_gradient, &options)?
        } else {
            let force = match self.force_plugin.as_ref().expect("validated config has a system source") {
                ForcePlugin::PhaseField { n_grid, kappa } => phase_field_force(*n_grid, *kappa),
                ForcePlugin::Linear { matrix } => {
                    let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
                    linear_field(DMatrix::from_row_slice(self.dim, self.dim, &flat))
                }
            };
            build_from_force(force, self.dim, self.is_gradient, &options)?
        };
        if self.eigen_method == "lobpcg" && !spec.is_gradient() {
            return Err(Error::Config("`eigen_method` lobpcg requires a gradient system".into()));
        }
        Ok(spec)
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            saddle_index: self.saddle_index,
            time_step: self.time_step,
            max_iter: self.max_iter,
            tolerance: self.tolerance,
            search_area: self.search_area,
            bb_step: self.bb_step,
            bb_cap: self.bb_cap,
            acceleration: self.acceleration,
            momentum: self.momentum,
            nesterov_choice: if self.nesterov_choice == 2 {
                NesterovChoice::Schedule2
            } else {
                NesterovChoice::Schedule1
            },
            nesterov_restart: self.nesterov_restart,
            verbose: self.verbose,
            report_interval: self.report_interval,
            save_trajectory: self.save_trajectory,
            eigen: EigenConfig {
                method: EigenMethod::parse(&self.eigen_method),
                max_iter: self.eigen_max_iter,
                step_size: self.eigen_step_size,
                precision_tol: self.precision_tol,
                unified: self.eigvec_unified,
                lobpcg_tol: self.lobpcg_tol,
            },
            hessian_dimer_length: self.hessian_dimer_length,
            exact_hessian: self.exact_hessian,
            search_center: self.search_center.clone().map(DVector::from_vec),
        }
    }

    /// Landscape settings; relative vector-file paths resolve against `base`.
    pub fn landscape_config(&self, base: Option<&Path>) -> Result<LandscapeConfig> {
        let initial_eigen_vectors = match &self.initial_eigen_vectors {
            None => None,
            Some(InitialVectors::Inline(rows)) => Some(rows_to_matrix(rows)?),
            Some(InitialVectors::Path(p)) => {
                let path = match base {
                    Some(b) if Path::new(p).is_relative() => b.join(p),
                    _ => PathBuf::from(p),
                };
                Some(read_matrix_csv(&path)?)
            }
        };
        Ok(LandscapeConfig {
            max_index: self.max_index,
            max_index_gap: self.max_index_gap,
            same_judgement: self.same_judgement.to_predicate(),
            perturbation_method: self.perturbation_method,
            perturbation_radius: self.perturbation_radius,
            perturbation_number: self.perturbation_number,
            eigen_combination: self.eigen_combination,
            initial_eigen_vectors,
            rng_seed: self.rng_seed,
        })
    }

    /// SHA-256 over the canonical JSON of the fields defining the system.
    pub fn system_hash(&self) -> String {
        let desc = serde_json::json!({
            "dim": self.dim,
            "energy_expression": self.energy_expression,
            "force_expressions": self.force_expressions,
            "force_plugin": self.force_plugin,
            "is_gradient": self.is_gradient,
            "numerical_grad": self.numerical_grad,
        });
        let digest = Sha256::digest(desc.to_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn projection_matrix(&self) -> Option<DMatrix<f64>> {
        self.projection.as_ref().map(|rows| {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            DMatrix::from_row_slice(2, self.dim, &flat)
        })
    }
}

fn rows_to_matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != m) {
        return Err(Error::Config("matrix rows have different lengths".into()));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, m, &flat))
}

/// Reads a comma-separated numeric matrix, one row per line.
pub fn read_matrix_csv(path: &Path) -> Result<DMatrix<f64>> {
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), lineno + 1)))?;
        rows.push(row);
    }
    rows_to_matrix(&rows)
}

/// Parses a comma-separated vector such as `0.1,-0.2`.
pub fn parse_vector(text: &str) -> Result<DVector<f64>> {
    let vals = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Config(format!("cannot parse vector `{text}`: {e}")))?;
    Ok(DVector::from_vec(vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn minimal() -> Value {
        json!({ "energy_expression": "x1**2 + x2**2 - x3**2", "initial_point": [0.1, 0.2, 0.3] })
    }

    #[test]
    fn defaults_are_filled_and_reported() {
        let res = validate_config(&minimal()).unwrap();
        let c = &res.config;
        assert_eq!(c.dim, 3);
        assert_eq!(c.momentum, 0.0);
        assert!(!c.bb_step);
        assert_eq!(c.dimer_length, 1e-5);
        assert_eq!(c.tolerance, 1e-6);
        assert_eq!(c.nesterov_choice, 1);
        assert_eq!(c.search_area, 1000.0);
        assert_eq!(c.max_index_gap, 1);
        assert_eq!(c.perturbation_method, PerturbationMethod::Uniform);
        assert!(c.save_trajectory);
        assert!(res.notices[0].starts_with("[Config Sync] `dim` parameter auto-adjusted to 3"));
        assert!(res.notices.contains(&"Parameter `momentum` not specified - using default value 0.0.".to_string()));
        assert!(res
            .notices
            .contains(&"Parameter `dimer_length` not specified - using default value 0.00001.".to_string()));
        assert!(res
            .notices
            .contains(&"Parameter `search_area` not specified - using default value 1000.0.".to_string()));
        assert!(res.notices.contains(&"Parameter `bb_step` not specified - using default value false.".to_string()));
        assert!(res
            .notices
            .contains(&"Parameter `perturbation_method` not specified - using default value uniform.".to_string()));
    }

    #[test]
    fn resolution_is_idempotent() {
        let first = validate_config(&minimal()).unwrap().config;
        let again = validate_config(&first.to_value().unwrap()).unwrap();
        assert_eq!(again.config, first);
        assert!(again.notices.is_empty());
        let toml_text = to_toml(&first).unwrap();
        let from_toml = validate_config(&parse_toml(&toml_text).unwrap()).unwrap();
        assert_eq!(from_toml.config, first);
    }

    #[test]
    fn range_and_type_errors() {
        let mut bad = minimal();
        bad["time_step"] = json!(-0.1);
        assert!(matches!(validate_config(&bad), Err(Error::Config(m)) if m.contains("time_step")));
        let mut bad = minimal();
        bad["tolerance"] = json!("small");
        assert!(matches!(validate_config(&bad), Err(Error::Config(m)) if m.contains("tolerance")));
        let mut bad = minimal();
        bad["momentum"] = json!(1.0);
        assert!(validate_config(&bad).is_err());
        assert!(validate_config(&json!({ "initial_point": [0.0] })).is_err());
    }

    #[test]
    fn unknown_keys_warn() {
        let mut raw = minimal();
        raw["colour"] = json!("blue");
        let res = validate_config(&raw).unwrap();
        assert_eq!(res.warnings.len(), 1);
        assert!(res.warnings[0].contains("colour"));
    }

    #[test]
    fn lobpcg_on_declared_non_gradient_is_rejected() {
        let raw = json!({
            "force_expressions": ["x2", "-x1"],
            "initial_point": [0.1, 0.2],
            "is_gradient": false,
            "eigen_method": "lobpcg",
        });
        assert!(matches!(validate_config(&raw), Err(Error::Config(m)) if m.contains("lobpcg")));
    }

    #[test]
    fn builds_runtime_objects() {
        let res = validate_config(&minimal()).unwrap();
        let spec = res.config.build_system().unwrap();
        assert!(spec.is_gradient());
        let search = res.config.search_config();
        assert_eq!(search.saddle_index, 1);
        assert_eq!(search.eigen.method, None);
        let land = res.config.landscape_config(None).unwrap();
        assert_eq!(land.rng_seed, 1121);

        let raw = json!({
            "force_plugin": { "name": "linear", "matrix": [[0.0, 1.0], [-1.0, 0.0]] },
            "initial_point": [0.1, 0.2],
        });
        let spec = validate_config(&raw).unwrap().config.build_system().unwrap();
        assert!(!spec.is_gradient());
    }

    #[test]
    fn hash_depends_on_system_only() {
        let a = validate_config(&minimal()).unwrap().config;
        let mut b = a.clone();
        b.time_step = 0.5;
        assert_eq!(a.system_hash(), b.system_hash());
        b.energy_expression = Some("x1**2".into());
        assert_ne!(a.system_hash(), b.system_hash());
    }

    #[test]
    fn vectors_parse() {
        assert_eq!(parse_vector("0.1, -2").unwrap(), DVector::from_vec(vec![0.1, -2.0]));
        assert!(parse_vector("a,b").is_err());
    }
}
