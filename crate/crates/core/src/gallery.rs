//! Built-in example systems with reference configurations.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::config::{validate_config, Config, RestartSpec};
use crate::dynamics::SearchConfig;
use crate::expr::CompiledVectorFn;
use crate::landscape::LandscapeConfig;
use crate::system::{build_from_force, SystemOptions, SystemSpec};
use crate::Result;

pub const BUTTERFLY_ENERGY: &str = "x1**4 -1.5*x1**2*x2**2+ x2**4 - 2*x2**3 + x2**2 + x1**2*x2 - 2*x1**2";

pub const MB_A: [f64; 4] = [-200.0, -100.0, -170.0, 15.0];
pub const MB_LA: [f64; 4] = [-1.0, -1.0, -6.5, 0.7];
pub const MB_LB: [f64; 4] = [0.0, 0.0, 11.0, 0.6];
pub const MB_LC: [f64; 4] = [-10.0, -10.0, -6.5, 0.7];
pub const MB_XBAR: [f64; 4] = [1.0, 0.0, -0.5, -1.0];
pub const MB_YBAR: [f64; 4] = [0.0, 0.5, 1.5, 1.0];

#[derive(Debug, Clone)]
pub struct GallerySystem {
    pub name: &'static str,
    pub config: Config,
    pub spec: SystemSpec,
    pub search: SearchConfig,
    pub landscape: LandscapeConfig,
    pub initial_point: DVector<f64>,
    /// Follow-up steps applied after the first landscape run.
    pub restarts: Vec<RestartSpec>,
    /// Known stationary points with their indices, where derivable.
    pub oracle: Option<Vec<(DVector<f64>, usize)>>,
}

impl GallerySystem {
    fn from_config(name: &'static str, config: Config) -> Result<Self> {
        Ok(GallerySystem {
            name,
            spec: config.build_system()?,
            search: config.search_config(),
            landscape: config.landscape_config(None)?,
            initial_point: config.initial_point(),
            restarts: config.restarts.clone(),
            oracle: None,
            config,
        })
    }
}

fn resolve(raw: Value) -> Config {
    validate_config(&raw).expect("gallery configs are valid").config
}

pub fn butterfly_config() -> Config {
    resolve(json!({
        "energy_expression": BUTTERFLY_ENERGY,
        "initial_point": [0.1, 0.1],
        "time_step": 1e-2,
        "max_iter": 10000,
        "eigen_method": "euler",
        "eigen_max_iter": 1,
        "max_index": 2,
        "eigen_combination": "all",
        "perturbation_number": 1,
        "perturbation_radius": 1e-2,
    }))
}

pub fn butterfly() -> Result<GallerySystem> {
    GallerySystem::from_config("butterfly", butterfly_config())
}

fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

/// Müller–Brown energy as an expression string.
pub fn mueller_brown_expression() -> String {
    (0..4)
        .map(|i| {
            let dx = format!("(x1 - {})", fmt_num(MB_XBAR[i]));
            let dy = format!("(x2 - {})", fmt_num(MB_YBAR[i]));
            format!(
                "{}*exp({}*{dx}**2 + {}*{dx}*{dy} + {}*{dy}**2)",
                fmt_num(MB_A[i]),
                fmt_num(MB_LA[i]),
                fmt_num(MB_LB[i]),
                fmt_num(MB_LC[i])
            )
        })
        .collect::<Vec<_>>()
        .join(" + ")
}

pub fn mueller_brown_config() -> Config {
    resolve(json!({
        "energy_expression": mueller_brown_expression(),
        "initial_point": [0.15, 0.25],
        "time_step": 1e-4,
        "max_iter": 50000,
        "report_interval": 1000,
        "max_index": 1,
        "perturbation_number": 1,
        "perturbation_radius": 1e-2,
        "restarts": [{ "type": "saddle", "id": 1, "perturbation": [-0.01, 0.0], "max_index": 1 }],
    }))
}

pub fn mueller_brown() -> Result<GallerySystem> {
    GallerySystem::from_config("mueller_brown", mueller_brown_config())
}

pub fn cubic_expression(n: usize) -> String {
    (1..=n).map(|j| format!("{j}*(x{j}**2 - 1)**2")).collect::<Vec<_>>().join(" + ")
}

/// All points of `{-1, 0, 1}^n` with index equal to the number of zeros.
pub fn cubic_stationary_points(n: usize) -> Vec<(DVector<f64>, usize)> {
    let total = 3usize.pow(n as u32);
    (0..total)
        .map(|mut code| {
            let x = DVector::from_fn(n, |_, _| {
                let digit = code % 3;
                code /= 3;
                digit as f64 - 1.0
            });
            let index = x.iter().filter(|v| **v == 0.0).count();
            (x, index)
        })
        .collect()
}

/// Linear map `(x1 + 1.5 x2, x1 + 2.5 x3)` used to draw the 3D cube in 2D.
pub fn cubic_projection(x: &DVector<f64>) -> (f64, f64) {
    (x[0] + 1.5 * x[1], x[0] + 2.5 * x[2])
}

pub fn cubic_config(n: usize) -> Config {
    let mut raw = json!({
        "energy_expression": cubic_expression(n),
        "initial_point": vec![0.01; n],
        "time_step": 1e-2,
        "max_iter": 10000,
        "max_index": n,
        "max_index_gap": 1,
        "eigen_combination": "all",
        "perturbation_number": 2,
        "perturbation_radius": 1e-2,
    });
    if n == 3 {
        raw["projection"] = json!([[1.0, 1.5, 0.0], [1.0, 0.0, 2.5]]);
    }
    resolve(raw)
}

pub fn cubic(n: usize) -> Result<GallerySystem> {
    let mut g = GallerySystem::from_config("cubic", cubic_config(n))?;
    g.oracle = Some(cubic_stationary_points(n));
    Ok(g)
}

/// Normalized Allen–Cahn field `-(κΔφ + φ - φ³)` on a periodic `n x n` grid
/// with spacing `1/n`, row-major.
pub fn phase_field_force(n: usize, kappa: f64) -> CompiledVectorFn {
    let inv_h2 = (n * n) as f64;
    CompiledVectorFn::from_fn(n * n, move |phi, out| {
        for r in 0..n {
            let up = (r + n - 1) % n;
            let down = (r + 1) % n;
            for c in 0..n {
                let left = (c + n - 1) % n;
                let right = (c + 1) % n;
                let p = phi[r * n + c];
                let lap =
                    (phi[up * n + c] + phi[down * n + c] + phi[r * n + left] + phi[r * n + right] - 4.0 * p) * inv_h2;
                out[r * n + c] = -(kappa * lap + p - p * p * p);
            }
        }
    })
}

/// Exact Hessian-role matrix of the phase-field system at `phi`.
pub fn phase_field_hessian(n: usize, kappa: f64, phi: &DVector<f64>) -> DMatrix<f64> {
    let d = n * n;
    let inv_h2 = d as f64;
    let mut m = DMatrix::zeros(d, d);
    for r in 0..n {
        for c in 0..n {
            let i = r * n + c;
            let p = phi[i];
            m[(i, i)] += 4.0 * kappa * inv_h2 - 1.0 + 3.0 * p * p;
            for j in [((r + n - 1) % n) * n + c, ((r + 1) % n) * n + c, r * n + (c + n - 1) % n, r * n + (c + 1) % n] {
                m[(i, j)] -= kappa * inv_h2;
            }
        }
    }
    m
}

pub fn phase_field_system(n: usize, kappa: f64, dimer_length: f64) -> Result<SystemSpec> {
    let options = SystemOptions { dimer_length, symmetry_check: false, ..SystemOptions::default() };
    build_from_force(phase_field_force(n, kappa), n * n, Some(true), &options)
}

pub fn phase_field_config(n: usize, kappa: f64) -> Config {
    resolve(json!({
        "force_plugin": { "name": "phase_field", "n_grid": n, "kappa": kappa },
        "is_gradient": true,
        "symmetry_check": false,
        "initial_point": vec![0.0; n * n],
        "dimer_length": 1e-3,
        "hessian_dimer_length": 1e-3,
        "time_step": 1e-3,
        "max_iter": 2000,
        "tolerance": 1e-4,
        "search_area": 1e4,
        "bb_step": true,
        "acceleration": "nesterov",
        "nesterov_choice": 1,
        "nesterov_restart": 200,
        "momentum": 0.8,
        "report_interval": 10,
        "save_trajectory": false,
        "eigen_step_size": 1e-7,
        "eigen_max_iter": 2,
        "eigvec_unified": true,
        "max_index": 5.min(n * n),
        "max_index_gap": 3,
        "eigen_combination": "min",
        "perturbation_number": 2,
        "perturbation_radius": 5.0,
        "same_judgement": { "method": "translation", "rows": n, "cols": n, "tol": 0.05 },
    }))
}

pub fn phase_field(n: usize, kappa: f64) -> Result<GallerySystem> {
    GallerySystem::from_config("phase_field", phase_field_config(n, kappa))
}

pub const GALLERY_NAMES: [&str; 4] = ["butterfly", "mueller_brown", "cubic", "phase_field"];

/// Reference config by name, at desk scale.
pub fn config_by_name(name: &str) -> Option<Config> {
    match name {
        "butterfly" => Some(butterfly_config()),
        "mueller_brown" | "muller_brown" | "mb" => Some(mueller_brown_config()),
        "cubic" => Some(cubic_config(3)),
        "phase_field" => Some(phase_field_config(16, 0.05)),
        _ => None,
    }
}

/// Gallery system by name, at desk scale.
pub fn by_name(name: &str) -> Option<Result<GallerySystem>> {
    match name {
        "butterfly" => Some(butterfly()),
        "mueller_brown" | "muller_brown" | "mb" => Some(mueller_brown()),
        "cubic" => Some(cubic(3)),
        "phase_field" => Some(phase_field(16, 0.05)),
        _ => None,
    }
}


#[cfg(test)]
mod config_tests {
    use super::*;
    use crate::dynamics::{Acceleration, NesterovChoice};
    use crate::eigen::EigenMethod;
    use crate::landscape::{EigenCombination, SameJudgement};

    #[test]
    fn gallery_settings() {
        let b = butterfly().unwrap();
        assert_eq!(b.search.eigen.method, Some(EigenMethod::Euler));
        assert_eq!(b.search.eigen.max_iter, 1);
        assert_eq!(b.landscape.max_index, 2);
        let mb = mueller_brown().unwrap();
        assert_eq!(mb.search.time_step, 1e-4);
        assert_eq!(mb.restarts.len(), 1);
        let c = cubic(3).unwrap();
        assert_eq!(c.landscape.perturbation_number, 2);
        assert_eq!(c.landscape.eigen_combination, EigenCombination::All);
        let p = phase_field(8, 0.05).unwrap();
        assert_eq!(p.search.acceleration, Acceleration::Nesterov);
        assert_eq!(p.search.nesterov_choice, NesterovChoice::Schedule1);
        assert_eq!(p.search.nesterov_restart, Some(200));
        assert!(p.search.bb_step && p.search.eigen.unified);
        assert_eq!(p.landscape.max_index_gap, 3);
        assert!(matches!(p.landscape.same_judgement, SameJudgement::Translation { rows: 8, cols: 8, .. }));
        assert!(p.spec.is_gradient());
    }

    #[test]
    fn gallery_configs_round_trip() {
        for name in GALLERY_NAMES {
            let c = config_by_name(name).unwrap();
            let again = validate_config(&c.to_value().unwrap()).unwrap();
            assert_eq!(again.config, c, "{name}");
            assert!(again.notices.is_empty(), "{name}: {:?}", again.notices);
        }
    }
}
