//! Saddle search iterations: reflected descent of `G` with an evolving
//! unstable subspace, plus plain descent for minima.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eigen::{
    check_index_k, find_index, give_initial_eigenvectors, update_subspace, EigenConfig, EigenMethod, IndexReport,
    SubspaceBasis,
};
use crate::hessian::{HessianAction, HessianOperator};
use crate::system::SystemSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Acceleration {
    None,
    HeavyBall,
    Nesterov,
}

impl Acceleration {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Some(Acceleration::None),
            "heavyball" | "heavy_ball" | "heavy-ball" => Some(Acceleration::HeavyBall),
            "nesterov" => Some(Acceleration::Nesterov),
            _ => None,
        }
    }
}

/// Momentum schedule for Nesterov extrapolation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NesterovChoice {
    /// `γ_n = n / (n + 3)`
    Schedule1,
    /// `γ_n = (θ_n - 1) / θ_{n+1}`
    Schedule2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub saddle_index: usize,
    pub time_step: f64,
    pub max_iter: usize,
    pub tolerance: f64,
    pub search_area: f64,
    pub bb_step: bool,
    pub bb_cap: f64,
    pub acceleration: Acceleration,
    pub momentum: f64,
    pub nesterov_choice: NesterovChoice,
    pub nesterov_restart: Option<usize>,
    pub verbose: bool,
    pub report_interval: usize,
    pub save_trajectory: bool,
    pub eigen: EigenConfig,
    /// Dimer length for dense reconstruction in index checks.
    pub hessian_dimer_length: f64,
    /// Use symbolic second derivatives instead of dimer products.
    pub exact_hessian: bool,
    /// Reference point of the divergence check; the search start if absent.
    pub search_center: Option<DVector<f64>>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            saddle_index: 0,
            time_step: 1e-2,
            max_iter: 10000,
            tolerance: 1e-6,
            search_area: 1000.0,
            bb_step: false,
            bb_cap: 0.5,
            acceleration: Acceleration::None,
            momentum: 0.0,
            nesterov_choice: NesterovChoice::Schedule1,
            nesterov_restart: None,
            verbose: false,
            report_interval: 100,
            save_trajectory: true,
            eigen: EigenConfig::default(),
            hessian_dimer_length: 1e-5,
            exact_hessian: false,
            search_center: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if !(self.search_area > 0.0) {
            return bad("search_area must be positive");
        }
        if !(self.time_step > 0.0) {
            return bad("time_step must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.report_interval == 0 {
            return bad("report_interval must be at least 1");
        }
        if !(self.bb_cap > 0.0) {
            return bad("bb_cap must be positive");
        }
        if self.nesterov_restart == Some(0) {
            return bad("nesterov_restart must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    Converged,
    Diverged,
    MaxIterNoConvergence,
}

impl fmt::Display for SearchStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SearchStatus::Converged => "converged",
            SearchStatus::Diverged => "diverged",
            SearchStatus::MaxIterNoConvergence => "max_iter_no_convergence",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub points: Vec<DVector<f64>>,
    pub times: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub status: SearchStatus,
    pub x_final: DVector<f64>,
    pub morse_index: usize,
    pub degenerate: bool,
    /// Present whenever the search did not fail.
    pub index_report: Option<IndexReport>,
    pub iterations: usize,
    pub trajectory: Option<Trajectory>,
    pub gnorm_history: Vec<f64>,
    /// Cumulative pseudo-time, starting at 0.
    pub cumulative_steps: Vec<f64>,
    /// Hessian-vector products spent inside the iteration loop.
    pub hvp_evals: u64,
    pub force_evals: u64,
    /// Per-coordinate range visited by the search.
    pub bounds: Vec<(f64, f64)>,
    pub basis: SubspaceBasis,
    pub messages: Vec<String>,
}

impl SearchOutcome {
    pub fn converged(&self) -> bool {
        self.status == SearchStatus::Converged
    }
}

/// `min(τ/‖g‖, |⟨dx,dg⟩/⟨dg,dg⟩|)`, or `fallback` when the quotient is
/// unusable.
pub fn bb2_step(dx: &DVector<f64>, dg: &DVector<f64>, g: &DVector<f64>, tau: f64, fallback: f64) -> f64 {
    let dgdg = dg.dot(dg);
    let q = (dx.dot(dg) / dgdg).abs();
    if dgdg == 0.0 || !q.is_finite() || q == 0.0 {
        return fallback;
    }
    let gn = g.norm();
    if gn == 0.0 {
        return q;
    }
    (tau / gn).min(q)
}

/// `x + dt·r + α(x - x_prev)`.
pub fn accelerate_heavyball(
    x: &DVector<f64>,
    x_prev: &DVector<f64>,
    r: &DVector<f64>,
    dt: f64,
    alpha: f64,
) -> DVector<f64> {
    let mut next = x + r * dt;
    if alpha != 0.0 {
        next += (x - x_prev) * alpha;
    }
    next
}

/// Extrapolated point `x + γ(x - x_prev)`.
pub fn accelerate_nesterov(x: &DVector<f64>, x_prev: &DVector<f64>, gamma: f64) -> DVector<f64> {
    x + (x - x_prev) * gamma
}

/// Nesterov momentum coefficients with optional periodic restart.
#[derive(Debug, Clone)]
pub struct NesterovSchedule {
    choice: NesterovChoice,
    restart: Option<usize>,
    theta: f64,
    base: usize,
}

fn theta_next(theta: f64) -> f64 {
    (1.0 + (1.0 + 4.0 * theta * theta).sqrt()) / 2.0
}

impl NesterovSchedule {
    pub fn new(choice: NesterovChoice, restart: Option<usize>) -> Self {
        NesterovSchedule { choice, restart, theta: theta_next(1.0), base: 0 }
    }

    /// Coefficient for iteration `j ≥ 1`.
    pub fn gamma(&mut self, j: usize) -> f64 {
        match self.choice {
            NesterovChoice::Schedule1 => {
                let n = (j - self.base) as f64;
                n / (n + 3.0)
            }
            NesterovChoice::Schedule2 => {
                let next = theta_next(self.theta);
                let g = (self.theta - 1.0) / next;
                self.theta = next;
                g
            }
        }
    }

    /// Applies the restart rule after iteration `j` has finished.
    pub fn end_iteration(&mut self, j: usize) {
        if let Some(r) = self.restart {
            if j.is_multiple_of(r) {
                self.theta = theta_next(1.0);
                self.base = j;
            }
        }
    }
}

fn reflect(g: &DVector<f64>, v: &DMatrix<f64>) -> DVector<f64> {
    if v.ncols() == 0 {
        return g.clone();
    }
    g - v * (v.transpose() * g) * 2.0
}

/// Index-`k` saddle search from `x0` with initial subspace `v0`.
pub fn hisd_search(
    spec: &SystemSpec,
    cfg: &SearchConfig,
    x0: &DVector<f64>,
    v0: &SubspaceBasis,
) -> Result<SearchOutcome> {
    cfg.validate()?;
    if x0.len() != spec.dim() {
        return Err(Error::DimensionMismatch { expected: spec.dim(), found: x0.len() });
    }
    if v0.k() != cfg.saddle_index || v0.dim() != spec.dim() {
        return Err(Error::Config(format!(
            "initial subspace is {}x{}, expected {}x{}",
            v0.dim(),
            v0.k(),
            spec.dim(),
            cfg.saddle_index
        )));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::Config("initial point is not finite".into()));
    }
    if !spec.is_gradient() && cfg.eigen.method_for(false) == EigenMethod::Lobpcg {
        return Err(Error::NonSymmetricOperator);
    }
    let (step_op, check_op) = if cfg.exact_hessian {
        (HessianOperator::exact(spec)?, HessianOperator::exact(spec)?)
    } else {
        (HessianOperator::dimer(spec), HessianOperator::dimer_with_length(spec, cfg.hessian_dimer_length))
    };
    run_loop(spec, cfg, x0, v0.clone(), &step_op, &check_op)
}

/// Plain descent `x ← x - dt·G(x)` towards a minimum.
/// Operator used for dense index checks: exact when requested, otherwise a
/// dimer with `hessian_dimer_length`.
pub fn check_operator<'a>(spec: &'a SystemSpec, cfg: &SearchConfig) -> Result<HessianOperator<'a>> {
    if cfg.exact_hessian {
        HessianOperator::exact(spec)
    } else {
        Ok(HessianOperator::dimer_with_length(spec, cfg.hessian_dimer_length))
    }
}

/// Search from `x0` with the starting subspace taken from the dense
/// Hessian at `x0`.
pub fn search_from_point(spec: &SystemSpec, cfg: &SearchConfig, x0: &DVector<f64>, seed: u64) -> Result<SearchOutcome> {
    let basis = if cfg.saddle_index == 0 {
        SubspaceBasis::empty(spec.dim())
    } else {
        let op = check_operator(spec, cfg)?;
        give_initial_eigenvectors(&op, x0, cfg.saddle_index, cfg.eigen.unified, cfg.eigen.precision_tol, seed)
    };
    hisd_search(spec, cfg, x0, &basis)
}

pub fn sd_search(spec: &SystemSpec, cfg: &SearchConfig, x0: &DVector<f64>) -> Result<SearchOutcome> {
    let cfg = SearchConfig { saddle_index: 0, ..cfg.clone() };
    hisd_search(spec, &cfg, x0, &SubspaceBasis::empty(spec.dim()))
}

fn run_loop(
    spec: &SystemSpec,
    cfg: &SearchConfig,
    x0: &DVector<f64>,
    mut basis: SubspaceBasis,
    step_op: &dyn HessianAction,
    check_op: &dyn HessianAction,
) -> Result<SearchOutcome> {
    let k = cfg.saddle_index;
    let center = cfg.search_center.clone().unwrap_or_else(|| x0.clone());
    let counter = spec.counter().clone();
    let hvp_start = counter.hvp_evals();
    let force_start = counter.force_evals();
    let mut messages = Vec::new();
    let mut note = |m: String, warn: bool| {
        if warn {
            log::warn!("{m}");
        } else {
            log::info!("{m}");
        }
        messages.push(m);
    };

    let mut x = x0.clone();
    let mut x_pre = x0.clone();
    let mut g = spec.force(&x);
    let mut g_pre = g.clone();
    let mut dt = cfg.time_step;
    let mut gnorm_history = vec![g.norm()];
    let mut steps = vec![0.0];
    let mut points = if cfg.save_trajectory { vec![x.clone()] } else { Vec::new() };
    let mut bounds: Vec<(f64, f64)> = x.iter().map(|&v| (v, v)).collect();
    let mut nesterov = NesterovSchedule::new(cfg.nesterov_choice, cfg.nesterov_restart);
    let mut hvp_loop = 0;
    let mut j = 0;
    let mut stopped = false;

    while j < cfg.max_iter {
        j += 1;
        if cfg.bb_step && j > 1 {
            dt = bb2_step(&(&x - &x_pre), &(&g - &g_pre), &g, cfg.bb_cap, cfg.time_step);
        }
        steps.push(dt);
        let next = match cfg.acceleration {
            Acceleration::Nesterov => {
                let gamma = nesterov.gamma(j);
                let w = accelerate_nesterov(&x, &x_pre, gamma);
                let gw = spec.force(&w);
                w - reflect(&gw, &basis.v) * dt
            }
            Acceleration::HeavyBall | Acceleration::None => {
                let alpha = if cfg.acceleration == Acceleration::HeavyBall { cfg.momentum } else { 0.0 };
                accelerate_heavyball(&x, &x_pre, &-reflect(&g, &basis.v), dt, alpha)
            }
        };
        x_pre = std::mem::replace(&mut x, next);
        g_pre = g;
        let (updated, at_least_k) =
            if k > 0 { update_subspace(step_op, &x, &basis, &cfg.eigen)? } else { (basis, true) };
        basis = updated;
        g = spec.force(&x);
        let gnorm = g.norm();
        if cfg.verbose && j % cfg.report_interval == 0 {
            note(format!("Iteration: {j}|| Norm of gradient: {gnorm:.6}"), false);
        }
        if cfg.save_trajectory {
            points.push(x.clone());
        }
        if !x.iter().all(|v| v.is_finite()) || (&x - &center).norm() > cfg.search_area {
            hvp_loop = counter.hvp_evals() - hvp_start;
            note(
                "[WARNING] Iteration diverged: Search point exceeds feasible region. Skipping to next search.".into(),
                true,
            );
            gnorm_history.push(gnorm);
            return Ok(failed(
                SearchStatus::Diverged,
                x,
                j,
                gnorm_history,
                steps,
                points,
                cfg,
                hvp_loop,
                &counter,
                force_start,
                bounds,
                basis,
                messages,
            ));
        }
        for (b, &v) in bounds.iter_mut().zip(x.iter()) {
            b.0 = b.0.min(v);
            b.1 = b.1.max(v);
        }
        let prev = *gnorm_history.last().unwrap();
        gnorm_history.push(gnorm);
        if gnorm < cfg.tolerance {
            if at_least_k {
                stopped = true;
                break;
            }
            if (j == 1 || prev >= cfg.tolerance) && check_index_k(check_op, &x, k, cfg.eigen.precision_tol) {
                stopped = true;
                break;
            }
        }
        if cfg.acceleration == Acceleration::Nesterov {
            nesterov.end_iteration(j);
        }
    }
    hvp_loop += counter.hvp_evals() - hvp_start;

    let report = find_index(check_op, &x, cfg.eigen.precision_tol);
    if !stopped && j == cfg.max_iter {
        let last = *gnorm_history.last().unwrap();
        if last >= cfg.tolerance || report.neg + report.zero < k {
            note(
                "[WARNING] Iteration not converged: Maximum iterations reached without convergence. Skipping to next search."
                    .into(),
                true,
            );
            return Ok(failed(
                SearchStatus::MaxIterNoConvergence,
                x,
                j,
                gnorm_history,
                steps,
                points,
                cfg,
                hvp_loop,
                &counter,
                force_start,
                bounds,
                basis,
                messages,
            ));
        }
        note(
            "[Note] Due to eigenvalue approximation inaccuracies during iterations, the search trajectory may reach a qualifying saddle point without triggering a report."
                .into(),
            false,
        );
    }
    if report.zero != 0 {
        note(
            format!(
                "[WARNING] Degenerate saddle point detected under precision tol={}: Hessian matrix may contain zero eigenvalue(s).",
                cfg.eigen.precision_tol
            ),
            true,
        );
        note(
            format!("Eigenvalue spectrum: negative={}, zero={}, positive={}. ", report.neg, report.zero, report.pos),
            true,
        );
    } else {
        note(
            format!(
                "Non-degenerate saddle point identified: Morse index ={} (number of negative eigenvalues).",
                report.neg
            ),
            false,
        );
    }
    let trajectory = cfg.save_trajectory.then(|| Trajectory { points, times: cumsum(&steps) });
    Ok(SearchOutcome {
        status: SearchStatus::Converged,
        x_final: x,
        morse_index: report.neg,
        degenerate: report.zero != 0,
        iterations: j,
        trajectory,
        cumulative_steps: cumsum(&steps),
        gnorm_history,
        hvp_evals: hvp_loop,
        force_evals: counter.force_evals() - force_start,
        bounds,
        basis,
        index_report: Some(report),
        messages,
    })
}

fn cumsum(steps: &[f64]) -> Vec<f64> {
    steps
        .iter()
        .scan(0.0, |acc, &s| {
            *acc += s;
            Some(*acc)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn failed(
    status: SearchStatus,
    x: DVector<f64>,
    iterations: usize,
    gnorm_history: Vec<f64>,
    steps: Vec<f64>,
    points: Vec<DVector<f64>>,
    cfg: &SearchConfig,
    hvp_evals: u64,
    counter: &crate::system::EvalCounter,
    force_start: u64,
    bounds: Vec<(f64, f64)>,
    basis: SubspaceBasis,
    messages: Vec<String>,
) -> SearchOutcome {
    let trajectory = cfg.save_trajectory.then(|| Trajectory { points, times: cumsum(&steps) });
    SearchOutcome {
        status,
        x_final: x,
        morse_index: 0,
        degenerate: false,
        index_report: None,
        iterations,
        trajectory,
        cumulative_steps: cumsum(&steps),
        gnorm_history,
        hvp_evals,
        force_evals: counter.force_evals() - force_start,
        bounds,
        basis,
        messages,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse_expression, CompiledVectorFn};
    use crate::system::{build_from_energy, build_from_force, EnergySource, SystemOptions};

    fn energy_spec(src: &str, dim: usize) -> SystemSpec {
        let e = parse_expression(src, dim).unwrap();
        build_from_energy(EnergySource::Symbolic(e), dim, &SystemOptions::default()).unwrap()
    }

    fn v(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    #[test]
    fn bb2_cases() {
        assert_eq!(bb2_step(&v(&[1.0, 0.0]), &v(&[2.0, 0.0]), &v(&[1e-6, 0.0]), 0.5, 0.01), 0.5);
        assert!((bb2_step(&v(&[1.0, 0.0]), &v(&[-2.0, 0.0]), &v(&[10.0, 0.0]), 0.5, 0.01) - 0.05).abs() < 1e-15);
        assert_eq!(bb2_step(&v(&[1.0, 0.0]), &v(&[0.0, 3.0]), &v(&[1.0, 0.0]), 0.5, 0.01), 0.01);
        assert_eq!(bb2_step(&v(&[1.0, 0.0]), &v(&[0.0, 0.0]), &v(&[1.0, 0.0]), 0.5, 0.01), 0.01);
    }

    #[test]
    fn heavyball_special_cases() {
        let x = v(&[1.0, 2.0]);
        let prev = v(&[0.5, 1.0]);
        let r = v(&[-1.0, 0.5]);
        assert_eq!(accelerate_heavyball(&x, &prev, &r, 0.1, 0.0), &x + &r * 0.1);
        assert_eq!(accelerate_heavyball(&x, &x, &r, 0.1, 0.8), &x + &r * 0.1);
    }

    #[test]
    fn nesterov_schedules() {
        let mut s = NesterovSchedule::new(NesterovChoice::Schedule1, None);
        assert_eq!(s.gamma(1), 0.25);

        let mut s = NesterovSchedule::new(NesterovChoice::Schedule1, Some(200));
        for j in 1..200 {
            s.gamma(j);
            s.end_iteration(j);
        }
        assert_eq!(s.gamma(200), 200.0 / 203.0);
        s.end_iteration(200);
        assert_eq!(s.gamma(201), 0.25);

        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut s = NesterovSchedule::new(NesterovChoice::Schedule2, None);
        let t2 = theta_next(phi);
        assert!((s.gamma(1) - (phi - 1.0) / t2).abs() < 1e-15);
    }

    #[test]
    fn reflection_flips_unstable_component() {
        let g = v(&[-0.3, 0.4]);
        let vm = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let r = -reflect(&g, &vm);
        assert!((r[0] - (-0.3)).abs() < 1e-12);
        assert!((r[1] - (-0.4)).abs() < 1e-12);
    }

    #[test]
    fn quadratic_saddle_search() {
        let spec = energy_spec("0.5*(-x1**2 + x2**2)", 2);
        let cfg = SearchConfig { saddle_index: 1, time_step: 0.1, ..SearchConfig::default() };
        let v0 = SubspaceBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let out = hisd_search(&spec, &cfg, &v(&[0.3, 0.4]), &v0).unwrap();
        assert!(out.converged());
        assert!(out.x_final.norm() < 1e-5);
        assert_eq!(out.morse_index, 1);
        assert_eq!(out.trajectory.as_ref().unwrap().len(), out.iterations + 1);
        assert!(out.gnorm_history.last().unwrap() < &1e-6);
    }

    #[test]
    fn stationary_point_is_fixed() {
        let spec = energy_spec("0.5*(-x1**2 + 3*x2**2)", 2);
        let cfg = SearchConfig { saddle_index: 1, max_iter: 1, tolerance: 1e-300, ..SearchConfig::default() };
        let v0 = SubspaceBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        let out = hisd_search(&spec, &cfg, &v(&[0.0, 0.0]), &v0).unwrap();
        assert_eq!(out.x_final, v(&[0.0, 0.0]));
    }

    #[test]
    fn constant_field_diverges() {
        let f = CompiledVectorFn::from_fn(2, |_, out| {
            out[0] = 1.0;
            out[1] = 0.0;
        });
        let spec = build_from_force(f, 2, Some(true), &SystemOptions::default()).unwrap();
        let cfg = SearchConfig { search_area: 0.1, ..SearchConfig::default() };
        let out = sd_search(&spec, &cfg, &v(&[0.0, 0.0])).unwrap();
        assert_eq!(out.status, SearchStatus::Diverged);
    }

    #[test]
    fn descent_uses_no_hvps() {
        let spec = energy_spec("x1**2+x2**2", 2);
        let cfg = SearchConfig { time_step: 0.1, ..SearchConfig::default() };
        let out = sd_search(&spec, &cfg, &v(&[1.0, 1.0])).unwrap();
        assert!(out.converged());
        assert!(out.iterations <= 200);
        assert!(out.x_final.norm() < 1e-6);
        assert_eq!(out.hvp_evals, 0);
        assert_eq!(out.morse_index, 0);
    }

    #[test]
    fn max_iter_reports_failure() {
        let spec = energy_spec("x1**2", 1);
        let cfg = SearchConfig { time_step: 1e-4, max_iter: 5, ..SearchConfig::default() };
        let out = sd_search(&spec, &cfg, &v(&[1.0])).unwrap();
        assert_eq!(out.status, SearchStatus::MaxIterNoConvergence);
        assert!(out.index_report.is_none());
    }

    #[test]
    fn verbose_report_format() {
        let spec = energy_spec("x1**2", 1);
        let cfg = SearchConfig { time_step: 0.1, verbose: true, report_interval: 2, ..SearchConfig::default() };
        let out = sd_search(&spec, &cfg, &v(&[1.0])).unwrap();
        assert_eq!(out.messages[0], format!("Iteration: 2|| Norm of gradient: {:.6}", 2.0 * 0.64));
    }

    #[test]
    fn bb_steps_respect_cap() {
        let spec = energy_spec("x1**4 + 3*x2**2", 2);
        let cfg = SearchConfig { bb_step: true, time_step: 0.01, ..SearchConfig::default() };
        let out = sd_search(&spec, &cfg, &v(&[1.0, 1.0])).unwrap();
        let t = &out.cumulative_steps;
        for i in 1..t.len() {
            let dt = t[i] - t[i - 1];
            assert!(dt >= 0.0);
            assert!(dt * out.gnorm_history[i - 1] <= 0.5 + 1e-12);
        }
    }

    #[test]
    fn lobpcg_on_non_gradient_is_rejected() {
        let f = crate::system::linear_field(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        let spec = build_from_force(f, 2, Some(false), &SystemOptions::default()).unwrap();
        let mut cfg = SearchConfig { saddle_index: 1, ..SearchConfig::default() };
        cfg.eigen.method = Some(EigenMethod::Lobpcg);
        let v0 = SubspaceBasis::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]));
        assert!(matches!(hisd_search(&spec, &cfg, &v(&[0.1, 0.1]), &v0), Err(Error::NonSymmetricOperator)));
    }
}
