//! System definitions normalized to a single field `G`.
//!
//! For a gradient system `G = ∇E`. For a general autonomous system
//! `ẋ = F(x)` the caller supplies `G = -F`, so downstream code always treats
//! `-G` as the descent direction and `∂G/∂x` as the Hessian-role operator.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::expr::{compile_components, compile_gradient, compile_scalar};
use crate::expr::{CompiledScalarFn, CompiledVectorFn, Expr};
use crate::hessian::{jacobian_exprs, symbolic_hessian, CompiledMatrixFn};
use crate::{Error, Result};

/// Force and Hessian-vector evaluation counts.
#[derive(Debug, Default)]
pub struct EvalCounter {
    force_evals: AtomicU64,
    hvp_evals: AtomicU64,
}

impl EvalCounter {
    pub fn force_evals(&self) -> u64 {
        self.force_evals.load(Ordering::Relaxed)
    }

    pub fn hvp_evals(&self) -> u64 {
        self.hvp_evals.load(Ordering::Relaxed)
    }

    pub(crate) fn add_force(&self, n: u64) {
        self.force_evals.fetch_add(n, Ordering::Relaxed);
    }

    pub(crate) fn add_hvp(&self, n: u64) {
        self.hvp_evals.fetch_add(n, Ordering::Relaxed);
    }
}

/// Settings for the Jacobian symmetry probe.
#[derive(Debug, Clone)]
pub struct ProbeOptions {
    pub samples: usize,
    pub tol: f64,
    /// Center of the `[-1, 1]^d` sampling box; the origin when absent.
    pub center: Option<DVector<f64>>,
    pub seed: u64,
    pub dimer_length: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions { samples: 10, tol: 1e-6, center: None, seed: 1121, dimer_length: 1e-5 }
    }
}

#[derive(Debug, Clone)]
pub struct SystemOptions {
    pub dimer_length: f64,
    /// Replace the symbolic gradient by central differences of the energy.
    pub numerical_grad: bool,
    pub numerical_step: f64,
    /// Run the symmetry probe even when the gradient character is claimed.
    pub symmetry_check: bool,
    pub probe: ProbeOptions,
}

impl Default for SystemOptions {
    fn default() -> Self {
        SystemOptions {
            dimer_length: 1e-5,
            numerical_grad: false,
            numerical_step: 1e-6,
            symmetry_check: true,
            probe: ProbeOptions::default(),
        }
    }
}

/// Energy input accepted by [`SystemSpec::from_energy`].
#[derive(Debug, Clone)]
pub enum EnergySource {
    Symbolic(Expr),
    Compiled(CompiledScalarFn),
}

/// A dynamical system in the normalized sign convention.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    dim: usize,
    force: CompiledVectorFn,
    energy: Option<CompiledScalarFn>,
    is_gradient: bool,
    dimer_length: f64,
    energy_expr: Option<Expr>,
    force_exprs: Option<Vec<Expr>>,
    exact: Arc<OnceLock<Option<Arc<CompiledMatrixFn>>>>,
    counter: Arc<EvalCounter>,
    warnings: Vec<String>,
}

impl SystemSpec {
    pub fn from_energy(source: EnergySource, dim: usize, options: &SystemOptions) -> Result<Self> {
        build_from_energy(source, dim, options)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_gradient(&self) -> bool {
        self.is_gradient
    }

    pub fn dimer_length(&self) -> f64 {
        self.dimer_length
    }

    pub fn has_energy(&self) -> bool {
        self.energy.is_some()
    }

    pub fn energy_expr(&self) -> Option<&Expr> {
        self.energy_expr.as_ref()
    }

    pub fn counter(&self) -> &Arc<EvalCounter> {
        &self.counter
    }

    /// Replaces the evaluation counter, e.g. to give a search a private one.
    pub fn with_counter(mut self, counter: Arc<EvalCounter>) -> Self {
        self.counter = counter;
        self
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Evaluates the normalized field `G(x)`.
    pub fn force(&self, x: &DVector<f64>) -> DVector<f64> {
        self.counter.add_force(1);
        self.force.eval(x)
    }

    pub(crate) fn force_uncounted(&self, x: &DVector<f64>) -> DVector<f64> {
        self.force.eval(x)
    }

    pub fn energy(&self, x: &DVector<f64>) -> Option<f64> {
        self.energy.as_ref().map(|e| e.eval(x))
    }

    pub fn energy_fn(&self) -> Option<&CompiledScalarFn> {
        self.energy.as_ref()
    }

    pub fn force_fn(&self) -> &CompiledVectorFn {
        &self.force
    }

    /// Symbolic Hessian (or Jacobian of `G`), compiled on first use. `None`
    /// when the system was not given in symbolic form.
    pub fn exact_hessian(&self) -> Option<Arc<CompiledMatrixFn>> {
        self.exact
            .get_or_init(|| {
                if let Some(e) = &self.energy_expr {
                    return Some(Arc::new(CompiledMatrixFn::compile(&symbolic_hessian(e))));
                }
                self.force_exprs.as_ref().map(|f| Arc::new(CompiledMatrixFn::compile(&jacobian_exprs(f))))
            })
            .clone()
    }
}

/// Builds a gradient system from an energy. `G = ∇E`, computed symbolically
/// for expressions (unless `numerical_grad` is set) and by central
/// differences for compiled energies.
pub fn build_from_energy(source: EnergySource, dim: usize, options: &SystemOptions) -> Result<SystemSpec> {
    if dim == 0 {
        return Err(Error::Config("dimension must be at least 1".into()));
    }
    check_dimer(options.dimer_length)?;
    let (energy, energy_expr) = match source {
        EnergySource::Symbolic(e) => {
            if e.dim() != dim || e.max_var() > dim {
                return Err(Error::DimensionMismatch { expected: dim, found: e.dim().max(e.max_var()) });
            }
            (compile_scalar(&e), Some(e))
        }
        EnergySource::Compiled(f) => {
            if f.dim() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: f.dim() });
            }
            (f, None)
        }
    };
    let force = match (&energy_expr, options.numerical_grad) {
        (Some(e), false) => compile_gradient(e),
        _ => {
            let energy = energy.clone();
            let h = options.numerical_step;
            CompiledVectorFn::from_fn(dim, move |x, out| {
                let g = numerical_gradient(&energy, &DVector::from_column_slice(x), h);
                out.copy_from_slice(g.as_slice());
            })
        }
    };
    let mut warnings = Vec::new();
    if let Some(msg) = verify_gradient(&energy, &force, options) {
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(SystemSpec {
        dim,
        force,
        energy: Some(energy),
        is_gradient: true,
        dimer_length: options.dimer_length,
        energy_expr,
        force_exprs: None,
        exact: Arc::new(OnceLock::new()),
        counter: Arc::new(EvalCounter::default()),
        warnings,
    })
}

/// Builds a system from a user-supplied normalized field `G` (that is, `∇E`
/// for gradient systems and `-F` otherwise).
///
/// With no claim the symmetry probe decides the gradient character. A claim
/// that contradicts the probe is honored and recorded as a warning.
pub fn build_from_force(
    force: CompiledVectorFn,
    dim: usize,
    claimed_gradient: Option<bool>,
    options: &SystemOptions,
) -> Result<SystemSpec> {
    build_force_system(force, None, dim, claimed_gradient, options)
}

/// Like [`build_from_force`] with the components of `G` given symbolically,
/// which makes the exact Jacobian available.
pub fn build_from_force_exprs(
    components: Vec<Expr>,
    claimed_gradient: Option<bool>,
    options: &SystemOptions,
) -> Result<SystemSpec> {
    let dim = components.len();
    if let Some(bad) = components.iter().find(|e| e.dim() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: bad.dim() });
    }
    let force = compile_components(&components);
    build_force_system(force, Some(components), dim, claimed_gradient, options)
}

fn build_force_system(
    force: CompiledVectorFn,
    force_exprs: Option<Vec<Expr>>,
    dim: usize,
    claimed_gradient: Option<bool>,
    options: &SystemOptions,
) -> Result<SystemSpec> {
    if dim == 0 {
        return Err(Error::Config("dimension must be at least 1".into()));
    }
    if force.dim() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: force.dim() });
    }
    check_dimer(options.dimer_length)?;
    let mut warnings = Vec::new();
    let is_gradient = match claimed_gradient {
        None => symmetry_probe(&force, &options.probe),
        Some(claim) if options.symmetry_check => {
            let probed = symmetry_probe(&force, &options.probe);
            if probed != claim {
                let msg = format!(
                    "symmetry probe classifies the system as {}, but it was declared {}; keeping the declaration",
                    if probed { "gradient" } else { "non-gradient" },
                    if claim { "gradient" } else { "non-gradient" },
                );
                log::warn!("{msg}");
                warnings.push(msg);
            }
            claim
        }
        Some(claim) => claim,
    };
    if is_gradient {
        log::info!("Gradient system detected. Activating HiSD algorithm.");
    } else {
        log::info!("Non-gradient system detected. Activating GHiSD algorithm.");
    }
    Ok(SystemSpec {
        dim,
        force,
        energy: None,
        is_gradient,
        dimer_length: options.dimer_length,
        energy_expr: None,
        force_exprs,
        exact: Arc::new(OnceLock::new()),
        counter: Arc::new(EvalCounter::default()),
        warnings,
    })
}

fn check_dimer(l: f64) -> Result<()> {
    if !(l > 0.0 && l.is_finite()) {
        return Err(Error::Config(format!("dimer length must be positive, got {l}")));
    }
    Ok(())
}

/// Central-difference gradient `(E(x + h e_i) - E(x - h e_i)) / 2h`.
pub fn numerical_gradient(energy: &CompiledScalarFn, x: &DVector<f64>, h: f64) -> DVector<f64> {
    assert!(h > 0.0, "difference step must be positive");
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        let xi = x[i];
        probe[i] = xi + h;
        let plus = energy.eval(&probe);
        probe[i] = xi - h;
        let minus = energy.eval(&probe);
        probe[i] = xi;
        (plus - minus) / (2.0 * h)
    })
}

/// Tests `<u, J v> = <v, J u>` at random points and directions, using dimer
/// products for `J v`. Deterministic for a fixed seed.
pub fn symmetry_probe(force: &CompiledVectorFn, options: &ProbeOptions) -> bool {
    let dim = force.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let center = options.center.clone().unwrap_or_else(|| DVector::zeros(dim));
    let l = options.dimer_length;
    let jv = |x: &DVector<f64>, v: &DVector<f64>| (force.eval(&(x + v * l)) - force.eval(&(x - v * l))) / (2.0 * l);
    let mut worst: f64 = 0.0;
    for _ in 0..options.samples {
        let x = &center + DVector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0));
        let u = random_unit(&mut rng, dim);
        let v = random_unit(&mut rng, dim);
        let a = u.dot(&jv(&x, &v));
        let b = v.dot(&jv(&x, &u));
        let rel = (a - b).abs() / 1f64.max(a.abs()).max(b.abs());
        if !rel.is_finite() {
            return false;
        }
        worst = worst.max(rel);
    }
    worst <= options.tol
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal));
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

fn verify_gradient(energy: &CompiledScalarFn, force: &CompiledVectorFn, options: &SystemOptions) -> Option<String> {
    let dim = energy.dim();
    if dim > 512 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(options.probe.seed ^ 0x5eed);
    let center = options.probe.center.clone().unwrap_or_else(|| DVector::zeros(dim));
    for _ in 0..3 {
        let x = &center + DVector::from_fn(dim, |_, _| rng.random_range(-1.0..=1.0));
        let g = force.eval(&x);
        let fd = numerical_gradient(energy, &x, 1e-6);
        let scale = 1f64.max(g.amax());
        if !g.iter().all(|v| v.is_finite()) || !fd.iter().all(|v| v.is_finite()) {
            continue;
        }
        if (g - &fd).amax() > 1e-4 * scale {
            return Some("supplied gradient disagrees with finite differences of the energy".into());
        }
    }
    None
}

/// Dense `d x d` matrix helper used by tests and plugins.
pub fn linear_field(matrix: DMatrix<f64>) -> CompiledVectorFn {
    let dim = matrix.nrows();
    assert_eq!(dim, matrix.ncols(), "linear field needs a square matrix");
    CompiledVectorFn::from_fn(dim, move |x, out| {
        let y = &matrix * DVector::from_column_slice(x);
        out.copy_from_slice(y.as_slice());
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;

    const BUTTERFLY: &str = "x1**4 -1.5*x1**2*x2**2+ x2**4 - 2*x2**3 + x2**2 + x1**2*x2 - 2*x1**2";

    fn energy(src: &str, dim: usize) -> EnergySource {
        EnergySource::Symbolic(parse_expression(src, dim).unwrap())
    }

    #[test]
    fn energy_system_uses_symbolic_gradient() {
        let spec = build_from_energy(energy(BUTTERFLY, 2), 2, &SystemOptions::default()).unwrap();
        assert!(spec.is_gradient());
        let x = DVector::from_vec(vec![0.1, 0.1]);
        let expected = compile_gradient(&parse_expression(BUTTERFLY, 2).unwrap()).eval(&x);
        assert_eq!(spec.force(&x), expected);

        let sq = build_from_energy(energy("x1**2", 1), 1, &SystemOptions::default()).unwrap();
        assert_eq!(sq.force(&DVector::from_vec(vec![3.0]))[0], 6.0);
    }

    #[test]
    fn energy_dimension_mismatch() {
        let e = parse_expression("x1 + x4", 4).unwrap();
        let err = build_from_energy(EnergySource::Symbolic(e), 3, &SystemOptions::default()).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { expected: 3, found: 4 }));
    }

    #[test]
    fn numerical_gradient_cases() {
        let sq = compile_scalar(&parse_expression("x1**2", 1).unwrap());
        let g = numerical_gradient(&sq, &DVector::from_vec(vec![3.0]), 1e-4);
        assert!((g[0] - 6.0).abs() < 1e-9);

        let c = compile_scalar(&parse_expression("7", 2).unwrap());
        assert_eq!(numerical_gradient(&c, &DVector::from_vec(vec![0.3, 0.2]), 1e-3), DVector::zeros(2));

        let e = parse_expression(BUTTERFLY, 2).unwrap();
        let x = DVector::from_vec(vec![0.5, 0.5]);
        let fd = numerical_gradient(&compile_scalar(&e), &x, 1e-5);
        let exact = compile_gradient(&e).eval(&x);
        assert!((fd - &exact).norm() / exact.norm() < 1e-6);
    }

    #[test]
    fn probe_classifies_fields() {
        let opts = SystemOptions::default();
        let sym = build_from_force(linear_field(DMatrix::from_row_slice(1, 1, &[2.0])), 1, None, &opts).unwrap();
        assert!(sym.is_gradient());

        let rot = linear_field(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        let spec = build_from_force(rot, 2, None, &opts).unwrap();
        assert!(!spec.is_gradient());

        let probe = ProbeOptions { tol: 1e-3, ..ProbeOptions::default() };
        let shear = linear_field(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]));
        assert!(!symmetry_probe(&shear, &probe));

        let bowl = compile_gradient(&parse_expression("x1**2+x2**2", 2).unwrap());
        assert!(symmetry_probe(&bowl, &ProbeOptions { tol: 1e-8, ..ProbeOptions::default() }));
    }

    #[test]
    fn probe_is_deterministic() {
        let e = compile_gradient(&parse_expression(BUTTERFLY, 2).unwrap());
        let p = ProbeOptions { tol: 1e-9, ..ProbeOptions::default() };
        let a = symmetry_probe(&e, &p);
        for _ in 0..3 {
            assert_eq!(symmetry_probe(&e, &p), a);
        }
    }

    #[test]
    fn contradicting_claim_is_kept_with_warning() {
        let rot = linear_field(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]));
        let spec = build_from_force(rot.clone(), 2, Some(true), &SystemOptions::default()).unwrap();
        assert!(spec.is_gradient());
        assert_eq!(spec.warnings().len(), 1);

        let unchecked = SystemOptions { symmetry_check: false, ..SystemOptions::default() };
        let spec = build_from_force(rot, 2, Some(true), &unchecked).unwrap();
        assert!(spec.is_gradient());
        assert!(spec.warnings().is_empty());
    }

    #[test]
    fn counter_tracks_force_evaluations() {
        let spec = build_from_energy(energy("x1**2", 1), 1, &SystemOptions::default()).unwrap();
        let before = spec.counter().force_evals();
        let x = DVector::from_vec(vec![1.0]);
        for n in 1..=5 {
            spec.force(&x);
            assert_eq!(spec.counter().force_evals(), before + n);
        }
    }
}
