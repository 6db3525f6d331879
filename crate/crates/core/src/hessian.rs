//! Hessian-role operators: dimer finite differences of `G`, exact symbolic
//! second derivatives, or a fixed dense matrix.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::expr::{compile_flat, Expr, VectorClosure};
use crate::system::SystemSpec;
use crate::{Error, Result};

/// Above this dimension dense reconstruction is reported as expensive.
pub const DENSE_WARN_DIM: usize = 2000;

/// Linear action of `∂G/∂x` at a point.
pub trait HessianAction {
    fn dim(&self) -> usize;

    fn is_symmetric(&self) -> bool;

    fn apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;

    fn apply_block(&self, x: &DVector<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(v.nrows(), v.ncols());
        for (j, col) in v.column_iter().enumerate() {
            out.set_column(j, &self.apply(x, &col.into_owned()));
        }
        out
    }

    /// Column-by-column reconstruction of the full matrix.
    fn dense(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let d = self.dim();
        if d > DENSE_WARN_DIM {
            log::warn!("dense Hessian reconstruction in dimension {d} is expensive");
        }
        self.apply_block(x, &DMatrix::identity(d, d))
    }
}

/// Matrix-valued compiled function, used for symbolic Hessians and Jacobians.
#[derive(Clone)]
pub struct CompiledMatrixFn {
    rows: usize,
    cols: usize,
    f: Arc<VectorClosure>,
}

impl CompiledMatrixFn {
    pub fn compile(entries: &[Vec<Expr>]) -> Self {
        let rows = entries.len();
        let cols = entries.first().map(Vec::len).unwrap_or(0);
        // column-major, matching nalgebra storage
        let flat: Vec<Expr> = (0..cols).flat_map(|j| entries.iter().map(move |row| row[j].clone())).collect();
        CompiledMatrixFn { rows, cols, f: compile_flat(&flat) }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        (self.f)(x.as_slice(), m.as_mut_slice());
        m
    }
}

impl fmt::Debug for CompiledMatrixFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CompiledMatrixFn").field("rows", &self.rows).field("cols", &self.cols).finish_non_exhaustive()
    }
}

/// Symbolic second partials `∂²E/∂x_i∂x_j`.
pub fn symbolic_hessian(energy: &Expr) -> Vec<Vec<Expr>> {
    let grad: Vec<Expr> = (1..=energy.dim()).map(|i| energy.differentiate(i)).collect();
    jacobian_exprs(&grad)
}

/// Symbolic Jacobian `∂G_i/∂x_j` of a component list.
pub fn jacobian_exprs(components: &[Expr]) -> Vec<Vec<Expr>> {
    components.iter().map(|g| (1..=g.dim()).map(|j| g.differentiate(j)).collect()).collect()
}

#[derive(Debug, Clone)]
enum Mode {
    Dimer(f64),
    Exact(Arc<CompiledMatrixFn>),
}

/// Hessian operator bound to a system.
#[derive(Debug, Clone)]
pub struct HessianOperator<'a> {
    spec: &'a SystemSpec,
    mode: Mode,
}

impl<'a> HessianOperator<'a> {
    /// Dimer operator with the system's own dimer length.
    pub fn dimer(spec: &'a SystemSpec) -> Self {
        Self::dimer_with_length(spec, spec.dimer_length())
    }

    pub fn dimer_with_length(spec: &'a SystemSpec, length: f64) -> Self {
        assert!(length > 0.0, "dimer length must be positive");
        HessianOperator { spec, mode: Mode::Dimer(length) }
    }

    /// Operator using symbolic second derivatives.
    pub fn exact(spec: &'a SystemSpec) -> Result<Self> {
        let m = spec
            .exact_hessian()
            .ok_or_else(|| Error::Config("exact Hessian requested but the system has no symbolic form".into()))?;
        Ok(HessianOperator { spec, mode: Mode::Exact(m) })
    }

    pub fn system(&self) -> &SystemSpec {
        self.spec
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.mode, Mode::Exact(_))
    }
}

impl HessianAction for HessianOperator<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn is_symmetric(&self) -> bool {
        self.spec.is_gradient()
    }

    fn apply(&self, x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        self.spec.counter().add_hvp(1);
        match &self.mode {
            Mode::Dimer(l) => {
                let plus = self.spec.force_uncounted(&(x + v * *l));
                let minus = self.spec.force_uncounted(&(x - v * *l));
                self.spec.counter().add_force(2);
                (plus - minus) / (2.0 * l)
            }
            Mode::Exact(m) => m.eval(x) * v,
        }
    }

    fn apply_block(&self, x: &DVector<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        match &self.mode {
            Mode::Exact(m) => {
                self.spec.counter().add_hvp(v.ncols() as u64);
                m.eval(x) * v
            }
            Mode::Dimer(_) => {
                let mut out = DMatrix::zeros(v.nrows(), v.ncols());
                for (j, col) in v.column_iter().enumerate() {
                    out.set_column(j, &self.apply(x, &col.into_owned()));
                }
                out
            }
        }
    }

    fn dense(&self, x: &DVector<f64>) -> DMatrix<f64> {
        match &self.mode {
            Mode::Exact(m) => m.eval(x),
            Mode::Dimer(_) => {
                let d = self.dim();
                if d > DENSE_WARN_DIM {
                    log::warn!("dense Hessian reconstruction in dimension {d} is expensive");
                }
                self.apply_block(x, &DMatrix::identity(d, d))
            }
        }
    }
}

/// A fixed matrix acting as the Hessian everywhere.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: DMatrix<f64>,
    symmetric: bool,
}

impl DenseOperator {
    pub fn new(matrix: DMatrix<f64>) -> Self {
        assert!(matrix.is_square(), "operator matrix must be square");
        let symmetric = (&matrix - matrix.transpose()).amax() <= 1e-12 * matrix.amax().max(1.0);
        DenseOperator { matrix, symmetric }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

impl HessianAction for DenseOperator {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn apply(&self, _x: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }

    fn apply_block(&self, _x: &DVector<f64>, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.matrix * v
    }

    fn dense(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// Dimer product `(G(x + l v) - G(x - l v)) / 2l`.
pub fn hvp(spec: &SystemSpec, x: &DVector<f64>, v: &DVector<f64>, length: f64) -> DVector<f64> {
    HessianOperator::dimer_with_length(spec, length).apply(x, v)
}

/// Dimer products for each column of `v`; increments the HVP counter by the
/// number of columns.
pub fn batch_hvp(spec: &SystemSpec, x: &DVector<f64>, v: &DMatrix<f64>, length: f64) -> DMatrix<f64> {
    HessianOperator::dimer_with_length(spec, length).apply_block(x, v)
}

/// Dense reconstruction through `d` dimer products.
pub fn dense_hessian(spec: &SystemSpec, x: &DVector<f64>, length: f64) -> DMatrix<f64> {
    HessianOperator::dimer_with_length(spec, length).dense(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse_expression;
    use crate::system::{build_from_energy, build_from_force, linear_field, EnergySource, SystemOptions};

    const BUTTERFLY: &str = "x1**4 -1.5*x1**2*x2**2+ x2**4 - 2*x2**3 + x2**2 + x1**2*x2 - 2*x1**2";

    fn energy_spec(src: &str, dim: usize) -> SystemSpec {
        let e = parse_expression(src, dim).unwrap();
        build_from_energy(EnergySource::Symbolic(e), dim, &SystemOptions::default()).unwrap()
    }

    #[test]
    fn quadratic_hvp() {
        let spec = energy_spec("x1**2", 1);
        let v = hvp(&spec, &DVector::from_vec(vec![0.3]), &DVector::from_vec(vec![1.0]), 1e-5);
        assert!((v[0] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn linear_field_hvp_and_dense() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 0.0, 2.0]);
        let spec = build_from_force(linear_field(a.clone()), 2, Some(false), &SystemOptions::default()).unwrap();
        let x = DVector::from_vec(vec![0.7, -0.2]);
        let v = hvp(&spec, &x, &DVector::from_vec(vec![0.0, 1.0]), 1e-5);
        assert!((v - DVector::from_vec(vec![1.0, 2.0])).amax() < 1e-9);
        let m = dense_hessian(&spec, &x, 1e-5);
        assert!((m - a).amax() < 1e-9);
    }

    #[test]
    fn butterfly_origin_dense() {
        let spec = energy_spec(BUTTERFLY, 2);
        let m = dense_hessian(&spec, &DVector::zeros(2), 1e-5);
        let expected = DMatrix::from_row_slice(2, 2, &[-4.0, 0.0, 0.0, 2.0]);
        assert!((m - expected).amax() < 1e-6);
    }

    #[test]
    fn counters() {
        let spec = energy_spec(BUTTERFLY, 2);
        let x = DVector::from_vec(vec![0.1, 0.2]);
        let before = spec.counter().hvp_evals();
        batch_hvp(&spec, &x, &DMatrix::identity(2, 2), 1e-5);
        assert_eq!(spec.counter().hvp_evals(), before + 2);
        let f = spec.counter().force_evals();
        hvp(&spec, &x, &DVector::from_vec(vec![1.0, 0.0]), 1e-5);
        assert_eq!(spec.counter().force_evals(), f + 2);
    }

    #[test]
    fn exact_matches_dimer() {
        let spec = energy_spec(BUTTERFLY, 2);
        let x = DVector::from_vec(vec![0.4, -0.3]);
        let exact = HessianOperator::exact(&spec).unwrap().dense(&x);
        let dimer = dense_hessian(&spec, &x, 1e-5);
        assert!((&exact - dimer).amax() < 1e-6);
        assert!((&exact - exact.transpose()).amax() < 1e-12);
    }

    #[test]
    fn exact_requires_symbolic_form() {
        let spec =
            build_from_force(linear_field(DMatrix::identity(2, 2)), 2, Some(true), &SystemOptions::default()).unwrap();
        assert!(HessianOperator::exact(&spec).is_err());
    }
}
