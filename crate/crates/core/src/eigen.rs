//! Maintenance of the unstable subspace and index verification.
//!
//! All spectra here are of the Hessian-role operator `∂G/∂x`, so a negative
//! eigenvalue always marks an unstable direction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::hessian::{HessianAction, DENSE_WARN_DIM};
use crate::system::random_unit;
use crate::{Error, Result};

const DEGENERATE_NORM: f64 = 1e-12;
const PIVOT_TOL: f64 = 1e-8;
/// Grid for rounding row-echelon entries; keeps canonical output stable
/// against last-bit noise in the input block.
const RREF_QUANTUM: f64 = 1.0 / (1u64 << 40) as f64;

/// Orthonormal basis of the tracked subspace with per-column Rayleigh values.
#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceBasis {
    pub v: DMatrix<f64>,
    pub rayleigh: DVector<f64>,
}

impl SubspaceBasis {
    pub fn new(v: DMatrix<f64>) -> Self {
        let k = v.ncols();
        SubspaceBasis { v, rayleigh: DVector::zeros(k) }
    }

    pub fn empty(dim: usize) -> Self {
        Self::new(DMatrix::zeros(dim, 0))
    }

    pub fn k(&self) -> usize {
        self.v.ncols()
    }

    pub fn dim(&self) -> usize {
        self.v.nrows()
    }

    pub fn orthonormality_error(&self) -> f64 {
        orthonormality_error(&self.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenMethod {
    Euler,
    Power,
    Lobpcg,
}

impl EigenMethod {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "euler" => Some(EigenMethod::Euler),
            "power" => Some(EigenMethod::Power),
            "lobpcg" => Some(EigenMethod::Lobpcg),
            _ => None,
        }
    }

    /// LOBPCG for gradient systems, power iteration otherwise.
    pub fn default_for(is_gradient: bool) -> Self {
        if is_gradient {
            EigenMethod::Lobpcg
        } else {
            EigenMethod::Power
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenConfig {
    /// `None` selects by system type.
    pub method: Option<EigenMethod>,
    /// Substeps for Euler/power, iterations for LOBPCG.
    pub max_iter: usize,
    pub step_size: f64,
    pub precision_tol: f64,
    pub unified: bool,
    /// LOBPCG residual tolerance, relative to `max(1, |λ|)`.
    pub lobpcg_tol: f64,
}

impl Default for EigenConfig {
    fn default() -> Self {
        EigenConfig {
            method: None,
            max_iter: 10,
            step_size: 1e-2,
            precision_tol: 1e-5,
            unified: false,
            lobpcg_tol: 1e-7,
        }
    }
}

impl EigenConfig {
    pub fn method_for(&self, is_gradient: bool) -> EigenMethod {
        self.method.unwrap_or_else(|| EigenMethod::default_for(is_gradient))
    }
}

/// Result of a full spectral classification.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexReport {
    pub neg: usize,
    pub zero: usize,
    pub pos: usize,
    /// Orthonormal basis of the unstable subspace, `d x neg`.
    pub neg_vectors: DMatrix<f64>,
    /// Real parts of all eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
}

impl IndexReport {
    pub fn is_degenerate(&self) -> bool {
        self.zero > 0
    }
}

pub fn orthonormality_error(v: &DMatrix<f64>) -> f64 {
    let k = v.ncols();
    if k == 0 {
        return 0.0;
    }
    (v.transpose() * v - DMatrix::identity(k, k)).amax()
}

/// Largest principal angle between two column spaces of equal dimension.
pub fn subspace_angle(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    assert_eq!(a.ncols(), b.ncols(), "subspaces must have the same dimension");
    if a.ncols() == 0 {
        return 0.0;
    }
    let qa = gram_schmidt(a);
    let qb = gram_schmidt(b);
    let resid = &qb - &qa * (qa.transpose() * &qb);
    let s = resid.singular_values().max();
    s.clamp(0.0, 1.0).asin()
}

/// Standard basis vector with the largest component outside `span(q[.., ..upto])`,
/// orthogonalized and normalized.
fn replacement_direction(q: &DMatrix<f64>, upto: usize) -> DVector<f64> {
    let d = q.nrows();
    let mut best = DVector::zeros(d);
    let mut best_norm = -1.0;
    for i in 0..d {
        let mut e = DVector::zeros(d);
        e[i] = 1.0;
        let r = project_out(q, upto, e);
        let n = r.norm();
        if n > best_norm + 1e-12 {
            best_norm = n;
            best = r;
        }
    }
    best / best_norm
}

fn project_out(q: &DMatrix<f64>, upto: usize, mut v: DVector<f64>) -> DVector<f64> {
    for _ in 0..2 {
        for j in 0..upto {
            let c = q.column(j).dot(&v);
            v.axpy(-c, &q.column(j), 1.0);
        }
    }
    v
}

/// Modified Gram–Schmidt over the columns in order. A column that collapses
/// is replaced by a deterministic orthogonal direction.
pub fn gram_schmidt(v: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = v.clone();
    for j in 0..q.ncols() {
        let col = project_out(&q, j, q.column(j).into_owned());
        let n = col.norm();
        if n < DEGENERATE_NORM || !n.is_finite() {
            log::warn!("subspace column {j} collapsed during orthonormalization; replacing it");
            let r = replacement_direction(&q, j);
            q.set_column(j, &r);
        } else {
            q.set_column(j, &(col / n));
        }
    }
    q
}

/// Householder QR with the sign fixed so that `R` has a nonnegative diagonal.
pub fn qr_orthonormalize(v: &DMatrix<f64>) -> DMatrix<f64> {
    let k = v.ncols();
    if k == 0 || k > v.nrows() {
        return gram_schmidt(v);
    }
    let qr = v.clone().qr();
    let r = qr.r();
    if (0..k).any(|i| r[(i, i)].abs() < DEGENERATE_NORM || !r[(i, i)].is_finite()) {
        return gram_schmidt(v);
    }
    let mut q = qr.q();
    for i in 0..k {
        if r[(i, i)] < 0.0 {
            q.column_mut(i).neg_mut();
        }
    }
    q
}

fn flag_from(rayleigh: &DVector<f64>, precision_tol: f64) -> bool {
    rayleigh.iter().all(|&r| r < precision_tol)
}

/// Explicit Euler step of the subspace dynamics, split into `substeps`
/// pieces of size `gamma / substeps`.
pub fn euler_update(
    op: &dyn HessianAction,
    x: &DVector<f64>,
    basis: &SubspaceBasis,
    gamma: f64,
    substeps: usize,
    is_gradient: bool,
    precision_tol: f64,
) -> (SubspaceBasis, bool) {
    let k = basis.k();
    if k == 0 {
        return (SubspaceBasis::empty(basis.dim()), true);
    }
    let n = substeps.max(1);
    let step = gamma / n as f64;
    let mut v = basis.v.clone();
    let mut rayleigh = DVector::zeros(k);
    for _ in 0..n {
        let u = op.apply_block(x, &v);
        let mut next = v.clone();
        for i in 0..k {
            let ui = u.column(i);
            rayleigh[i] = v.column(i).dot(&ui);
            let di = if is_gradient {
                let mut di = -ui.into_owned();
                di.axpy(rayleigh[i], &v.column(i), 1.0);
                for j in 0..i {
                    di.axpy(2.0 * v.column(j).dot(&ui), &v.column(j), 1.0);
                }
                di
            } else {
                -ui.into_owned()
            };
            let mut col = v.column(i).into_owned();
            col.axpy(step, &di, 1.0);
            next.set_column(i, &col);
        }
        v = gram_schmidt(&next);
    }
    let flag = flag_from(&rayleigh, precision_tol);
    (SubspaceBasis { v, rayleigh }, flag)
}

/// `V - γ H V` followed by QR of the full block.
pub fn power_update(
    op: &dyn HessianAction,
    x: &DVector<f64>,
    basis: &SubspaceBasis,
    gamma: f64,
    substeps: usize,
    precision_tol: f64,
) -> (SubspaceBasis, bool) {
    let k = basis.k();
    if k == 0 {
        return (SubspaceBasis::empty(basis.dim()), true);
    }
    let n = substeps.max(1);
    let step = gamma / n as f64;
    let mut v = basis.v.clone();
    let mut rayleigh = DVector::zeros(k);
    for _ in 0..n {
        let u = op.apply_block(x, &v);
        for i in 0..k {
            rayleigh[i] = v.column(i).dot(&u.column(i));
        }
        v = qr_orthonormalize(&(&v - u * step));
    }
    let flag = flag_from(&rayleigh, precision_tol);
    (SubspaceBasis { v, rayleigh }, flag)
}

fn sorted_sym_eigen(m: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(m.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

enum Lobpcg {
    Done(SubspaceBasis),
    Breakdown(SubspaceBasis),
}

fn lobpcg_run(
    op: &dyn HessianAction,
    x: &DVector<f64>,
    guess: &DMatrix<f64>,
    max_iter: usize,
    step_tol: f64,
) -> Lobpcg {
    let k = guess.ncols();
    let mut xb = gram_schmidt(guess);
    let mut ax = op.apply_block(x, &xb);
    let (lam0, c0) = sorted_sym_eigen(&(xb.transpose() * &ax));
    if lam0.iter().any(|l| !l.is_finite()) {
        return Lobpcg::Breakdown(SubspaceBasis::new(xb));
    }
    xb = &xb * &c0;
    ax = &ax * &c0;
    let mut lam = DVector::from_vec(lam0);
    let mut p: Option<DMatrix<f64>> = None;
    for _ in 0..max_iter {
        let r = &ax - &xb * DMatrix::from_diagonal(&lam);
        let scale = lam.amax().max(1.0);
        if r.column_iter().all(|c| c.norm() <= step_tol * scale) {
            break;
        }
        let mut candidates: Vec<DVector<f64>> = r.column_iter().map(|c| c.into_owned()).collect();
        if let Some(p) = &p {
            candidates.extend(p.column_iter().map(|c| c.into_owned()));
        }
        let mut extra: Vec<DVector<f64>> = Vec::new();
        for c in candidates {
            let n0 = c.norm();
            if n0 == 0.0 || !n0.is_finite() {
                continue;
            }
            let mut c = c / n0;
            for _ in 0..2 {
                for j in 0..k {
                    let t = xb.column(j).dot(&c);
                    c.axpy(-t, &xb.column(j), 1.0);
                }
                for e in &extra {
                    let t = e.dot(&c);
                    c.axpy(-t, e, 1.0);
                }
            }
            let n = c.norm();
            if n > 1e-8 {
                extra.push(c / n);
            }
        }
        if extra.is_empty() {
            break;
        }
        let e = DMatrix::from_columns(&extra);
        let ae = op.apply_block(x, &e);
        let mut s = DMatrix::zeros(xb.nrows(), k + e.ncols());
        s.columns_mut(0, k).copy_from(&xb);
        s.columns_mut(k, e.ncols()).copy_from(&e);
        let mut as_ = DMatrix::zeros(xb.nrows(), k + e.ncols());
        as_.columns_mut(0, k).copy_from(&ax);
        as_.columns_mut(k, e.ncols()).copy_from(&ae);
        let (vals, vecs) = sorted_sym_eigen(&(s.transpose() * &as_));
        if vals.iter().any(|l| !l.is_finite()) {
            return Lobpcg::Breakdown(SubspaceBasis { v: xb, rayleigh: lam });
        }
        let c = vecs.columns(0, k).into_owned();
        let ce = c.rows(k, e.ncols()).into_owned();
        p = Some(&e * ce);
        xb = &s * &c;
        ax = &as_ * &c;
        lam = DVector::from_iterator(k, vals.into_iter().take(k));
    }
    if orthonormality_error(&xb) > 1e-10 {
        let q = gram_schmidt(&xb);
        let aq = op.apply_block(x, &q);
        lam = DVector::from_fn(k, |i, _| q.column(i).dot(&aq.column(i)));
        xb = q;
    }
    Lobpcg::Done(SubspaceBasis { v: xb, rayleigh: lam })
}

/// Unpreconditioned block LOBPCG for the `k` algebraically smallest
/// eigenpairs, eigenvalues ascending. The flag reports whether the `k`-th
/// eigenvalue is below `precision_tol`.
pub fn lobpcg_smallest(
    op: &dyn HessianAction,
    x: &DVector<f64>,
    guess: &DMatrix<f64>,
    max_iter: usize,
    step_tol: f64,
    precision_tol: f64,
) -> Result<(SubspaceBasis, bool)> {
    if !op.is_symmetric() {
        return Err(Error::NonSymmetricOperator);
    }
    if guess.ncols() == 0 {
        return Ok((SubspaceBasis::empty(guess.nrows()), true));
    }
    let basis = match lobpcg_run(op, x, guess, max_iter, step_tol) {
        Lobpcg::Done(b) => b,
        Lobpcg::Breakdown(b) => {
            log::warn!("LOBPCG Rayleigh-Ritz breakdown; keeping the current block");
            b
        }
    };
    let flag = basis.rayleigh[basis.k() - 1] < precision_tol;
    Ok((basis, flag))
}

/// One subspace update with the configured method; LOBPCG breakdown falls
/// back to an Euler step.
pub fn update_subspace(
    op: &dyn HessianAction,
    x: &DVector<f64>,
    basis: &SubspaceBasis,
    cfg: &EigenConfig,
) -> Result<(SubspaceBasis, bool)> {
    let is_gradient = op.is_symmetric();
    match cfg.method_for(is_gradient) {
        EigenMethod::Euler => {
            Ok(euler_update(op, x, basis, cfg.step_size, cfg.max_iter, is_gradient, cfg.precision_tol))
        }
        EigenMethod::Power => Ok(power_update(op, x, basis, cfg.step_size, cfg.max_iter, cfg.precision_tol)),
        EigenMethod::Lobpcg => {
            if !is_gradient {
                return Err(Error::NonSymmetricOperator);
            }
            if basis.k() == 0 {
                return Ok((basis.clone(), true));
            }
            match lobpcg_run(op, x, &basis.v, cfg.max_iter, cfg.lobpcg_tol) {
                Lobpcg::Done(b) => {
                    let flag = b.rayleigh[b.k() - 1] < cfg.precision_tol;
                    Ok((b, flag))
                }
                Lobpcg::Breakdown(_) => {
                    log::warn!("LOBPCG Rayleigh-Ritz breakdown; falling back to an Euler step");
                    Ok(euler_update(op, x, basis, cfg.step_size, cfg.max_iter, true, cfg.precision_tol))
                }
            }
        }
    }
}

/// Real parts of all eigenvalues of `M`, ascending.
fn real_spectrum(m: &DMatrix<f64>, symmetric: bool) -> Vec<f64> {
    let mut vals: Vec<f64> = if symmetric {
        SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.iter().copied().collect()
    } else {
        m.complex_eigenvalues().iter().map(|c| c.re).collect()
    };
    vals.sort_by(f64::total_cmp);
    vals
}

/// True iff at least `k` eigenvalue real parts lie below `precision_tol`.
pub fn check_index_k(op: &dyn HessianAction, x: &DVector<f64>, k: usize, precision_tol: f64) -> bool {
    if k == 0 {
        return true;
    }
    let d = op.dim();
    if k > d {
        return false;
    }
    if d <= DENSE_WARN_DIM || !op.is_symmetric() {
        let vals = real_spectrum(&op.dense(x), op.is_symmetric());
        return vals.iter().filter(|&&v| v < precision_tol).count() >= k;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x1dec);
    let guess = DMatrix::from_columns(&(0..k).map(|_| random_unit(&mut rng, d)).collect::<Vec<_>>());
    match lobpcg_smallest(op, x, &guess, 200, 1e-9, precision_tol) {
        Ok((_, flag)) => flag,
        Err(_) => false,
    }
}

/// Full classification of the spectrum at `x` with an orthonormal basis of
/// the unstable subspace.
pub fn find_index(op: &dyn HessianAction, x: &DVector<f64>, precision_tol: f64) -> IndexReport {
    let d = op.dim();
    let m = op.dense(x);
    let (eigenvalues, neg_vectors) = if op.is_symmetric() {
        let (vals, vecs) = sorted_sym_eigen(&m);
        let neg = vals.iter().filter(|&&v| v < -precision_tol).count();
        (vals, vecs.columns(0, neg).into_owned())
    } else {
        let eigs = m.complex_eigenvalues();
        let mut vals: Vec<f64> = eigs.iter().map(|c| c.re).collect();
        vals.sort_by(f64::total_cmp);
        let unstable: Vec<_> = eigs.iter().copied().filter(|c| c.re < -precision_tol).collect();
        (vals, unstable_subspace(&m, &unstable))
    };
    let neg = eigenvalues.iter().filter(|&&v| v < -precision_tol).count();
    let zero = eigenvalues.iter().filter(|&&v| v.abs() <= precision_tol).count();
    let pos = d - neg - zero;
    IndexReport { neg, zero, pos, neg_vectors, eigenvalues }
}

/// Real invariant subspace for the selected eigenvalues of a general matrix:
/// the null space of the product of their (real) factors, ordered by the
/// Rayleigh quotient of the symmetric part.
fn unstable_subspace(m: &DMatrix<f64>, selected: &[nalgebra::Complex<f64>]) -> DMatrix<f64> {
    let d = m.nrows();
    let count = selected.len();
    if count == 0 {
        return DMatrix::zeros(d, 0);
    }
    let scale = m.amax().max(1.0);
    let eye = DMatrix::<f64>::identity(d, d);
    let mut prod = eye.clone();
    for c in selected {
        let factor = if c.im.abs() <= 1e-10 * scale {
            m - &eye * c.re
        } else if c.im > 0.0 {
            let shifted = m - &eye * c.re;
            &shifted * &shifted + &eye * (c.im * c.im)
        } else {
            continue;
        };
        let f = &factor / factor.amax().max(f64::MIN_POSITIVE);
        prod = f * prod;
        let n = prod.amax();
        if n > 0.0 {
            prod /= n;
        }
    }
    let svd = prod.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[a].total_cmp(&svd.singular_values[b]));
    let basis = DMatrix::from_fn(d, count, |r, c| vt[(order[c], r)]);
    let basis = gram_schmidt(&basis);
    let (_, rot) = sorted_sym_eigen(&(basis.transpose() * m * &basis));
    basis * rot
}

/// Initial subspace: eigenvectors of `½(M + Mᵀ)` for the `k` smallest
/// eigenvalues, or a random orthonormal block above the dense limit.
pub fn give_initial_eigenvectors(
    op: &dyn HessianAction,
    x: &DVector<f64>,
    k: usize,
    unified: bool,
    precision_tol: f64,
    seed: u64,
) -> SubspaceBasis {
    let d = op.dim();
    if k == 0 {
        return SubspaceBasis::empty(d);
    }
    if d > DENSE_WARN_DIM {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = DMatrix::from_columns(&(0..k).map(|_| random_unit(&mut rng, d)).collect::<Vec<_>>());
        return SubspaceBasis::new(gram_schmidt(&v));
    }
    let (vals, vecs) = sorted_sym_eigen(&op.dense(x));
    let vals = &vals[..k];
    let mut v = vecs.columns(0, k).into_owned();
    if unified {
        if let Ok(c) = canonicalize_sorted(&v, vals, precision_tol) {
            v = c;
        }
    }
    SubspaceBasis { v, rayleigh: DVector::from_column_slice(vals) }
}

/// Groups columns whose eigenvalues (ascending) differ by at most `tol` into
/// blocks and canonicalizes each block.
pub fn canonicalize_sorted(v: &DMatrix<f64>, eigenvalues: &[f64], tol: f64) -> Result<DMatrix<f64>> {
    assert_eq!(v.ncols(), eigenvalues.len());
    let mut out = v.clone();
    let mut start = 0;
    while start < eigenvalues.len() {
        let mut end = start + 1;
        while end < eigenvalues.len() && (eigenvalues[end] - eigenvalues[end - 1]).abs() <= tol {
            end += 1;
        }
        let block = canonicalize_block(&v.columns(start, end - start).into_owned())?;
        out.columns_mut(start, end - start).copy_from(&block);
        start = end;
    }
    Ok(out)
}

/// Canonical form of each eigenvalue block; see [`canonicalize_block`].
pub fn canonicalize_eigens(blocks: &[(f64, DMatrix<f64>)]) -> Result<Vec<(f64, DMatrix<f64>)>> {
    blocks.iter().map(|(l, b)| Ok((*l, canonicalize_block(b)?))).collect()
}

/// Deterministic orthonormal basis for the column space of `block`: reduced
/// row echelon form of the transpose, Gram–Schmidt on its rows, then each
/// vector signed so its first nonzero coordinate is positive.
pub fn canonicalize_block(block: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = block.ncols();
    let d = block.nrows();
    if m == 0 {
        return Ok(block.clone());
    }
    let mut a = block.transpose();
    let mut row = 0;
    for col in 0..d {
        if row == m {
            break;
        }
        let (piv, pmax) =
            (row..m)
                .map(|r| (r, a[(r, col)].abs()))
                .fold((row, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pmax < PIVOT_TOL {
            continue;
        }
        a.swap_rows(row, piv);
        let p = a[(row, col)];
        for j in 0..d {
            a[(row, j)] /= p;
        }
        for r in 0..m {
            if r != row {
                let f = a[(r, col)];
                if f != 0.0 {
                    for j in 0..d {
                        a[(r, j)] -= f * a[(row, j)];
                    }
                }
            }
        }
        row += 1;
    }
    if row < m {
        return Err(Error::RankDeficient);
    }
    a.apply(|v| *v = (*v / RREF_QUANTUM).round() * RREF_QUANTUM);
    let mut q = gram_schmidt(&a.transpose());
    for mut c in q.column_iter_mut() {
        if let Some(first) = c.iter().copied().find(|v| v.abs() > 1e-12) {
            if first < 0.0 {
                c.neg_mut();
            }
        }
    }
    Ok(q)
}
