//! Solution-landscape construction: seed search, breadth-first downward
//! search, deduplication and restarts.

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dynamics::{check_operator, hisd_search, sd_search, SearchConfig, SearchOutcome, SearchStatus, Trajectory};
use crate::eigen::{canonicalize_sorted, give_initial_eigenvectors, gram_schmidt, IndexReport, SubspaceBasis};
use crate::hessian::{HessianAction, HessianOperator};
use crate::system::SystemSpec;
use crate::{Error, Result};

type PredicateFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> bool + Send + Sync;

/// Position equivalence used for deduplication. Index equality is checked
/// separately.
#[derive(Clone)]
pub enum SameJudgement {
    Euclidean {
        tol: f64,
    },
    /// Periodic `rows x cols` field equal to some circular shift of the
    /// other within max-norm `tol`.
    Translation {
        rows: usize,
        cols: usize,
        tol: f64,
    },
    /// Normalized circular cross-correlation above `threshold`.
    TranslationFft {
        rows: usize,
        cols: usize,
        threshold: f64,
    },
    Custom(Arc<PredicateFn>),
}

impl SameJudgement {
    pub fn same(&self, a: &DVector<f64>, b: &DVector<f64>) -> bool {
        match self {
            SameJudgement::Euclidean { tol } => (a - b).norm() <= *tol,
            SameJudgement::Translation { rows, cols, tol } => translation_equal(a, b, *rows, *cols, *tol),
            SameJudgement::TranslationFft { rows, cols, threshold } => {
                fft_translation_equal(a, b, *rows, *cols, *threshold)
            }
            SameJudgement::Custom(f) => f(a, b),
        }
    }

    pub fn name(&self) -> String {
        match self {
            SameJudgement::Euclidean { tol } => format!("euclidean(tol={tol})"),
            SameJudgement::Translation { rows, cols, tol } => format!("translation({rows}x{cols}, tol={tol})"),
            SameJudgement::TranslationFft { rows, cols, threshold } => {
                format!("translation_fft({rows}x{cols}, threshold={threshold})")
            }
            SameJudgement::Custom(_) => "custom".into(),
        }
    }
}

impl fmt::Debug for SameJudgement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Default for SameJudgement {
    fn default() -> Self {
        SameJudgement::Euclidean { tol: 1e-3 }
    }
}

/// Checks every circular shift of `b` against `a` in max-norm.
pub fn translation_equal(a: &DVector<f64>, b: &DVector<f64>, rows: usize, cols: usize, tol: f64) -> bool {
    assert_eq!(a.len(), rows * cols, "field size does not match grid");
    assert_eq!(b.len(), rows * cols, "field size does not match grid");
    for dr in 0..rows {
        for dc in 0..cols {
            let mut ok = true;
            'cells: for r in 0..rows {
                let sr = (r + rows - dr) % rows;
                for c in 0..cols {
                    let sc = (c + cols - dc) % cols;
                    if (a[r * cols + c] - b[sr * cols + sc]).abs() > tol {
                        ok = false;
                        break 'cells;
                    }
                }
            }
            if ok {
                return true;
            }
        }
    }
    false
}

fn fft2(data: &mut [Complex<f64>], rows: usize, cols: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let row_fft = if inverse { planner.plan_fft_inverse(cols) } else { planner.plan_fft_forward(cols) };
    for r in 0..rows {
        row_fft.process(&mut data[r * cols..(r + 1) * cols]);
    }
    let col_fft = if inverse { planner.plan_fft_inverse(rows) } else { planner.plan_fft_forward(rows) };
    let mut column = vec![Complex::new(0.0, 0.0); rows];
    for c in 0..cols {
        for r in 0..rows {
            column[r] = data[r * cols + c];
        }
        col_fft.process(&mut column);
        for r in 0..rows {
            data[r * cols + c] = column[r];
        }
    }
}

/// Maximum of the circular cross-correlation of `a` and `b`, divided by
/// `Σ a²`. Near-zero fields only match near-zero fields.
pub fn fft_translation_equal(a: &DVector<f64>, b: &DVector<f64>, rows: usize, cols: usize, threshold: f64) -> bool {
    assert_eq!(a.len(), rows * cols, "field size does not match grid");
    assert_eq!(b.len(), rows * cols, "field size does not match grid");
    let norm = a.norm_squared();
    if norm < 1e-7 {
        return b.norm_squared() < 1e-7;
    }
    let mut fa: Vec<Complex<f64>> = a.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut fb: Vec<Complex<f64>> = b.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut fa, rows, cols, false);
    fft2(&mut fb, rows, cols, false);
    let mut spec: Vec<Complex<f64>> = fa.iter().zip(&fb).map(|(x, y)| x.conj() * y).collect();
    fft2(&mut spec, rows, cols, true);
    let scale = (rows * cols) as f64;
    let max_corr = spec.iter().map(|c| c.re / scale).fold(f64::NEG_INFINITY, f64::max);
    max_corr / norm > threshold
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationMethod {
    Uniform,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenCombination {
    All,
    Min,
}

#[derive(Debug, Clone)]
pub struct LandscapeConfig {
    pub max_index: usize,
    pub max_index_gap: usize,
    pub same_judgement: SameJudgement,
    pub perturbation_method: PerturbationMethod,
    pub perturbation_radius: f64,
    pub perturbation_number: usize,
    pub eigen_combination: EigenCombination,
    pub initial_eigen_vectors: Option<DMatrix<f64>>,
    pub rng_seed: u64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        LandscapeConfig {
            max_index: 1,
            max_index_gap: 1,
            same_judgement: SameJudgement::default(),
            perturbation_method: PerturbationMethod::Uniform,
            perturbation_radius: 1e-2,
            perturbation_number: 1,
            eigen_combination: EigenCombination::All,
            initial_eigen_vectors: None,
            rng_seed: 1121,
        }
    }
}

impl LandscapeConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.max_index_gap == 0 {
            return Err(Error::Config("max_index_gap must be at least 1".into()));
        }
        if self.perturbation_number == 0 {
            return Err(Error::Config("perturbation_number must be at least 1".into()));
        }
        if !(self.perturbation_radius > 0.0) {
            return Err(Error::Config("perturbation_radius must be positive".into()));
        }
        if self.max_index > dim {
            return Err(Error::Config(format!("max_index {} exceeds the dimension {dim}", self.max_index)));
        }
        if let Some(v) = &self.initial_eigen_vectors {
            if v.nrows() != dim || v.ncols() < self.max_index {
                return Err(Error::Config(format!(
                    "initial_eigen_vectors must be {dim}x{} or wider, got {}x{}",
                    self.max_index,
                    v.nrows(),
                    v.ncols()
                )));
            }
        }
        Ok(())
    }
}

/// Parent id standing for "reached from an initial point".
pub const FROM_INITIAL_POINT: i64 = -1;

#[derive(Debug, Clone, PartialEq)]
pub struct SaddleRecord {
    pub id: usize,
    pub position: DVector<f64>,
    pub morse_index: usize,
    pub unstable_basis: DMatrix<f64>,
    pub parents: Vec<i64>,
    pub degenerate: bool,
    pub gnorm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetailRecord {
    pub child: usize,
    pub parent: i64,
    pub trajectory: Option<Trajectory>,
}

/// Summary of one search launched during a landscape run.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchLog {
    pub search_id: usize,
    pub from: i64,
    pub target_index: usize,
    pub status: SearchStatus,
    pub iterations: usize,
    pub found: Option<usize>,
    pub gnorm_history: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LandscapeGraph {
    pub saddles: Vec<SaddleRecord>,
    pub detail_records: Vec<DetailRecord>,
    pub search_logs: Vec<SearchLog>,
    /// Per-coordinate range of visited points over successful searches.
    pub bounds: Vec<(f64, f64)>,
}

impl LandscapeGraph {
    pub fn len(&self) -> usize {
        self.saddles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.saddles.is_empty()
    }

    pub fn index_counts(&self) -> Vec<usize> {
        let top = self.saddles.iter().map(|s| s.morse_index).max().map_or(0, |m| m + 1);
        let mut counts = vec![0; top];
        for s in &self.saddles {
            counts[s.morse_index] += 1;
        }
        counts
    }

    /// Recorded (parent, child) edges, excluding the initial-point parent.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for s in &self.saddles {
            for &p in &s.parents {
                if p >= 0 {
                    out.push((p as usize, s.id));
                }
            }
        }
        out
    }

    fn merge_bounds(&mut self, b: &[(f64, f64)]) {
        if self.bounds.is_empty() {
            self.bounds = b.to_vec();
            return;
        }
        for (acc, new) in self.bounds.iter_mut().zip(b) {
            acc.0 = acc.0.min(new.0);
            acc.1 = acc.1.max(new.1);
        }
    }
}

/// First saddle (ascending id) with equal index that the predicate accepts.
pub fn check_whether_exist(
    graph: &LandscapeGraph,
    x: &DVector<f64>,
    index: usize,
    predicate: &SameJudgement,
) -> Option<usize> {
    graph.saddles.iter().position(|s| s.morse_index == index && predicate.same(x, &s.position))
}

/// Draws `count` perturbations, projects each onto `span(basis)`, rescales
/// to `radius` and emits both signs.
pub fn generate_perturbations<R: Rng>(
    basis: &DMatrix<f64>,
    method: PerturbationMethod,
    radius: f64,
    count: usize,
    rng: &mut R,
) -> Vec<DVector<f64>> {
    let d = basis.nrows();
    let mut out = Vec::with_capacity(2 * count);
    for _ in 0..count {
        let raw = match method {
            PerturbationMethod::Uniform => DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)),
            PerturbationMethod::Gaussian => DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal)),
        };
        let p = &raw * (radius / raw.norm().max(1e-10));
        out.extend(project_perturbation(basis, &p, radius));
    }
    out
}

fn project_perturbation(basis: &DMatrix<f64>, p: &DVector<f64>, radius: f64) -> [DVector<f64>; 2] {
    let proj = basis * (basis.transpose() * p);
    let scaled = &proj * (radius / proj.norm().max(1e-10));
    [scaled.clone(), -scaled]
}

/// Lexicographic `r`-subsets of `0..n`.
pub fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if r > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        out.push(idx.clone());
        let mut i = r;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if idx[i] != i + n - r {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        idx[i] += 1;
        for j in i + 1..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Mutable landscape state: graph plus the settings needed to extend it.
#[derive(Debug, Clone)]
pub struct Landscape {
    spec: SystemSpec,
    search: SearchConfig,
    config: LandscapeConfig,
    graph: LandscapeGraph,
    primary_point: DVector<f64>,
    max_index: usize,
    rng: ChaCha8Rng,
    search_count: usize,
}

struct Seed<'a> {
    start: DVector<f64>,
    begin_id: i64,
    resume: bool,
    upward_from: Option<&'a SaddleRecord>,
}

impl Landscape {
    pub fn new(spec: SystemSpec, search: SearchConfig, config: LandscapeConfig, x0: DVector<f64>) -> Result<Self> {
        search.validate()?;
        config.validate(spec.dim())?;
        if x0.len() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), found: x0.len() });
        }
        let rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        let bounds = x0.iter().map(|&v| (v, v)).collect();
        Ok(Landscape {
            max_index: config.max_index,
            spec,
            search,
            config,
            graph: LandscapeGraph { bounds, ..LandscapeGraph::default() },
            primary_point: x0,
            rng,
            search_count: 0,
        })
    }

    /// Resumes from a stored graph.
    pub fn with_graph(mut self, graph: LandscapeGraph) -> Self {
        if let Some(m) = graph.saddles.iter().map(|s| s.morse_index).max() {
            self.max_index = self.max_index.max(m);
        }
        self.search_count = graph.search_logs.len();
        self.graph = graph;
        self
    }

    pub fn graph(&self) -> &LandscapeGraph {
        &self.graph
    }

    pub fn into_graph(self) -> LandscapeGraph {
        self.graph
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn search_config(&self) -> &SearchConfig {
        &self.search
    }

    pub fn config(&self) -> &LandscapeConfig {
        &self.config
    }

    pub fn max_index(&self) -> usize {
        self.max_index
    }

    /// Full construction from the primary initial point.
    pub fn run(&mut self) -> Result<()> {
        let seed =
            Seed { start: self.primary_point.clone(), begin_id: FROM_INITIAL_POINT, resume: false, upward_from: None };
        self.landscape_run(seed)
    }

    pub fn restart_from_point(&mut self, x: &DVector<f64>, max_index: usize) -> Result<()> {
        if x.len() != self.spec.dim() {
            return Err(Error::DimensionMismatch { expected: self.spec.dim(), found: x.len() });
        }
        self.with_temporary_max_index(max_index, |l| {
            l.landscape_run(Seed { start: x.clone(), begin_id: FROM_INITIAL_POINT, resume: true, upward_from: None })
        })
    }

    pub fn restart_from_saddle(
        &mut self,
        begin_id: usize,
        perturbation: &DVector<f64>,
        max_index: usize,
    ) -> Result<()> {
        if begin_id >= self.graph.saddles.len() {
            return Err(Error::InvalidSaddleId);
        }
        if perturbation.len() != self.spec.dim() {
            return Err(Error::DimensionMismatch { expected: self.spec.dim(), found: perturbation.len() });
        }
        let origin = self.graph.saddles[begin_id].clone();
        let start = &origin.position + perturbation;
        self.with_temporary_max_index(max_index, |l| {
            l.landscape_run(Seed { start, begin_id: begin_id as i64, resume: true, upward_from: Some(&origin) })
        })
    }

    fn with_temporary_max_index(&mut self, max_index: usize, f: impl FnOnce(&mut Self) -> Result<()>) -> Result<()> {
        if max_index > self.spec.dim() {
            return Err(Error::Config(format!("max_index {max_index} exceeds the dimension {}", self.spec.dim())));
        }
        let saved = self.max_index;
        self.max_index = max_index;
        let result = f(self);
        self.max_index = saved;
        result
    }

    fn check_op(&self) -> Result<HessianOperator<'_>> {
        check_operator(&self.spec, &self.search)
    }

    fn search_from(&mut self, x: &DVector<f64>, basis: SubspaceBasis) -> Result<SearchOutcome> {
        let cfg = SearchConfig {
            saddle_index: basis.k(),
            search_center: Some(self.search.search_center.clone().unwrap_or_else(|| self.primary_point.clone())),
            ..self.search.clone()
        };
        if basis.k() == 0 {
            sd_search(&self.spec, &cfg, x)
        } else {
            hisd_search(&self.spec, &cfg, x, &basis)
        }
    }

    fn log_search(&mut self, from: i64, target: usize, out: &SearchOutcome, found: Option<usize>) {
        self.graph.search_logs.push(SearchLog {
            search_id: self.search_count,
            from,
            target_index: target,
            status: out.status,
            iterations: out.iterations,
            found,
            gnorm_history: out.gnorm_history.clone(),
        });
        self.search_count += 1;
    }

    fn unstable_basis(&self, report: &IndexReport) -> DMatrix<f64> {
        let v = report.neg_vectors.clone();
        if self.search.eigen.unified && self.spec.is_gradient() && v.ncols() > 0 {
            if let Ok(c) = canonicalize_sorted(&v, &report.eigenvalues[..v.ncols()], self.search.eigen.precision_tol) {
                return c;
            }
        }
        v
    }

    fn initial_subspace(&self, seed: &Seed<'_>, k: usize) -> Result<SubspaceBasis> {
        if k == 0 {
            return Ok(SubspaceBasis::empty(self.spec.dim()));
        }
        if let Some(origin) = seed.upward_from {
            if k > origin.morse_index {
                return self.upward_subspace(origin, k);
            }
        }
        if let Some(v) = &self.config.initial_eigen_vectors {
            return Ok(SubspaceBasis::new(gram_schmidt(&v.columns(0, k).into_owned())));
        }
        let op = self.check_op()?;
        Ok(give_initial_eigenvectors(
            &op,
            &seed.start,
            k,
            self.search.eigen.unified,
            self.search.eigen.precision_tol,
            self.config.rng_seed,
        ))
    }

    /// Stored unstable directions of `origin` completed by the weakest
    /// stable directions up to `k` columns.
    fn upward_subspace(&self, origin: &SaddleRecord, k: usize) -> Result<SubspaceBasis> {
        let op = self.check_op()?;
        let m = op.dense(&origin.position);
        let sym = (&m + m.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let base = &origin.unstable_basis;
        let mut cols: Vec<DVector<f64>> = base.column_iter().map(|c| c.into_owned()).collect();
        for &i in &order {
            if cols.len() == k {
                break;
            }
            let mut c = eig.eigenvectors.column(i).into_owned();
            for _ in 0..2 {
                for q in &cols {
                    let t = q.dot(&c);
                    c.axpy(-t, q, 1.0);
                }
            }
            let n = c.norm();
            if n > 1e-6 {
                cols.push(c / n);
            }
        }
        Ok(SubspaceBasis::new(DMatrix::from_columns(&cols)))
    }

    fn landscape_run(&mut self, seed: Seed<'_>) -> Result<()> {
        self.rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed);
        let mut queue: VecDeque<usize> = VecDeque::new();
        let mut k = self.max_index as i64;
        while k >= 0 {
            let ku = k as usize;
            log::info!("From initial point search index-{ku}:");
            let basis = self.initial_subspace(&seed, ku)?;
            let out = self.search_from(&seed.start, basis)?;
            if !out.converged() {
                self.log_search(seed.begin_id, ku, &out, None);
                k -= 1;
                continue;
            }
            let report = out.index_report.as_ref().expect("converged searches carry a report");
            let index = out.morse_index;
            let gnorm = *out.gnorm_history.last().unwrap();
            let id = match check_whether_exist(&self.graph, &out.x_final, index, &self.config.same_judgement) {
                Some(id) => {
                    self.replace_if_better(id, &out.x_final, gnorm);
                    if seed.resume {
                        queue.push_back(id);
                    }
                    if seed.begin_id != FROM_INITIAL_POINT {
                        self.add_edge(id, seed.begin_id, &out);
                    }
                    log::info!("Search an existing saddle point.");
                    id
                }
                None => {
                    let id = self.register(&out, report, seed.begin_id);
                    queue.push_back(id);
                    id
                }
            };
            self.graph.merge_bounds(&out.bounds);
            self.log_search(seed.begin_id, ku, &out, Some(id));
            if index > self.max_index {
                self.max_index = index;
                log::warn!("Warning! 'MaxIndex' updated due to a larger saddle point index.");
            }
            break;
        }
        if k < 0 {
            return Err(Error::NoSaddleFound);
        }
        self.bfs(queue)
    }

    fn bfs(&mut self, mut queue: VecDeque<usize>) -> Result<()> {
        while let Some(parent) = queue.pop_front() {
            let (position, index, basis) = {
                let s = &self.graph.saddles[parent];
                (s.position.clone(), s.morse_index, s.unstable_basis.clone())
            };
            if basis.ncols() == 0 {
                continue;
            }
            let lowest = index.saturating_sub(self.config.max_index_gap);
            for j in (lowest..index).rev() {
                let subspaces: Vec<Option<Vec<usize>>> = if j > 0 {
                    let combos = combinations(index, j);
                    match self.config.eigen_combination {
                        EigenCombination::All => combos.into_iter().map(Some).collect(),
                        EigenCombination::Min => combos.into_iter().take(1).map(Some).collect(),
                    }
                } else {
                    vec![None]
                };
                for combo in subspaces {
                    let perturbations = generate_perturbations(
                        &basis,
                        self.config.perturbation_method,
                        self.config.perturbation_radius,
                        self.config.perturbation_number,
                        &mut self.rng,
                    );
                    for per in perturbations {
                        log::info!("From saddle point (index-{index}, ID-{parent}) search index-{j}:");
                        let sub = match &combo {
                            Some(cols) => SubspaceBasis::new(basis.select_columns(cols.iter())),
                            None => SubspaceBasis::empty(self.spec.dim()),
                        };
                        let out = self.search_from(&(&position + per), sub)?;
                        if !out.converged() {
                            self.log_search(parent as i64, j, &out, None);
                            continue;
                        }
                        if out.morse_index > j {
                            log::info!(
                                "Sorry! Because of the relaxed abort criteria, we find a saddle point with higher index."
                            );
                            self.log_search(parent as i64, j, &out, None);
                            continue;
                        }
                        let gnorm = *out.gnorm_history.last().unwrap();
                        let id = match check_whether_exist(
                            &self.graph,
                            &out.x_final,
                            out.morse_index,
                            &self.config.same_judgement,
                        ) {
                            Some(id) => {
                                self.replace_if_better(id, &out.x_final, gnorm);
                                self.add_edge(id, parent as i64, &out);
                                id
                            }
                            None => {
                                let report = out.index_report.clone().expect("converged searches carry a report");
                                let id = self.register(&out, &report, parent as i64);
                                queue.push_back(id);
                                id
                            }
                        };
                        self.graph.merge_bounds(&out.bounds);
                        self.log_search(parent as i64, j, &out, Some(id));
                    }
                }
            }
        }
        Ok(())
    }

    fn replace_if_better(&mut self, id: usize, x: &DVector<f64>, gnorm: f64) {
        let rec = &mut self.graph.saddles[id];
        if rec.gnorm > gnorm {
            rec.position = x.clone();
            rec.gnorm = gnorm;
        }
    }

    fn add_edge(&mut self, child: usize, parent: i64, out: &SearchOutcome) {
        let rec = &mut self.graph.saddles[child];
        if rec.parents.contains(&parent) {
            return;
        }
        rec.parents.push(parent);
        self.graph.detail_records.push(DetailRecord { child, parent, trajectory: out.trajectory.clone() });
    }

    fn register(&mut self, out: &SearchOutcome, report: &IndexReport, parent: i64) -> usize {
        let id = self.graph.saddles.len();
        let unstable_basis = self.unstable_basis(report);
        self.graph.saddles.push(SaddleRecord {
            id,
            position: out.x_final.clone(),
            morse_index: out.morse_index,
            unstable_basis,
            parents: vec![parent],
            degenerate: out.degenerate,
            gnorm: *out.gnorm_history.last().unwrap(),
        });
        self.graph.detail_records.push(DetailRecord { child: id, parent, trajectory: out.trajectory.clone() });
        id
    }
}

/// Builds a landscape from `x0` in one call.
pub fn run_landscape(
    spec: &SystemSpec,
    search: &SearchConfig,
    config: &LandscapeConfig,
    x0: &DVector<f64>,
) -> Result<LandscapeGraph> {
    let mut l = Landscape::new(spec.clone(), search.clone(), config.clone(), x0.clone())?;
    l.run()?;
    Ok(l.into_graph())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(vals: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(vals)
    }

    fn record(id: usize, pos: &[f64], index: usize) -> SaddleRecord {
        SaddleRecord {
            id,
            position: v(pos),
            morse_index: index,
            unstable_basis: DMatrix::zeros(pos.len(), index),
            parents: vec![FROM_INITIAL_POINT],
            degenerate: false,
            gnorm: 0.0,
        }
    }

    #[test]
    fn existence_requires_equal_index() {
        let graph = LandscapeGraph { saddles: vec![record(0, &[1.0, 1.0, 1.0], 0)], ..Default::default() };
        let pred = SameJudgement::Euclidean { tol: 1e-4 };
        assert_eq!(check_whether_exist(&graph, &v(&[1.0 + 1e-7, 1.0, 1.0]), 0, &pred), Some(0));
        assert_eq!(check_whether_exist(&graph, &v(&[1.0 + 1e-7, 1.0, 1.0]), 1, &pred), None);
    }

    #[test]
    fn shifted_field_matches_both_predicates() {
        let (n, m) = (8, 8);
        let field = DVector::from_fn(n * m, |i, _| ((i * 7919) % 13) as f64 / 13.0 - 0.5);
        let shifted = DVector::from_fn(n * m, |i, _| {
            let (r, c) = (i / m, i % m);
            field[((r + n - 3) % n) * m + (c + m - 5) % m]
        });
        assert!(translation_equal(&field, &shifted, n, m, 0.05));
        assert!(fft_translation_equal(&field, &shifted, n, m, 0.99));
        let other = DVector::from_fn(n * m, |i, _| ((i * 31) % 11) as f64 / 11.0 - 0.5);
        assert!(!translation_equal(&field, &other, n, m, 0.05));
        assert!(!fft_translation_equal(&field, &other, n, m, 0.99));
        let zero = DVector::zeros(n * m);
        assert!(fft_translation_equal(&zero, &zero, n, m, 0.99));
        assert!(!fft_translation_equal(&zero, &field, n, m, 0.99));
    }

    #[test]
    fn projected_perturbations() {
        let basis = DMatrix::from_column_slice(2, 1, &[1.0, 0.0]);
        let p = project_perturbation(&basis, &v(&[0.3, 0.4]), 0.01);
        assert!((&p[0] - v(&[0.01, 0.0])).amax() < 1e-15);
        assert_eq!(p[1], -&p[0]);

        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let basis = gram_schmidt(&DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 1.0, 0.0, 1.0]));
        for method in [PerturbationMethod::Uniform, PerturbationMethod::Gaussian] {
            let out = generate_perturbations(&basis, method, 0.5, 4, &mut rng);
            assert_eq!(out.len(), 8);
            for pair in out.chunks(2) {
                assert!((pair[0].norm() - 0.5).abs() < 1e-12);
                assert_eq!(pair[1], -&pair[0]);
            }
        }
    }

    #[test]
    fn combination_order() {
        assert_eq!(combinations(3, 2), vec![vec![0, 1], vec![0, 2], vec![1, 2]]);
        assert_eq!(combinations(3, 3), vec![vec![0, 1, 2]]);
        assert_eq!(combinations(2, 0), vec![Vec::<usize>::new()]);
        assert_eq!(combinations(4, 1).len(), 4);
        assert_eq!(combinations(5, 2).len(), 10);
    }

    #[test]
    fn graph_counts_and_edges() {
        let mut a = record(0, &[0.0], 1);
        a.parents = vec![FROM_INITIAL_POINT];
        let mut b = record(1, &[1.0], 0);
        b.parents = vec![0];
        let g = LandscapeGraph { saddles: vec![a, b], ..Default::default() };
        assert_eq!(g.index_counts(), vec![1, 1]);
        assert_eq!(g.edges(), vec![(0, 1)]);
    }
}
