use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use hisd_core::dynamics::{search_from_point, SearchConfig};
use hisd_core::eigen::lobpcg_smallest;
use hisd_core::gallery::{butterfly, cubic, mueller_brown_expression, phase_field_system};
use hisd_core::hessian::hvp;
use hisd_core::landscape::run_landscape;
use hisd_core::{parse_expression, DMatrix, DVector, DenseOperator};

fn expression_eval(c: &mut Criterion) {
    let e = parse_expression(&mueller_brown_expression(), 2).unwrap();
    let x = [0.2, 0.3];
    c.bench_function("expr_eval_mueller_brown", |b| b.iter(|| e.eval(black_box(&x))));
    c.bench_function("expr_parse_mueller_brown", |b| {
        b.iter(|| parse_expression(black_box(&mueller_brown_expression()), 2).unwrap())
    });
}

fn hessian_vector(c: &mut Criterion) {
    let spec = phase_field_system(32, 0.02, 1e-5).unwrap();
    let x = DVector::from_fn(1024, |i, _| (i as f64 * 0.37).sin());
    let v = DVector::from_fn(1024, |i, _| (i as f64 * 0.11).cos()).normalize();
    c.bench_function("hvp_phase_field_32x32", |b| b.iter(|| hvp(&spec, black_box(&x), black_box(&v), 1e-5)));
}

fn lobpcg(c: &mut Criterion) {
    let n = 200;
    let a = DMatrix::from_fn(n, n, |i, j| match i.abs_diff(j) {
        0 => 2.0 + (i as f64 / n as f64),
        1 => -1.0,
        _ => 0.0,
    });
    let op = DenseOperator::new(a);
    let x = DVector::zeros(n);
    let guess = DMatrix::from_fn(n, 4, |i, j| ((i * (j + 3)) as f64).sin());
    c.bench_function("lobpcg_k4_tridiagonal_200", |b| {
        b.iter(|| lobpcg_smallest(&op, &x, black_box(&guess), 50, 1e-8, 1e-5).unwrap())
    });
}

fn searches(c: &mut Criterion) {
    let g = butterfly().unwrap();
    let cfg = SearchConfig { saddle_index: 2, save_trajectory: false, ..g.search.clone() };
    c.bench_function("butterfly_index2_search", |b| {
        b.iter(|| search_from_point(&g.spec, &cfg, black_box(&g.initial_point), 1121).unwrap())
    });
    let cube = cubic(3).unwrap();
    let mut group = c.benchmark_group("landscape");
    group.sample_size(10);
    group.bench_function("cubic3", |b| {
        b.iter(|| run_landscape(&cube.spec, &cube.search, &cube.landscape, &cube.initial_point).unwrap())
    });
    group.finish();
}

criterion_group!(benches, expression_eval, hessian_vector, lobpcg, searches);
criterion_main!(benches);
