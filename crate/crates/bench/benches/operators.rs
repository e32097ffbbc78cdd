use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rieszlab::coeffs::meyer_conic;
use rieszlab::funcalc::{inv_sqrt, resolvent};
use rieszlab::{DiscreteOperator, Grid, GridFunction, SolverConfig, WeightField};

fn conic_operator(spacing: f64) -> DiscreteOperator {
    let grid = Grid::new(2, 1.0, spacing).unwrap();
    DiscreteOperator::assemble(grid, &meyer_conic(-0.5).unwrap(), &WeightField::unit(2)).unwrap()
}

fn bump(grid: Grid) -> GridFunction {
    GridFunction::from_fn(grid, |x| (1.0 - 4.0 * (x[0] * x[0] + x[1] * x[1])).max(0.0).powi(2))
}

fn assemble(c: &mut Criterion) {
    let a = meyer_conic(-0.5).unwrap();
    let w = WeightField::unit(2);
    let mut group = c.benchmark_group("assemble");
    for h in [1.0 / 32.0, 1.0 / 64.0] {
        let grid = Grid::new(2, 1.0, h).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(grid.len()), &grid, |b, g| {
            b.iter(|| DiscreteOperator::assemble(*g, &a, &w).unwrap())
        });
    }
    group.finish();
}

fn apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("apply");
    for h in [1.0 / 64.0, 1.0 / 128.0] {
        let op = conic_operator(h);
        let f = bump(*op.grid());
        group.bench_with_input(BenchmarkId::from_parameter(op.len()), &f, |b, f| b.iter(|| op.apply(f)));
    }
    group.finish();
}

fn solves(c: &mut Criterion) {
    let cfg = SolverConfig { use_dense: false, cg_tol: 1e-8, ..SolverConfig::default() };
    let op = conic_operator(1.0 / 64.0);
    let f = bump(*op.grid());
    let mut group = c.benchmark_group("solve");
    group.sample_size(10);
    group.bench_function("resolvent_t1", |b| b.iter(|| resolvent(&op, 1.0, 1.0, &f, &cfg).unwrap()));
    group.bench_function("inv_sqrt_multishift", |b| b.iter(|| inv_sqrt(&op, &f, 0.0, &cfg).unwrap()));
    group.finish();
}

fn dense(c: &mut Criterion) {
    let op = conic_operator(1.0 / 16.0);
    let f = bump(*op.grid());
    let cfg = SolverConfig::default();
    let mut group = c.benchmark_group("dense");
    group.sample_size(10);
    group.bench_function("eigendecomposition", |b| {
        b.iter(|| rieszlab::linalg::DenseEigen::compute(op.symmetric()).unwrap())
    });
    op.dense_spectral().unwrap();
    group.bench_function("inv_sqrt_cached", |b| b.iter(|| inv_sqrt(&op, &f, 0.0, &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, assemble, apply, solves, dense);
criterion_main!(benches);
