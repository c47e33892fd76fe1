use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use infomesh::{eigenvalues, Scenario, UniformGrid};
use infomesh_bench::{operator_handle, problem, uniform_mesh};

fn factor(c: &mut Criterion) {
    let mut g = c.benchmark_group("factorize");
    g.sample_size(10);
    for levels in [5, 6, 7] {
        let op = Scenario::default().operator(&UniformGrid::from_levels(levels)).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(levels), &op, |b, op| {
            b.iter(|| infomesh::factorize(op).unwrap())
        });
    }
    g.finish();
}

fn solve(c: &mut Criterion) {
    let handle = operator_handle(7);
    let rhs = vec![1.0; handle.grid().node_count()];
    c.bench_function("solve/7", |b| b.iter(|| handle.solve(&rhs).unwrap()));
    c.bench_function("solve_transpose/7", |b| {
        b.iter(|| handle.solve_transpose(&rhs).unwrap())
    });
}

fn schur(c: &mut Criterion) {
    let p = problem(7);
    let mut g = c.benchmark_group("schur");
    g.sample_size(10);
    for level in [4, 5] {
        let mesh = uniform_mesh(level, 7);
        g.bench_with_input(BenchmarkId::from_parameter(mesh.len()), &mesh, |b, m| {
            b.iter(|| p.schur(m).unwrap())
        });
    }
    g.finish();
}

fn spectrum(c: &mut Criterion) {
    let p = problem(7);
    let mut g = c.benchmark_group("eigenvalues");
    g.sample_size(10);
    for level in [4, 5] {
        let sys = p.schur(&uniform_mesh(level, 7)).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(sys.leaf_count()), &sys, |b, s| {
            b.iter(|| eigenvalues(s.h()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, factor, solve, schur, spectrum);
criterion_main!(benches);
