use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use simcert::dynamics::builtin;
use simcert::energy::max_eigenvalue;
use simcert::integrate::{self, IntegratorKind};
use simcert::linalg::Matrix;
use simcert::sample::delta_grid;
use simcert::verify::{check_invariance, VerificationConfig};
use simcert::{EnergyForm, StabilityParams};

fn integrators(c: &mut Criterion) {
    let model = builtin("sgn-cubic").unwrap();
    let mut g = c.benchmark_group("integrate");
    for kind in [IntegratorKind::Euler, IntegratorKind::Rk4] {
        g.bench_function(BenchmarkId::new("step", kind), |b| {
            b.iter(|| integrate::step(&model, black_box(&[1.4]), 0.01, kind).unwrap())
        });
        g.bench_function(BenchmarkId::new("propagate_400", kind), |b| {
            b.iter(|| integrate::propagate(&model, black_box(&[1.4]), 0.01, 400, kind).unwrap())
        });
    }
    g.finish();
}

fn grids(c: &mut Criterion) {
    let mut g = c.benchmark_group("delta_grid");
    for dim in [1usize, 2, 3] {
        let form = EnergyForm::identity(dim, 1.125).unwrap();
        g.bench_with_input(BenchmarkId::from_parameter(dim), &form, |b, form| {
            b.iter(|| delta_grid(form, black_box(0.1), dim).unwrap())
        });
    }
    g.finish();
}

fn eigen(c: &mut Criterion) {
    let n = 8;
    let mut p = Matrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            let v = p.get(i, j) * n as f64 + 1.0 / (1.0 + (i + j) as f64);
            p.set(i, j, v);
        }
    }
    c.bench_function("max_eigenvalue_8x8", |b| {
        b.iter(|| max_eigenvalue(black_box(&p)).unwrap())
    });
}

fn certificate(c: &mut Criterion) {
    let model = builtin("sgn-cubic").unwrap();
    let params = StabilityParams::new(8.0 / 3.0, 3.0, 1.5).unwrap();
    let form = EnergyForm::identity(1, 1.125).unwrap();
    let cfg = VerificationConfig::new(0.01, 400, 0.1, params, form);
    c.bench_function("check_invariance_sgn_cubic", |b| {
        b.iter(|| check_invariance(&model, black_box(&cfg)).unwrap())
    });
}

criterion_group!(benches, integrators, grids, eigen, certificate);
criterion_main!(benches);
