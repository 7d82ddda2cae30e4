use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hmm_analytic::domain::{default_r_grid, default_rho_grid, radius_search_with, BscFamily};
use hmm_analytic::entropy::{blackwell_entropy_mc_with, sandwich_with};
use hmm_analytic::{build_bsc, Execution};

const PI: [[f64; 2]; 2] = [[0.7, 0.3], [0.4, 0.6]];
const POLICIES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn sandwich(c: &mut Criterion) {
    let model = build_bsc(&PI, 0.1).unwrap();
    let mut group = c.benchmark_group("sandwich");
    group.sample_size(10);
    for n in [12, 16] {
        for (name, exec) in POLICIES {
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, &n| {
                b.iter(|| sandwich_with(black_box(&model), n, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let model = build_bsc(&PI, 0.1).unwrap();
    let mut group = c.benchmark_group("blackwell_mc");
    group.sample_size(10);
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| {
            b.iter(|| blackwell_entropy_mc_with(black_box(&model), 20_000, 50, 0, exec).unwrap())
        });
    }
    group.finish();
}

fn radius(c: &mut Criterion) {
    let family = BscFamily::new(PI).unwrap();
    let (rho, big_r) = (default_rho_grid(), default_r_grid());
    let mut group = c.benchmark_group("radius_search");
    for (name, exec) in POLICIES {
        group.bench_function(name, |b| b.iter(|| radius_search_with(black_box(&family), &rho, &big_r, exec).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, sandwich, monte_carlo, radius);
criterion_main!(benches);
