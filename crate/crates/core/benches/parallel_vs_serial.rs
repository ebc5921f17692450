//! Parallel vs sequential throughput on the data-parallel hot paths: the
//! Hessian-map checker's point loop and batches of independent mirrorless
//! runs (the shape of a suite execution). Build with `--no-default-features`
//! to measure the fully sequential crate instead.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;
use std::sync::Arc;

use mirrorless_core::analysis::{hessian_map_check, hessian_map_check_seq};
use mirrorless_core::batch;
use mirrorless_core::geometry::{sample_domain_points, BoundedRankOneMetric, Point};
use mirrorless_core::objectives::Quadratic;
use mirrorless_core::optimizers::{run_method, Geometry, Method, RunConfig};
use nalgebra::{DMatrix, DVector};

fn bench_hessian_check(c: &mut Criterion) {
    let metric = BoundedRankOneMetric::new(8);
    let points = sample_domain_points(&metric, 48, 7);
    let mut group = c.benchmark_group("hessian_map_check");
    group.sample_size(20);
    group.bench_function(BenchmarkId::new("points48_d8", "batched"), |b| {
        b.iter(|| {
            let report =
                hessian_map_check(black_box(&metric), black_box(&points), 1e-5, 1e-3).unwrap();
            black_box(report.max_violation)
        })
    });
    group.bench_function(BenchmarkId::new("points48_d8", "sequential"), |b| {
        b.iter(|| {
            let report =
                hessian_map_check_seq(black_box(&metric), black_box(&points), 1e-5, 1e-3).unwrap();
            black_box(report.max_violation)
        })
    });
    group.finish();
}

fn bench_run_batch(c: &mut Criterion) {
    let geometry = Geometry::from_metric(Arc::new(BoundedRankOneMetric::new(4)));
    let obj = Quadratic::new(DMatrix::identity(4, 4), DVector::zeros(4)).unwrap();
    let inits: Vec<Point> = (0..16)
        .map(|i| Point::new(DVector::from_fn(4, |j, _| 0.5 + 0.1 * (i as f64) + 0.05 * j as f64)))
        .collect();
    let run_one = |w0: &Point| {
        let cfg = RunConfig::new(Method::MdMirrorless, 0.25, 30, w0.clone()).with_tol(1e-9);
        let traj = run_method(&cfg, &geometry, &obj).unwrap();
        traj.last_point().unwrap().coords().norm()
    };
    let mut group = c.benchmark_group("mirrorless_run_batch");
    group.sample_size(10);
    group.bench_function(BenchmarkId::new("runs16_k30", "batched"), |b| {
        b.iter(|| black_box(batch::map(&inits, run_one)))
    });
    group.bench_function(BenchmarkId::new("runs16_k30", "sequential"), |b| {
        b.iter(|| black_box(batch::map_seq(&inits, run_one)))
    });
    group.finish();
}

criterion_group!(benches, bench_hessian_check, bench_run_batch);
criterion_main!(benches);
