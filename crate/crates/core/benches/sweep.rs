//! Parallel against sequential: the row kernel at several slice widths,
//! the task pool over boundary tabulation sized batches, and one full
//! reflected solve per mode.
//!
//! The row kernel only fans out above `par::ROW_PAR_MIN` lattice nodes, so
//! the small widths double as a check that the dispatch overhead stays
//! invisible where the fan-out is disabled.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mrbsde::instances;
use mrbsde::par;
use std::hint::black_box;

/// A stand-in for one node update: a few flops with a neighborhood read.
fn node_update(row: &[f64], j: usize) -> f64 {
    let n = row.len();
    let lo = row[j.saturating_sub(1)];
    let hi = row[(j + 1).min(n - 1)];
    let c = row[j];
    c + 0.5 * (hi - 2.0 * c + lo).max(0.25 * (hi - lo).abs())
}

fn bench_row_kernel(c: &mut Criterion) {
    let mut g = c.benchmark_group("row_kernel");
    for &nx in &[400usize, 4096, 16384, 65536] {
        let row: Vec<f64> = (0..=nx).map(|j| (j as f64 * 0.01).sin()).collect();
        g.bench_with_input(BenchmarkId::new("seq", nx), &row, |b, row| {
            b.iter(|| black_box(par::row_map_seq(row.len(), |j| node_update(row, j))))
        });
        g.bench_with_input(BenchmarkId::new("par", nx), &row, |b, row| {
            b.iter(|| black_box(par::row_map_par(row.len(), |j| node_update(row, j))))
        });
        g.bench_with_input(BenchmarkId::new("auto", nx), &row, |b, row| {
            b.iter(|| black_box(par::row_map(row.len(), |j| node_update(row, j))))
        });
    }
    g.finish();
}

fn bench_task_pool(c: &mut Criterion) {
    let mut g = c.benchmark_group("task_pool");
    // Tasks the size of one column tabulation: a few thousand updates each.
    let work = |k: usize| -> f64 {
        let mut acc = k as f64;
        for i in 0..4000 {
            acc = (acc + i as f64).sqrt() + 1.0;
        }
        acc
    };
    for &tasks in &[8usize, 64] {
        g.bench_with_input(BenchmarkId::new("seq", tasks), &tasks, |b, &n| {
            b.iter(|| black_box(par::task_map_seq(n, work)))
        });
        g.bench_with_input(BenchmarkId::new("pooled", tasks), &tasks, |b, &n| {
            b.iter(|| black_box(par::task_map(n, work)))
        });
    }
    g.finish();
}

fn bench_full_solve(c: &mut Criterion) {
    let mut g = c.benchmark_group("flagship_solve");
    g.sample_size(10);
    let inst = instances::by_name("flagship").unwrap().build(200, 400).unwrap();
    g.bench_function("nt200_nx400", |b| b.iter(|| black_box(inst.solve().unwrap())));
    let wide = instances::by_name("flagship").unwrap().build(200, 8192).unwrap();
    g.bench_function("nt200_nx8192", |b| b.iter(|| black_box(wide.solve().unwrap())));
    g.finish();
}

criterion_group!(benches, bench_row_kernel, bench_task_pool, bench_full_solve);
criterion_main!(benches);
