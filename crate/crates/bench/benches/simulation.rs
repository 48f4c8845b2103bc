use std::hint::black_box;

use brwre::rng::{stream_rng, Stream};
use brwre::simulator::{evolve, w_path_on_grid};
use brwre::spine::sample_spine_tree;
use brwre_bench::{mixed, poisson};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

const CAP: usize = 10_000_000;

fn evolve_poisson(c: &mut Criterion) {
    let model = poisson(2.0);
    let mut group = c.benchmark_group("evolve");
    for n in [8usize, 12, 14] {
        let path = model.sample_path(n, 1);
        group.bench_with_input(BenchmarkId::new("poisson2", n), &n, |b, &n| {
            let mut i = 0;
            b.iter(|| {
                i += 1;
                let mut rng = stream_rng(1, Stream::Tree, i);
                black_box(evolve(&path, &model, n, CAP, &mut rng).unwrap().len())
            })
        });
    }
    let lattice = mixed();
    let path = lattice.sample_path(24, 1);
    group.bench_function("mixed_lattice/24", |b| {
        let mut i = 0;
        b.iter(|| {
            i += 1;
            let mut rng = stream_rng(1, Stream::Tree, i);
            black_box(evolve(&path, &lattice, 24, CAP, &mut rng).unwrap().len())
        })
    });
    group.finish();
}

fn martingale_grid(c: &mut Criterion) {
    let model = poisson(2.0);
    let path = model.sample_path(10, 1);
    let grid = [-0.5, 0.0, 0.5, 1.0];
    c.bench_function("w_path_on_grid/poisson2/10", |b| {
        let mut i = 0;
        b.iter(|| {
            i += 1;
            let mut rng = stream_rng(1, Stream::Tree, i);
            black_box(w_path_on_grid(&path, &model, &grid, 10, CAP, &mut rng).unwrap())
        })
    });
}

fn spine_tree(c: &mut Criterion) {
    let model = mixed();
    let path = model.sample_path(5, 1);
    c.bench_function("sample_spine_tree/mixed/5", |b| {
        let mut i = 0;
        b.iter(|| {
            i += 1;
            let mut rng = stream_rng(1, Stream::Spine, i);
            black_box(sample_spine_tree(&path, &model, 0.5, 5, CAP, &mut rng).unwrap().total_w())
        })
    });
}

criterion_group!(benches, evolve_poisson, martingale_grid, spine_tree);
criterion_main!(benches);
