use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use neurosr::evolution::{nondominated_sort, truncate_indices};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(n: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen_range(0..60) as f64]).collect()
}

fn sorting(c: &mut Criterion) {
    let mut group = c.benchmark_group("nondominated_sort");
    for n in [20, 50, 200] {
        let pts = points(n, n as u64);
        group.bench_with_input(BenchmarkId::from_parameter(n), &pts, |b, pts| {
            b.iter(|| black_box(nondominated_sort(pts)))
        });
    }
    group.finish();
}

fn truncation(c: &mut Criterion) {
    let pts = points(30, 7);
    c.bench_function("truncate_30_to_10", |b| b.iter(|| black_box(truncate_indices(&pts, 10))));
}

criterion_group!(benches, sorting, truncation);
criterion_main!(benches);
