use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use sketchmix::sketch::{sketch_empirical, sketch_merge, DEFAULT_CHUNK_SIZE};
use sketchmix_bench::Fixture;
use std::hint::black_box;

fn empirical(c: &mut Criterion) {
    let mut group = c.benchmark_group("sketch_empirical");
    group.sample_size(10);
    for (d, m) in [(2, 100), (10, 500), (20, 2000)] {
        let f = Fixture::new(d, 5, 20_000, m, 1);
        group.throughput(Throughput::Elements((f.data.len() * m) as u64));
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("d{d}_m{m}")),
            &f,
            |b, f| {
                b.iter(|| {
                    sketch_empirical(black_box(&f.data), &f.freqs, DEFAULT_CHUNK_SIZE).unwrap()
                })
            },
        );
    }
    group.finish();
}

fn merge(c: &mut Criterion) {
    let f = Fixture::new(10, 5, 2_000, 5_000, 2);
    let half = f.data.len() / 2 * f.data.dim();
    let parts: Vec<_> = [&f.data.as_slice()[..half], &f.data.as_slice()[half..]]
        .iter()
        .map(|rows| {
            let ds = sketchmix::Dataset::new(f.data.dim(), rows.to_vec()).unwrap();
            sketch_empirical(&ds, &f.freqs, DEFAULT_CHUNK_SIZE).unwrap()
        })
        .collect();
    c.bench_function("sketch_merge_m5000", |b| {
        b.iter(|| sketch_merge(black_box(&parts[0]), &parts[1]).unwrap())
    });
}

criterion_group!(benches, empirical, merge);
criterion_main!(benches);
