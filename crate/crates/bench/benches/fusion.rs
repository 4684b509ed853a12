use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

use rac_bench::{random_neighbors, random_rows};
use rac_core::fusion::{MamConfig, MemoryAttention};

fn mam(c: &mut Criterion) {
    let (d, d_prime) = (64, 64);
    let z = random_rows(1, d, 3);
    let mut group = c.benchmark_group("mam_d64");
    for (layers, k) in [(1, 100), (8, 10), (8, 100)] {
        let config = MamConfig {
            d,
            d_prime,
            num_layers: layers,
        };
        let mut module = MemoryAttention::<f32>::new(config, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let nn = random_neighbors(k, d, d_prime, 5);
        let id = format!("L{layers}_k{k}");
        group.bench_function(BenchmarkId::new("forward", &id), |b| {
            b.iter(|| black_box(module.forward(&z, &nn).unwrap()))
        });
        let (out, cache) = module.forward(&z, &nn).unwrap();
        group.bench_function(BenchmarkId::new("backward", &id), |b| {
            b.iter(|| black_box(module.backward(&cache, &out).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, mam);
criterion_main!(benches);
