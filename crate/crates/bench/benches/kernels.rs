use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;
use sto_core::derivatives::{degree_centrality, kendalls_w, reho, DerivativeSpec};
use sto_core::nn::kernels::{conv3d_backward, conv3d_forward, ConvShape};
use sto_core::nn::ConvSpec;
use sto_core::{MaskVolume, Volume4D};

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn conv3d(c: &mut Criterion) {
    let mut g = c.benchmark_group("conv3d");
    // stem-like and stage-like shapes at the 8^3 and 16^3 grids
    for (name, x_shape, w_shape, stride) in [
        ("4->8 k3 16^3", [2, 4, 16, 16, 16], [8, 4, 3, 3, 3], 1),
        ("8->16 k3 s2 16^3", [2, 8, 16, 16, 16], [16, 8, 3, 3, 3], 2),
        ("16->16 k3 8^3", [2, 16, 8, 8, 8], [16, 16, 3, 3, 3], 1),
    ] {
        let shape = ConvShape::new(&x_shape, &w_shape, ConvSpec::cubic(3, stride, 1)).unwrap();
        let x = noise(x_shape.iter().product(), 1);
        let w = noise(w_shape.iter().product(), 2);
        let y = conv3d_forward(&x, &w, &shape);
        g.bench_function(BenchmarkId::new("forward", name), |b| b.iter(|| conv3d_forward(black_box(&x), black_box(&w), &shape)));
        g.bench_function(BenchmarkId::new("backward", name), |b| b.iter(|| conv3d_backward(black_box(&x), black_box(&w), black_box(&y), &shape)));
    }
    g.finish();
}

fn volume(ext: usize, t: usize) -> (Volume4D, MaskVolume) {
    let n = ext * ext * ext;
    let v = Volume4D::new([ext, ext, ext, t], [3.0; 3], 2.0, noise(n * t, 3)).unwrap();
    let m = MaskVolume::new([ext; 3], vec![true; n]).unwrap();
    (v, m)
}

fn derivatives(c: &mut Criterion) {
    let mut g = c.benchmark_group("derivatives");
    g.sample_size(10);
    let spec = DerivativeSpec::default();
    for ext in [8, 12] {
        let (v, m) = volume(ext, 60);
        g.bench_with_input(BenchmarkId::new("degree_centrality", ext), &ext, |b, _| b.iter(|| degree_centrality(&v, &m, &spec).unwrap()));
        g.bench_with_input(BenchmarkId::new("reho", ext), &ext, |b, _| b.iter(|| reho(&v, &m, &spec).unwrap()));
    }
    g.finish();
}

fn kendall(c: &mut Criterion) {
    let series: Vec<Vec<f64>> = (0..27).map(|i| noise(200, 10 + i)).collect();
    c.bench_function("kendalls_w 27x200", |b| b.iter(|| kendalls_w(black_box(&series)).unwrap()));
}

criterion_group!(benches, conv3d, derivatives, kendall);
criterion_main!(benches);
