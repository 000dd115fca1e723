use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deftrack::config::ModelConfig;
use deftrack::deform::{deform_features, regress_offsets};
use deftrack::tensor::{conv2d, Tensor};
use deftrack::tracker::{forward, TrackerModel, Variant};

fn rand_tensor(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(dims);
    for v in t.data_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    t
}

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = rand_tensor(&[25, 25, 8], &mut rng);
    let kernel = rand_tensor(&[3, 3, 8, 16], &mut rng);
    let bias = rand_tensor(&[16], &mut rng);
    c.bench_function("conv2d 25x25x8 k3x16", |b| {
        b.iter(|| conv2d(&input, &kernel, &bias, 1, 0).unwrap())
    });
}

fn bench_deform(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = ModelConfig::small();
    let grid = cfg.feature_grid();
    let x = rand_tensor(&[grid, grid, cfg.conv_channels[2]], &mut rng);
    let model = TrackerModel::new(&cfg, Variant::Deform, 3);
    c.bench_function("regress_offsets + deform_features 3x3", |b| {
        b.iter(|| {
            let (field, _) = regress_offsets(&x, &model.deform).unwrap();
            deform_features(&x, &field).unwrap()
        })
    });
}

fn bench_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = ModelConfig::small();
    let model = TrackerModel::new(&cfg, Variant::Gate, 5);
    let patch = rand_tensor(&[cfg.patch_size, cfg.patch_size, 1], &mut rng);
    c.bench_function("gate-variant forward 25x25", |b| {
        b.iter(|| forward(&model, &patch).unwrap())
    });
}

criterion_group!(benches, bench_conv2d, bench_deform, bench_forward);
criterion_main!(benches);
