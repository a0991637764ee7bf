use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use sem_core::attention::sem_forward;
use sem_core::backbone::ForwardOptions;
use sem_core::kernels::conv::conv2d;
use sem_core::{
    build_network, AttentionMode, AttentionOverride, Graph, NetworkConfig, RngState, SemConfig,
    SemParams, Tensor,
};

fn filled(shape: &[usize]) -> Tensor<f32> {
    let n = shape.iter().product::<usize>();
    Tensor::new(
        shape.to_vec(),
        (0..n)
            .map(|i| ((i * 37 % 101) as f32 - 50.0) / 50.0)
            .collect(),
    )
    .unwrap()
}

fn bench_conv(c: &mut Criterion) {
    let mut group = c.benchmark_group("conv2d_3x3");
    for channels in [16usize, 32, 64] {
        let side = 512 / channels;
        let x = filled(&[8, channels, side, side]);
        let k = filled(&[channels, channels, 3, 3]);
        group.bench_with_input(BenchmarkId::from_parameter(channels), &channels, |b, _| {
            b.iter(|| conv2d(black_box(&x), black_box(&k), 1, 1).unwrap())
        });
    }
    group.finish();
}

fn bench_sem(c: &mut Criterion) {
    let cfg = SemConfig::default();
    let mut group = c.benchmark_group("sem_forward_backward");
    for channels in [64usize, 256] {
        let params = SemParams::<f32>::init(channels, &cfg, RngState::new(0, 0)).unwrap();
        let x = filled(&[16, channels, 8, 8]);
        group.bench_with_input(BenchmarkId::from_parameter(channels), &channels, |b, _| {
            b.iter(|| {
                let mut g = Graph::new();
                let vars = params.bind(&mut g, true);
                let xv = g.param(x.clone());
                let out = sem_forward(&mut g, xv, &vars, &cfg, AttentionOverride::None).unwrap();
                let loss = g.sum(out.x_att);
                g.backward(loss).unwrap();
            })
        });
    }
    group.finish();
}

fn bench_network(c: &mut Criterion) {
    let mut group = c.benchmark_group("depth20_train_step");
    group.sample_size(10);
    for attention in [AttentionMode::None, AttentionMode::Sem] {
        let mut model =
            build_network::<f32>(&NetworkConfig::new(20, 10, attention), RngState::new(0, 0))
                .unwrap();
        let x = filled(&[8, 3, 32, 32]);
        let labels: Vec<usize> = (0..8).collect();
        group.bench_function(attention.to_string(), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let xv = g.constant(x.clone());
                let out = model.forward(&mut g, xv, ForwardOptions::train()).unwrap();
                let loss = g.softmax_cross_entropy(out.logits, &labels).unwrap();
                g.backward(loss).unwrap();
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_conv, bench_sem, bench_network);
criterion_main!(benches);
