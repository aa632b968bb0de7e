//! Sequential against rayon-parallel execution for the two hot paths:
//! one mini-batch gradient and a full evaluation pass.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use modbias::dataset::{build_dataset, BuildConfig, ColoredDataset, Mnist, RawDigits, GRAY_LEN, SIDE};
use modbias::loss::{LossConfig, LossKind};
use modbias::margin::{count_bias, margins_from_counts, MarginTable, DEFAULT_EPSILON};
use modbias::model::{init_params, ModelSpec, Params};
use modbias::train::{batch_gradient, evaluate};
use modbias::Execution;
use std::hint::black_box;

fn digits(n: usize, offset: usize) -> RawDigits {
    let labels: Vec<u8> = (0..n).map(|i| ((i + offset) % 10) as u8).collect();
    let mut pixels = vec![0u8; n * GRAY_LEN];
    for (i, img) in pixels.chunks_exact_mut(GRAY_LEN).enumerate() {
        let d = labels[i] as usize;
        for r in (2 * d + 4)..(2 * d + 7) {
            for c in 4..24 {
                img[r * SIDE + c] = (128 + (i * 13 + c) % 128) as u8;
            }
        }
    }
    RawDigits { pixels, labels }
}

fn fixture() -> (ColoredDataset, MarginTable) {
    let mnist = Mnist { train: digits(1024, 0), test: digits(1024, 3) };
    let (train, _) = build_dataset(&mnist, &BuildConfig { seed: Some(1), ..BuildConfig::default() }).unwrap();
    let counts = count_bias(train.labels(), train.bias_factors(), 10, 10).unwrap();
    let margins = margins_from_counts(&counts, DEFAULT_EPSILON).unwrap();
    (train, margins)
}

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn bench_gradient(c: &mut Criterion) {
    let (data, margins) = fixture();
    let loss = LossConfig::new(LossKind::Mmdb);
    let batch: Vec<usize> = (0..128).collect();
    let mut group = c.benchmark_group("batch_gradient");
    group.sample_size(20);
    for spec in [ModelSpec::mlp(), ModelSpec::lenet()] {
        let params: Params = init_params(spec, 0).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(spec.kind.name(), name), &exec, |b, &exec| {
                b.iter(|| black_box(batch_gradient(&params, &loss, &data, &batch, Some(&margins), exec).unwrap()))
            });
        }
    }
    group.finish();
}

fn bench_evaluate(c: &mut Criterion) {
    let (data, margins) = fixture();
    let loss = LossConfig::new(LossKind::Mmdb);
    let mut group = c.benchmark_group("evaluate");
    group.sample_size(10);
    for spec in [ModelSpec::mlp(), ModelSpec::lenet()] {
        let params = init_params(spec, 0).unwrap();
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(spec.kind.name(), name), &exec, |b, &exec| {
                b.iter(|| black_box(evaluate(&params, &data, &loss, Some(&margins), exec).unwrap()))
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_gradient, bench_evaluate);
criterion_main!(benches);
