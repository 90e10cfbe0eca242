use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use shm_bench::synthetic;
use shm_core::appendix;
use shm_core::{train, KernelSpec, TrainConfig};

fn appendix_fit(c: &mut Criterion) {
    let ts = appendix::training_set();
    c.bench_function("appendix_script_linear", |b| {
        b.iter(|| train(&ts, &KernelSpec::Linear, &TrainConfig::default()).unwrap())
    });
}

fn synthetic_fits(c: &mut Criterion) {
    let mut group = c.benchmark_group("synthetic_kkt_soft");
    let cfg = TrainConfig {
        c: 10.0,
        ..TrainConfig::kkt()
    };
    for n in [32, 64, 128] {
        let ts = synthetic(n, 3, 3, 7);
        group.bench_with_input(BenchmarkId::from_parameter(n), &ts, |b, ts| {
            b.iter(|| train(ts, &KernelSpec::Linear, &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, appendix_fit, synthetic_fits);
criterion_main!(benches);
