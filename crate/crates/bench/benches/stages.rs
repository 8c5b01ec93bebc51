use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;
use xco2_bench::random_inputs;
use xco2_core::model::{model_rng, Mode, ModelConfig, Network};
use xco2_core::wavelet::{default_scales, MorletBank};
use xco2_core::{aggregate, synth_generate, SyntheticScenario};

fn bench_cwt(c: &mut Criterion) {
    let bank = MorletBank::new(&default_scales()).unwrap();
    let x: Vec<f64> = (0..32)
        .map(|k| (k as f64 * 0.4).sin() + 0.1 * k as f64)
        .collect();
    c.bench_function("cwt_32x32_bank", |b| {
        b.iter(|| bank.transform(black_box(&x)))
    });
    c.bench_function("cwt_32x32_fresh_bank", |b| {
        b.iter(|| xco2_core::cwt_morlet(black_box(&x), &default_scales()).unwrap())
    });
}

fn bench_forward(c: &mut Criterion) {
    let inputs = random_inputs(32, 7);
    let refs: Vec<_> = inputs.iter().collect();
    let targets = vec![0.0; refs.len()];
    let mut group = c.benchmark_group("network");
    group.sample_size(10);
    for (name, cfg) in [
        ("desk", ModelConfig::desk()),
        ("full", ModelConfig::default()),
    ] {
        let net = Network::new(cfg, 1).unwrap();
        group.bench_function(format!("{name}_forward_eval_b32"), |b| {
            let mut rng = model_rng(0);
            b.iter(|| {
                net.forward_batch(black_box(&refs), Mode::Eval, &mut rng)
                    .unwrap()
            })
        });
        group.bench_function(format!("{name}_loss_and_grad_b32"), |b| {
            let mut rng = model_rng(0);
            b.iter(|| {
                net.loss_and_grad(black_box(&refs), &targets, Mode::Train, &mut rng)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_aggregate(c: &mut Criterion) {
    let scenario = SyntheticScenario::default();
    let data = synth_generate(&scenario, 42).unwrap();
    c.bench_function("aggregate_default_scenario", |b| {
        b.iter_batched(
            || data.soundings.clone(),
            |s| aggregate(black_box(&s), &scenario.grid).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

criterion_group!(benches, bench_cwt, bench_forward, bench_aggregate);
criterion_main!(benches);
