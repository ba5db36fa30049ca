use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use pcomimo_core::baselines::waterfill;
use pcomimo_core::channel::{build_alphabet, build_error_kernel, sample_frame};
use pcomimo_core::phy::{design_precoders, stream_gains, validate_streams};
use pcomimo_core::{RunConfig, Scheme};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn physical_layer(c: &mut Criterion) {
    let alphabet = build_alphabet(20, 1).unwrap();
    let kernel = build_error_kernel(&alphabet, 0.15).unwrap();
    let alloc = validate_streams(2, 3, 2, &[1, 1], &[1, 1]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    c.bench_function("sample_frame", |b| {
        b.iter(|| sample_frame(&alphabet, &kernel, 2, 3, 2, &mut rng).unwrap())
    });
    c.bench_function("design_precoders", |b| {
        b.iter_batched(
            || sample_frame(&alphabet, &kernel, 2, 3, 2, &mut rng).unwrap(),
            |state| design_precoders(&alloc, &state).unwrap(),
            BatchSize::SmallInput,
        )
    });
    let state = sample_frame(&alphabet, &kernel, 2, 3, 2, &mut rng).unwrap();
    let set = design_precoders(&alloc, &state).unwrap();
    c.bench_function("stream_gains", |b| {
        b.iter(|| stream_gains(black_box(&set), &state.csit))
    });
}

fn power_allocation(c: &mut Criterion) {
    let gains = [3.1, 0.4, 1.7, 0.05];
    c.bench_function("waterfill_4", |b| {
        b.iter(|| waterfill(black_box(&gains), black_box(6.3)))
    });
}

fn frames(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_1000_frames");
    group.sample_size(20);
    for scheme in [Scheme::Proposed, Scheme::ChannelAwarePco] {
        let mut config = RunConfig::default();
        config.sim.scheme = scheme;
        config.sim.frames = 1000;
        config.sim.burn_in = 0;
        // build the cached channel model outside the timed loop
        pcomimo_core::sim::run(&config).unwrap();
        group.bench_function(scheme.name(), |b| {
            b.iter(|| pcomimo_core::sim::run(black_box(&config)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, physical_layer, power_allocation, frames);
criterion_main!(benches);
