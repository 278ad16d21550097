use std::hint::black_box;

use amdn_core::detection::aggregate_influence;
use amdn_core::encoder::{encode, Mode};
use amdn_core::event_data::{Event, EventSequence};
use amdn_core::training::{initial_model, loss_and_gradients};
use amdn_core::TrainConfig;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sequences(n: usize, len: usize, vocab: usize) -> Vec<EventSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..n)
        .map(|k| {
            let mut t = 0.0;
            let events = (0..len)
                .map(|_| {
                    t += rng.random_range(0.0..2.0);
                    Event {
                        account: rng.random_range(0..vocab),
                        time: t,
                    }
                })
                .collect();
            EventSequence::new(format!("b{k}"), events)
        })
        .collect()
}

fn encoder(c: &mut Criterion) {
    let config = TrainConfig::default();
    let mut group = c.benchmark_group("encode");
    for len in [32, 128] {
        let data = sequences(1, len, 30);
        let model = initial_model(&data, 30, &config).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(len), &data[0], |b, seq| {
            b.iter(|| encode(black_box(seq), &model.params.encoder, model.time_scale, Mode::Eval).unwrap())
        });
    }
    group.finish();
}

fn gradients(c: &mut Criterion) {
    let config = TrainConfig::desk();
    let data = sequences(16, 100, 30);
    let model = initial_model(&data, 30, &config).unwrap();
    let seeds = |b: usize| b as u64;
    c.bench_function("loss_and_gradients/batch16x100", |b| {
        b.iter(|| loss_and_gradients(black_box(&data), &model, Some(&seeds)).unwrap())
    });
}

fn influence(c: &mut Criterion) {
    let config = TrainConfig::desk();
    let data = sequences(200, 106, 30);
    let model = initial_model(&data, 30, &config).unwrap();
    c.bench_function("aggregate_influence/200x106", |b| {
        b.iter(|| aggregate_influence(&model, black_box(&data)).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = encoder, gradients, influence
}
criterion_main!(benches);
