use std::hint::black_box;

use amdn_core::hawkes::{fit_hawkes, log_likelihood, make_scenario, simulate, HawkesFitConfig};
use amdn_core::{HawkesModel, Mat, ScenarioConfig};
use criterion::{criterion_group, criterion_main, Criterion};

fn simulation(c: &mut Criterion) {
    let model = HawkesModel::dense(vec![1.0], Mat::from_vec(1, 1, vec![0.5]), 1.0).unwrap();
    c.bench_function("simulate/univariate_T200", |b| {
        b.iter(|| simulate(&model, black_box(200.0), 7).unwrap())
    });
    let config = ScenarioConfig::default();
    c.bench_function("make_scenario/default", |b| b.iter(|| make_scenario(black_box(&config), 1).unwrap()));
}

fn likelihood(c: &mut Criterion) {
    let scenario = make_scenario(&ScenarioConfig::default(), 2).unwrap();
    let seq = scenario.sequences.iter().max_by_key(|s| s.len()).unwrap().clone();
    c.bench_function("log_likelihood/30_accounts", |b| {
        b.iter(|| log_likelihood(&scenario.model, black_box(&seq), 0.0, 50.0).unwrap())
    });
}

fn fitting(c: &mut Criterion) {
    let config = ScenarioConfig {
        num_sequences: 50,
        ..ScenarioConfig::default()
    };
    let scenario = make_scenario(&config, 3).unwrap();
    let fit = HawkesFitConfig {
        rank: 8,
        epochs: 5,
        horizon: Some(config.horizon),
        ..HawkesFitConfig::default()
    };
    c.bench_function("fit_hawkes/5_epochs", |b| {
        b.iter(|| fit_hawkes(black_box(&scenario.sequences), config.num_accounts, &fit).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = simulation, likelihood, fitting
}
criterion_main!(benches);
