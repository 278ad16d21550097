use amdn_core::event_data::{Event, EventSequence};
use amdn_core::training::{
    evaluate, initial_model, loss_and_gradients, loss_and_gradients_padded, nll_totals, train, PaddedBatch,
};
use amdn_core::{AmdnModel, DatasetSplit, SplitFractions, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

fn tiny_config() -> TrainConfig {
    let mut c = TrainConfig::desk();
    let enc = &mut c.model.encoder;
    enc.event_dim = 4;
    enc.position_dim = 2;
    enc.time_dim = 2;
    enc.num_frequencies = 2;
    c.model.head.components = 2;
    c.model.head.type_hidden = 4;
    c
}

fn random_sequences(n: usize, vocab: usize, seed: u64) -> Vec<EventSequence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let len = rng.random_range(2..15);
            let mut t = 0.0;
            let events = (0..len)
                .map(|_| {
                    t += rng.random_range(0.0..3.0);
                    Event {
                        account: rng.random_range(0..vocab),
                        time: t,
                    }
                })
                .collect();
            EventSequence::new(format!("r{k}"), events)
        })
        .collect()
}

fn lognormal_split(mu: f64, sigma: f64, seed: u64) -> DatasetSplit {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dist = LogNormal::new(mu, sigma).unwrap();
    let mut make = |n: usize, tag: &str| -> Vec<EventSequence> {
        (0..n)
            .map(|k| {
                let mut t = 0.0;
                let events = (0..30)
                    .map(|_| {
                        t += dist.sample(&mut rng);
                        Event { account: 0, time: t }
                    })
                    .collect();
                EventSequence::new(format!("{tag}{k}"), events)
            })
            .collect()
    };
    DatasetSplit {
        train: make(120, "t"),
        validation: make(40, "v"),
        test: make(40, "e"),
        fractions: SplitFractions::default(),
    }
}

#[test]
fn single_lognormal_gaps_reach_their_entropy() {
    let (mu, sigma) = (0.7, 0.4);
    let data = lognormal_split(mu, sigma, 1);
    let mut config = tiny_config();
    config.model.head.components = 1;
    config.model.encoder.dropout = 0.0;
    config.max_epochs = 60;
    config.patience = 60;
    config.learning_rate = 1e-2;
    let outcome = train(&data, 1, &config).unwrap();
    // E[-ln p(τ)] for LogNormal(μ, σ)
    let entropy = mu + sigma.ln() + HALF_LN_2PI + 0.5;
    let test = evaluate(&data.test, &outcome.model).unwrap();
    assert!(
        (test.nll - entropy).abs() < 0.05,
        "test NLL {} vs entropy {entropy}",
        test.nll
    );
    assert_eq!(test.event_type_nll, 0.0);
    assert_eq!(test.event_type_accuracy, 1.0);
    let first = outcome.log.first().unwrap().train_nll;
    let last = outcome.log.last().unwrap().train_nll;
    assert!(last < first, "training NLL went from {first} to {last}");
}

#[test]
fn best_epoch_is_the_validation_minimum() {
    let data = lognormal_split(0.0, 0.8, 2);
    let mut config = tiny_config();
    config.max_epochs = 12;
    config.patience = 2;
    let outcome = train(&data, 1, &config).unwrap();
    let argmin = outcome
        .log
        .iter()
        .min_by(|a, b| a.val_nll.total_cmp(&b.val_nll))
        .unwrap()
        .epoch;
    assert_eq!(outcome.best_epoch, argmin);
    let best_val = evaluate(&data.validation, &outcome.model).unwrap().nll;
    assert_eq!(best_val, outcome.log[argmin].val_nll);
    if outcome.log.len() < config.max_epochs {
        assert_eq!(outcome.log.len(), argmin + config.patience + 2);
    }
}

#[test]
fn zero_patience_stops_at_first_regression() {
    let data = lognormal_split(0.0, 0.8, 3);
    let mut config = tiny_config();
    config.max_epochs = 30;
    config.patience = 0;
    config.learning_rate = 0.3;
    let outcome = train(&data, 1, &config).unwrap();
    let log = &outcome.log;
    for w in log.windows(2).take(log.len().saturating_sub(2)) {
        assert!(w[1].val_nll < w[0].val_nll || w[1].epoch == log.last().unwrap().epoch);
    }
    if log.len() < config.max_epochs {
        let last = log.last().unwrap();
        assert!(last.val_nll >= log[outcome.best_epoch].val_nll);
        assert_eq!(last.epoch, outcome.best_epoch + 1);
    }
}

#[test]
fn padding_does_not_change_loss_or_gradient() {
    let seqs = random_sequences(5, 4, 7);
    let config = tiny_config();
    let model = initial_model(&seqs, 4, &config).unwrap();
    let seeds = |b: usize| 100 + b as u64;
    let plain = loss_and_gradients(&seqs, &model, Some(&seeds)).unwrap();
    let padded = loss_and_gradients_padded(&PaddedBatch::new(&seqs, Some(40)), &model, Some(&seeds)).unwrap();
    assert_eq!(plain.loss, padded.loss);
    assert_eq!(plain.grads.to_flat(), padded.grads.to_flat());
}

#[test]
fn zeroed_head_gives_closed_form_two_event_loss() {
    let seqs = vec![EventSequence::from_pairs("z", &[(1, 2.0), (2, 5.0)])];
    let config = tiny_config();
    let mut model: AmdnModel = initial_model(&seqs, 3, &config).unwrap();
    model.time_scale = 2.0;
    let head = &mut model.params.head;
    for m in [
        &mut head.v_weight,
        &mut head.b_weight,
        &mut head.v_scale,
        &mut head.b_scale,
        &mut head.v_mean,
        &mut head.b_mean,
        &mut head.w_type_out,
        &mut head.b_type_out,
    ] {
        m.fill(0.0);
    }
    // τ = 3 / 2 under a standard log-normal, uniform over three accounts
    let x = 1.5f64.ln();
    let time = x + HALF_LN_2PI + 0.5 * x * x + 2.0f64.ln();
    let types = 3.0f64.ln();
    let out = loss_and_gradients(&seqs, &model, None).unwrap();
    assert!((out.nll.time - time).abs() < 1e-12);
    assert!((out.nll.types - types).abs() < 1e-12);
    assert!((out.loss - (time + types)).abs() < 1e-12);
}

#[test]
fn evaluation_totals_add_across_subsets() {
    let seqs = random_sequences(9, 5, 11);
    let model = initial_model(&seqs, 5, &tiny_config()).unwrap();
    let whole = nll_totals(&seqs, &model).unwrap();
    let mut parts = nll_totals(&seqs[..4], &model).unwrap();
    parts.accumulate(&nll_totals(&seqs[4..], &model).unwrap());
    assert!((whole.total - parts.total).abs() < 1e-9 * whole.total.abs());
    assert_eq!(whole.predicted, parts.predicted);
    assert_eq!(whole.type_correct, parts.type_correct);
    let m = evaluate(&seqs, &model).unwrap();
    assert!((m.nll - (m.event_time_nll + m.event_type_nll)).abs() < 1e-12);
    assert_eq!(m.events, seqs.iter().map(|s| s.len() - 1).sum::<usize>());
    assert!(evaluate(&[], &model).is_err());
}

#[test]
fn training_is_reproducible_and_seed_sensitive() {
    let data = lognormal_split(0.3, 0.6, 4);
    let mut config = tiny_config();
    config.max_epochs = 3;
    let a = train(&data, 1, &config).unwrap();
    let b = train(&data, 1, &config).unwrap();
    assert_eq!(a.model, b.model);
    let val = |o: &amdn_core::training::TrainOutcome| o.log.iter().map(|r| r.val_nll).collect::<Vec<_>>();
    assert_eq!(val(&a), val(&b));
    config.seed = 1;
    let c = train(&data, 1, &config).unwrap();
    assert_ne!(a.model.params.to_flat(), c.model.params.to_flat());
}

#[test]
fn out_of_vocabulary_events_are_rejected() {
    let mut data = lognormal_split(0.0, 0.5, 5);
    data.train[0].events[3].account = 4;
    assert!(train(&data, 1, &tiny_config()).is_err());
}
