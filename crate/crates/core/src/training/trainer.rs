use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density_head::{sequence_nll, SequenceNll};
use crate::encoder::{encode, frequency_grid, Mode};
use crate::error::{Error, Result};
use crate::event_data::{DatasetSplit, EventSequence, SplitFractions};
use crate::training::adam::{adam_step, DecayMode, OptimizerState};
use crate::training::backprop::loss_and_gradients;
use crate::training::params::{AmdnModel, ModelConfig, ModelParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub max_len: usize,
    pub min_activity: usize,
    pub fractions: SplitFractions,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            max_len: 128,
            min_activity: 10,
            fractions: SplitFractions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub data: DataConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub patience: usize,
    pub seed: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
    /// Gap (seconds) substituted for tied timestamps.
    pub min_interval: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: DataConfig::default(),
            batch_size: 256,
            max_epochs: 1000,
            patience: 10,
            seed: 0,
            learning_rate: 1e-3,
            weight_decay: 1e-5,
            decay_mode: DecayMode::Decoupled,
            min_interval: 1e-4,
        }
    }
}

impl TrainConfig {
    /// Compact model and small batches for synthetic runs of a few hundred
    /// sequences on a laptop CPU.
    pub fn desk() -> Self {
        let mut c = Self {
            batch_size: 16,
            max_epochs: 40,
            patience: 5,
            learning_rate: 3e-3,
            ..Self::default()
        };
        let enc = &mut c.model.encoder;
        enc.event_dim = 16;
        enc.position_dim = 8;
        enc.time_dim = 8;
        enc.num_frequencies = 4;
        c.model.head.components = 4;
        c.model.head.type_hidden = 32;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.data.fractions.validate()?;
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Parameter("batch_size and max_epochs must be positive".into()));
        }
        if self.data.max_len < 2 {
            return Err(Error::Parameter("max_len must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) || !(self.min_interval > 0.0) {
            return Err(Error::Parameter(
                "learning_rate and min_interval must be positive, weight_decay non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation NLL.
    pub model: AmdnModel,
    /// Optimizer state captured alongside the best parameters.
    pub optimizer: OptimizerState,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
}

/// Per-event metrics over a set of sequences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub nll: f64,
    pub event_time_nll: f64,
    pub event_type_nll: f64,
    pub event_type_accuracy: f64,
    pub events: usize,
}

impl EvalMetrics {
    pub fn from_totals(t: &SequenceNll) -> Self {
        let n = t.predicted.max(1) as f64;
        Self {
            nll: t.total / n,
            event_time_nll: t.time / n,
            event_type_nll: t.types / n,
            event_type_accuracy: t.type_correct as f64 / n,
            events: t.predicted,
        }
    }
}

/// Evaluation-mode NLL totals, summed in input order.
pub fn nll_totals(data: &[EventSequence], model: &AmdnModel) -> Result<SequenceNll> {
    let parts: Vec<Result<SequenceNll>> = data
        .par_iter()
        .map(|seq| {
            let encoded = encode(seq, &model.params.encoder, model.time_scale, Mode::Eval)?;
            sequence_nll(seq, &encoded, &model.params.head, model.time_scale, model.min_interval)
        })
        .collect();
    let mut total = SequenceNll::default();
    for p in parts {
        total.accumulate(&p?);
    }
    Ok(total)
}

pub fn evaluate(data: &[EventSequence], model: &AmdnModel) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::Parameter("nothing to evaluate".into()));
    }
    Ok(EvalMetrics::from_totals(&nll_totals(data, model)?))
}

/// Mean gap over the training chunks; 1 when every gap is zero.
pub fn mean_inter_event_time(data: &[EventSequence]) -> f64 {
    let (sum, n) = data
        .iter()
        .flat_map(|s| s.time_deltas().into_iter().skip(1))
        .fold((0.0, 0usize), |(s, n), d| (s + d, n + 1));
    if n == 0 || !(sum > 0.0) {
        1.0
    } else {
        sum / n as f64
    }
}

fn mix_seed(parts: [u64; 4]) -> u64 {
    // splitmix64 over the concatenated words
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        let mut z = h;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h = z ^ (z >> 31);
    }
    h
}

/// Fresh model whose time scale and kernel frequencies come from `train`.
pub fn initial_model(train: &[EventSequence], vocab_size: usize, config: &TrainConfig) -> Result<AmdnModel> {
    let time_scale = mean_inter_event_time(train);
    let gaps = train
        .iter()
        .flat_map(|s| s.time_deltas().into_iter().skip(1))
        .map(|g| g / time_scale);
    let frequencies = frequency_grid(gaps, config.model.encoder.num_frequencies);
    Ok(AmdnModel {
        params: ModelParams::init(&config.model, vocab_size, frequencies, config.seed)?,
        time_scale,
        min_interval: config.min_interval,
    })
}

/// Mini-batch Adam with early stopping on validation NLL.
pub fn train(data: &DatasetSplit, vocab_size: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    train_from(initial_model(&data.train, vocab_size, config)?, data, config)
}

pub fn train_from(mut model: AmdnModel, data: &DatasetSplit, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if data.train.is_empty() || data.validation.is_empty() {
        return Err(Error::Parameter("train and validation splits must be non-empty".into()));
    }
    for s in data.train.iter().chain(&data.validation) {
        s.validate(model.vocab_size())?;
    }
    let mut optimizer = OptimizerState::new(
        &model.params,
        config.learning_rate,
        config.weight_decay,
        config.decay_mode,
    );
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed([config.seed, 0x5eed, 0, 0]));
    let start = Instant::now();

    let mut best: Option<(f64, AmdnModel, OptimizerState, usize)> = None;
    let mut since_best = 0usize;
    let mut log = Vec::new();
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_total = SequenceNll::default();
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<EventSequence> = idx.iter().map(|&i| data.train[i].clone()).collect();
            let seed_for = |pos: usize| mix_seed([config.seed, epoch as u64, b as u64, pos as u64]);
            let out = loss_and_gradients(&batch, &model, Some(&seed_for))?;
            if !out.grads.is_finite() {
                return Err(Error::Divergence(format!("non-finite gradient at epoch {epoch}, batch {b}")));
            }
            epoch_total.accumulate(&out.nll);
            adam_step(&mut model.params, &out.grads, &mut optimizer);
        }
        let val = evaluate(&data.validation, &model)?;
        if !val.nll.is_finite() {
            return Err(Error::Divergence(format!("validation NLL {} at epoch {epoch}", val.nll)));
        }
        let record = EpochRecord {
            epoch,
            train_nll: epoch_total.per_event(),
            val_nll: val.nll,
            wall_time_s: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch}: train {:.5} val {:.5}",
            record.train_nll,
            record.val_nll
        );
        log.push(record);

        let improved = best.as_ref().is_none_or(|(v, ..)| val.nll < *v);
        if improved {
            best = Some((val.nll, model.clone(), optimizer.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > config.patience {
                break;
            }
        }
    }
    let (_, model, optimizer, best_epoch) = best.expect("at least one epoch runs");
    Ok(TrainOutcome {
        model,
        optimizer,
        log,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_gap_ignores_first_events() {
        let seqs = vec![
            EventSequence::from_pairs("a", &[(0, 10.0), (0, 11.0), (0, 14.0)]),
            EventSequence::from_pairs("b", &[(0, 0.0), (0, 2.0)]),
        ];
        assert!((mean_inter_event_time(&seqs) - 2.0).abs() < 1e-15);
        let ties = vec![EventSequence::from_pairs("a", &[(0, 1.0), (0, 1.0)])];
        assert_eq!(mean_inter_event_time(&ties), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: -1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn defaults_match_documented_protocol() {
        let c = TrainConfig::default();
        assert_eq!(c.batch_size, 256);
        assert_eq!(c.max_epochs, 1000);
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.weight_decay, 1e-5);
        assert_eq!(c.data.max_len, 128);
        assert_eq!(c.data.fractions, SplitFractions::new(0.75, 0.15, 0.10));
        assert_eq!(c.model.head.components, 8);
        assert_eq!(c.model.encoder.model_dim(), 64);
    }

    #[test]
    fn seed_mixing_separates_inputs() {
        assert_ne!(mix_seed([1, 0, 0, 0]), mix_seed([0, 1, 0, 0]));
        assert_eq!(mix_seed([3, 4, 5, 6]), mix_seed([3, 4, 5, 6]));
    }
}
