use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{simulate_with, HawkesModel};
use crate::error::{Error, Result};
use crate::event_data::{EventSequence, RawEvent, RawSequence};
use crate::linalg::Mat;

/// Synthetic population with one planted coordinated group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub num_accounts: usize,
    /// Indices of the coordinated accounts.
    pub group: Vec<usize>,
    /// `α` between two group members.
    pub intra_excitation: f64,
    /// `α` for every other pair except outsider to group.
    pub background_excitation: f64,
    /// `α` from an outsider's event to a group member.
    pub outsider_to_group_excitation: f64,
    /// Base rates are drawn uniformly from this range.
    pub base_rate_range: [f64; 2],
    pub decay: f64,
    pub horizon: f64,
    pub num_sequences: usize,
    pub max_events: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            num_accounts: 30,
            group: (0..6).collect(),
            intra_excitation: 0.5 / 6.0,
            background_excitation: 0.02,
            outsider_to_group_excitation: 1e-4,
            base_rate_range: [0.02, 0.05],
            decay: 1.0,
            horizon: 50.0,
            num_sequences: 200,
            max_events: 100_000,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_accounts == 0 || self.num_sequences == 0 {
            return Err(Error::Parameter("num_accounts and num_sequences must be positive".into()));
        }
        let mut seen = vec![false; self.num_accounts];
        for &g in &self.group {
            if g >= self.num_accounts {
                return Err(Error::UnknownAccount {
                    index: g,
                    size: self.num_accounts,
                });
            }
            if std::mem::replace(&mut seen[g], true) {
                return Err(Error::Parameter(format!("account {g} listed twice in the group")));
            }
        }
        let levels = [
            self.intra_excitation,
            self.background_excitation,
            self.outsider_to_group_excitation,
        ];
        if levels.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Parameter("excitation levels must be non-negative".into()));
        }
        let [lo, hi] = self.base_rate_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::Parameter(format!("base rate range [{lo}, {hi}] is invalid")));
        }
        if !(self.decay > 0.0 && self.horizon > 0.0) || self.decay.is_infinite() || self.horizon.is_infinite() {
            return Err(Error::Parameter("decay and horizon must be positive".into()));
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<bool> {
        let mut labels = vec![false; self.num_accounts];
        for &g in &self.group {
            labels[g] = true;
        }
        labels
    }

    /// Ground-truth Hawkes model with base rates drawn from `rng`.
    pub fn model(&self, rng: &mut impl Rng) -> Result<HawkesModel> {
        self.validate()?;
        let labels = self.labels();
        let alpha = Mat::from_fn(self.num_accounts, self.num_accounts, |i, j| match (labels[i], labels[j]) {
            (true, true) => self.intra_excitation,
            (true, false) => self.outsider_to_group_excitation,
            _ => self.background_excitation,
        });
        let [lo, hi] = self.base_rate_range;
        let mu = (0..self.num_accounts)
            .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
            .collect();
        HawkesModel::dense(mu, alpha, self.decay)
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: HawkesModel,
    pub sequences: Vec<EventSequence>,
    /// One entry per account: whether it belongs to the planted group.
    pub labels: Vec<bool>,
}

impl Scenario {
    /// Sequences with account names, ready for the event-log writer.
    pub fn raw_sequences(&self) -> Vec<RawSequence> {
        let names = account_names(self.labels.len());
        self.sequences
            .iter()
            .map(|s| RawSequence {
                id: s.id.clone(),
                events: s
                    .events
                    .iter()
                    .map(|e| RawEvent {
                        account: names[e.account].clone(),
                        timestamp: e.time,
                    })
                    .collect(),
            })
            .collect()
    }
}

pub fn account_names(n: usize) -> Vec<String> {
    let width = n.saturating_sub(1).to_string().len().max(2);
    (0..n).map(|i| format!("acct_{i:0width$}")).collect()
}

/// Builds the ground-truth model, checks stability and simulates every
/// sequence on its own random stream.
pub fn make_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let model = config.model(&mut rng)?;
    model.check_stable()?;
    let sequences = (0..config.num_sequences)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            simulate_with(&model, config.horizon, config.max_events, &mut rng, format!("seq_{k:04}"))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        model,
        sequences,
        labels: config.labels(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_construction_is_stable_with_six_positives() {
        let cfg = ScenarioConfig {
            num_sequences: 3,
            ..ScenarioConfig::default()
        };
        let s = make_scenario(&cfg, 1).unwrap();
        assert_eq!(s.labels.iter().filter(|l| **l).count(), 6);
        assert!(s.model.branching_ratio() < 1.0);
        assert_eq!(s.sequences.len(), 3);
        let again = make_scenario(&cfg, 1).unwrap();
        assert_eq!(s.sequences, again.sequences);
    }

    #[test]
    fn excitation_pattern_follows_group_membership() {
        let cfg = ScenarioConfig::default();
        let m = cfg.model(&mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(m.alpha(0, 1), cfg.intra_excitation);
        assert_eq!(m.alpha(0, 10), cfg.outsider_to_group_excitation);
        assert_eq!(m.alpha(10, 0), cfg.background_excitation);
        assert_eq!(m.alpha(10, 11), cfg.background_excitation);
    }

    #[test]
    fn unstable_or_malformed_configs_fail_before_simulation() {
        let hot = ScenarioConfig {
            background_excitation: 0.2,
            ..ScenarioConfig::default()
        };
        assert!(matches!(make_scenario(&hot, 0), Err(Error::Stability(_))));
        let bad = ScenarioConfig {
            group: vec![0, 40],
            ..ScenarioConfig::default()
        };
        assert!(make_scenario(&bad, 0).is_err());
        let dup = ScenarioConfig {
            group: vec![1, 1],
            ..ScenarioConfig::default()
        };
        assert!(dup.validate().is_err());
    }

    #[test]
    fn names_sort_in_index_order() {
        let names = account_names(30);
        assert_eq!(names[3], "acct_03");
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(sorted, names);
    }
}
