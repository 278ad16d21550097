use std::path::Path;

use amdn_core::detection::SupervisedConfig;
use amdn_core::hawkes::HawkesFitConfig;
use amdn_core::{DetectionConfig, ScenarioConfig, TrainConfig};
use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

/// Everything a run can be configured with. Each subcommand reads the
/// sections it needs; all of them are validated before any work starts.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for every stochastic step of the run.
    pub seed: Option<u64>,
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub detection: DetectionConfig,
    pub supervised: SupervisedConfig,
    pub hawkes: HawkesFitConfig,
}

impl RunConfig {
    /// Reads `path` (or defaults), lets `seed` override the file, and pushes
    /// the effective seed into every section.
    pub fn load(path: Option<&Path>, seed: Option<u64>) -> Result<Self> {
        let mut config: RunConfig = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("config {} does not match the schema", p.display()))?
            }
            None => RunConfig::default(),
        };
        if seed.is_some() {
            config.seed = seed;
        }
        let s = config.seed.unwrap_or(0);
        config.seed = Some(s);
        config.train.seed = s;
        config.detection.cluster.seed = s;
        config.supervised.seed = s;
        config.hawkes.seed = s;
        config.validate()?;
        Ok(config)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().context("[scenario]")?;
        self.train.validate().context("[train]")?;
        self.detection.validate().context("[detection]")?;
        self.supervised.validate().context("[supervised]")?;
        self.hawkes.validate().context("[hawkes]")?;
        Ok(())
    }
}
