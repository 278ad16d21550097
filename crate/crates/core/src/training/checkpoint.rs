use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_data::AccountVocabulary;
use crate::training::adam::{DecayMode, OptimizerState};
use crate::training::params::{AmdnModel, ModelConfig, ModelParams};
use crate::training::trainer::TrainConfig;

pub const CHECKPOINT_FORMAT: &str = "amdn-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSnapshot {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
}

/// Everything needed to rebuild a trained model and resume its optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub vocabulary: AccountVocabulary,
    pub time_scale: f64,
    pub min_interval: f64,
    pub frequencies: Vec<f64>,
    pub parameters: Vec<f64>,
    pub optimizer: OptimizerSnapshot,
    /// Epoch the stored parameters come from.
    pub epoch: usize,
}

impl Checkpoint {
    pub fn new(
        config: &TrainConfig,
        vocabulary: &AccountVocabulary,
        model: &AmdnModel,
        optimizer: &OptimizerState,
        epoch: usize,
    ) -> Result<Self> {
        if vocabulary.len() != model.vocab_size() {
            return Err(Error::Checkpoint(format!(
                "vocabulary has {} accounts, model has {}",
                vocabulary.len(),
                model.vocab_size()
            )));
        }
        let mut config = config.clone();
        config.model = model.params.config();
        Ok(Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config,
            vocabulary: vocabulary.clone(),
            time_scale: model.time_scale,
            min_interval: model.min_interval,
            frequencies: model.params.encoder.frequencies.clone(),
            parameters: model.params.to_flat(),
            optimizer: OptimizerSnapshot {
                first_moment: optimizer.first_moment.to_flat(),
                second_moment: optimizer.second_moment.to_flat(),
                step: optimizer.step,
                learning_rate: optimizer.learning_rate,
                weight_decay: optimizer.weight_decay,
                decay_mode: optimizer.decay_mode,
            },
            epoch,
        })
    }

    fn empty_params(&self) -> Result<ModelParams> {
        ModelParams::init(&self.model_config(), self.vocabulary.len(), self.frequencies.clone(), 0)
            .map_err(|e| Error::Checkpoint(format!("invalid model configuration: {e}")))
    }

    pub fn model_config(&self) -> ModelConfig {
        self.config.model.clone()
    }

    pub fn model(&self) -> Result<AmdnModel> {
        let mut params = self.empty_params()?;
        params
            .load_flat(&self.parameters)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(AmdnModel {
            params,
            time_scale: self.time_scale,
            min_interval: self.min_interval,
        })
    }

    pub fn optimizer(&self) -> Result<OptimizerState> {
        let template = self.empty_params()?;
        let mut first_moment = template.zeros_like();
        let mut second_moment = template.zeros_like();
        first_moment
            .load_flat(&self.optimizer.first_moment)
            .and_then(|_| second_moment.load_flat(&self.optimizer.second_moment))
            .map_err(|e| Error::Checkpoint(format!("optimizer moments: {e}")))?;
        Ok(OptimizerState {
            first_moment,
            second_moment,
            step: self.optimizer.step,
            learning_rate: self.optimizer.learning_rate,
            weight_decay: self.optimizer.weight_decay,
            decay_mode: self.optimizer.decay_mode,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(s)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unrecognized format {:?}", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                ckpt.version
            )));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
