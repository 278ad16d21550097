use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density_head::{HeadConfig, HeadParams};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.head.validate()
    }
}

/// All learnable weights (θ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub head: HeadParams,
}

/// Whether weight decay applies to a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorRole {
    Weight,
    /// Biases, layer-norm gains and kernel amplitudes.
    Other,
}

macro_rules! tensor_list {
    ($self:ident, $($amp:tt)*) => {
        [
            ("embedding", TensorRole::Weight, $($amp)* $self.encoder.embedding),
            ("kernel_amp", TensorRole::Other, $($amp)* $self.encoder.kernel_amp),
            ("w_query", TensorRole::Weight, $($amp)* $self.encoder.w_query),
            ("w_key", TensorRole::Weight, $($amp)* $self.encoder.w_key),
            ("w_value", TensorRole::Weight, $($amp)* $self.encoder.w_value),
            ("ln_gain", TensorRole::Other, $($amp)* $self.encoder.ln_gain),
            ("ln_bias", TensorRole::Other, $($amp)* $self.encoder.ln_bias),
            ("w_ff", TensorRole::Weight, $($amp)* $self.encoder.w_ff),
            ("b_ff", TensorRole::Other, $($amp)* $self.encoder.b_ff),
            ("w_rec_in", TensorRole::Weight, $($amp)* $self.encoder.w_rec_in),
            ("w_rec_hidden", TensorRole::Weight, $($amp)* $self.encoder.w_rec_hidden),
            ("b_rec", TensorRole::Other, $($amp)* $self.encoder.b_rec),
            ("v_weight", TensorRole::Weight, $($amp)* $self.head.v_weight),
            ("b_weight", TensorRole::Other, $($amp)* $self.head.b_weight),
            ("v_scale", TensorRole::Weight, $($amp)* $self.head.v_scale),
            ("b_scale", TensorRole::Other, $($amp)* $self.head.b_scale),
            ("v_mean", TensorRole::Weight, $($amp)* $self.head.v_mean),
            ("b_mean", TensorRole::Other, $($amp)* $self.head.b_mean),
            ("w_type_hidden", TensorRole::Weight, $($amp)* $self.head.w_type_hidden),
            ("b_type_hidden", TensorRole::Other, $($amp)* $self.head.b_type_hidden),
            ("w_type_out", TensorRole::Weight, $($amp)* $self.head.w_type_out),
            ("b_type_out", TensorRole::Other, $($amp)* $self.head.b_type_out),
        ]
    };
}

impl ModelParams {
    pub fn init(
        config: &ModelConfig,
        vocab_size: usize,
        frequencies: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::Parameter("vocabulary is empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = EncoderParams::init(config.encoder.clone(), vocab_size, frequencies, &mut rng)?;
        let head = HeadParams::init(config.head.clone(), config.encoder.model_dim(), vocab_size, &mut rng)?;
        Ok(Self { encoder, head })
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder.config.clone(),
            head: self.head.config.clone(),
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.encoder.vocab_size()
    }

    /// Named tensors in canonical order.
    pub fn tensors(&self) -> [(&'static str, TensorRole, &Mat); 22] {
        tensor_list!(self, &)
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, TensorRole, &mut Mat); 22] {
        tensor_list!(self, &mut)
    }

    /// Same shapes, all zeros. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, _, t) in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_parameters());
        for (_, _, t) in self.tensors() {
            out.extend_from_slice(t.as_slice());
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_parameters() {
            return Err(Error::Parameter(format!(
                "flat vector has {} entries, model has {}",
                flat.len(),
                self.num_parameters()
            )));
        }
        let mut offset = 0;
        for (_, _, t) in self.tensors_mut() {
            let n = t.len();
            t.as_mut_slice().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        for ((_, _, a), (_, _, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for (_, _, t) in self.tensors_mut() {
            t.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, _, t)| t.is_finite())
    }
}

/// Parameters plus the data-derived constants needed to evaluate them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmdnModel {
    pub params: ModelParams,
    /// Training-set mean inter-event time; gaps are divided by it.
    pub time_scale: f64,
    /// Tied timestamps are clamped to this gap (seconds) before taking logs.
    pub min_interval: f64,
}

impl AmdnModel {
    pub fn vocab_size(&self) -> usize {
        self.params.vocab_size()
    }

    pub fn embeddings(&self) -> &Mat {
        &self.params.encoder.embedding
    }
}
