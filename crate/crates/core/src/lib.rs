//! Attention-based mixture density network for account event streams, a
//! multivariate Hawkes baseline and simulator, and coordinated-group detection.

pub mod density_head;
pub mod detection;
pub mod encoder;
pub mod hawkes;
pub mod error;
pub mod event_data;
pub mod linalg;
pub mod training;

pub use density_head::{HeadConfig, HeadParams, MixtureParams, SequenceNll};
pub use encoder::{EncodedSequence, EncoderConfig, EncoderParams, Mode, Summarizer, TemporalLayout};
pub use error::{Error, Result};
pub use event_data::{
    AccountVocabulary, DatasetSplit, Event, EventSequence, RawEvent, RawSequence, SplitFractions,
};
pub use linalg::Mat;
pub use training::{AmdnModel, Checkpoint, EvalMetrics, ModelConfig, ModelParams, TrainConfig};
pub use hawkes::{HawkesModel, ScenarioConfig};
pub use detection::{DetectionConfig, DetectionMetrics, DetectionResult, InfluenceMatrix};
