//! Character-level BiLSTM-CRF sequence tagger trained from scratch.

pub mod crf;
pub mod lstm;
mod model;
pub mod tensor;
mod train;
mod vocab;

use thiserror::Error;

pub use model::{EncodedSentence, Params, TaggerModel, MODEL_FORMAT_VERSION};
pub use train::{augmentation_seed, build_vocabulary, predict, train, EpochRecord, TrainConfig, TrainOutcome};
pub use vocab::{TagSet, Vocabulary, PAD_TOKEN, UNK_TOKEN};

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("cannot tag an empty sentence")]
    EmptySentence,
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("tag {0} is not in the tag set")]
    InvalidGoldTag(String),
    #[error("loss diverged at epoch {epoch}, batch {batch} (loss = {loss})")]
    DivergedLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("parameter shapes are inconsistent with the vocabulary or tag set")]
    ShapeMismatch,
    #[error("model contains non-finite parameters")]
    NonFiniteParameters,
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("model file version {found} is not supported (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },
    #[error("evaluation failed: {0}")]
    Evaluation(String),
    #[error("{0}")]
    Io(String),
}
