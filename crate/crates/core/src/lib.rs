pub mod chat;
pub mod checkpoint;
pub mod config;
pub mod critic;
pub mod error;
pub mod generator;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod tensor;
pub mod text;
pub mod toy;
pub mod trainer;

pub use chat::{ChatEngine, ChatTurn, Reply};
pub use checkpoint::{weights_checksum, Checkpoint};
pub use generator::{mle_loss, token_accuracy, GeneratorModel, GumbelRollout, Memory};
pub use critic::{assemble_pair, AnswerSource, CriticModel, PairBatch};
pub use config::{CriticFeed, CriticPooling, ModelConfig, PositionalCombine, TrainConfig};
pub use error::{Error, Result, TensorError};
pub use trainer::{
    adversarial_epoch, pretrain, pretrain_with, run_schedule, AdversarialTrainer, EpochSummary, HistoryRecord, Phase,
    Pretrainer, Schedule, TrainState,
};
pub use metrics::{evaluate_corpus, GeneratorResponder, MetricReport, Responder};
pub use tensor::{no_grad, Scalar, Tensor};
