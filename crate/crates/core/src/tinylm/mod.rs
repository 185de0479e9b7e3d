//! Small decoder-only transformer trained from scratch on the arithmetic
//! dataset: RMSNorm pre-normalization, rotary positions inside attention,
//! GELU MLP, untied unembedding. Forward and backward passes are written
//! out by hand over flat parameter storage.

mod backward;
pub mod checkpoint;
mod config;
mod forward;
pub mod gradcheck;
mod params;
mod scalar;
mod train;
mod vocab;

use thiserror::Error;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::{ModelConfig, TrainConfig};
pub use forward::{argmax, top_k, ForwardResult};
pub use gradcheck::{compare_gradients, grad_check, GradCheckReport};
pub use params::{LayerParams, Model, ModelBundle, ParamEntry, ParamLayout, TrainingMeta};
pub use scalar::{matmul, matmul_nt, matmul_tn, DType, Scalar};
pub use train::{dataset_hash, split_indices, AdamState, Example, MetricPoint, TrainOutcome};
pub use vocab::{Token, TokenId, Vocab, MAX_INT};

use crate::tracing::HookError;

#[derive(Debug, Error)]
pub enum TinyLmError {
    #[error("unknown lexeme {0:?}")]
    UnknownLexeme(String),
    #[error("sequence length {len} exceeds max_seq {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("empty token sequence")]
    EmptySequence,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Hook(#[from] HookError),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version {found} does not match supported version {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
