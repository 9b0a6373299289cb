//! A small decoder-only attention language model with exact hand-written
//! gradients.
//!
//! Two independent execution paths cover every use:
//! * the batched path ([`batch_nll`], [`batch_nll_grad`]) packs ragged
//!   examples into one flat buffer and drives GEMM kernels; it powers
//!   training and bulk scoring;
//! * the incremental path ([`DecodeState`], [`greedy_decode`],
//!   [`sequence_nll`], [`next_token_logprobs`]) advances a KV cache one
//!   token at a time; it powers decoding and per-candidate scoring.
//!
//! Both are deterministic: same parameters, same inputs, same floats.

mod arch;
mod checkpoint;
mod decode;
mod linalg;
mod model;
mod optim;
mod train;
pub mod vocab;

use thiserror::Error;

pub use arch::{ModelArch, HEAD_DIM};
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use decode::{greedy_decode, next_token_logprobs, sequence_nll, DecodeState, Decoded};
pub use model::{batch_nll, batch_nll_grad, BatchValues, Model, ModelTag, SeqExample, RMS_EPS};
pub use optim::{clip_grad_norm, AdamW, OptimConfig};
pub use train::{fit, FitReport, TrainConfig};
pub use vocab::{tokenize_words, Vocabulary, BOS, EOS, SEP, UNK};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid architecture: {0}")]
    ArchInvalid(String),
    #[error("sequence length {len} exceeds context window {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty prompt")]
    EmptyPrompt,
    #[error("empty target")]
    EmptyTarget,
    #[error("token id {id} outside vocabulary of {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error("{got} weights for a batch of {want}")]
    WeightCount { got: usize, want: usize },
    #[error("parameter buffer holds {got} values, architecture needs {want}")]
    ParamCount { got: usize, want: usize },
    #[error("training diverged at step {step}; parameters restored to last finite epoch")]
    Diverged { step: u64 },
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("tensor manifest mismatch: {0}")]
    ManifestMismatch(String),
    #[error("checksum mismatch for {path}")]
    ChecksumMismatch { path: String },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint json: {0}")]
    Json(#[from] serde_json::Error),
}

impl ModelError {
    pub fn code(&self) -> &'static str {
        match self {
            ModelError::ArchInvalid(_) => "seqmodel.arch_invalid",
            ModelError::ContextOverflow { .. } => "seqmodel.context_overflow",
            ModelError::EmptyBatch => "seqmodel.empty_batch",
            ModelError::EmptyPrompt => "seqmodel.empty_prompt",
            ModelError::EmptyTarget => "seqmodel.empty_target",
            ModelError::TokenOutOfRange { .. } => "seqmodel.token_out_of_range",
            ModelError::WeightCount { .. } => "seqmodel.weight_count",
            ModelError::ParamCount { .. } => "seqmodel.param_count",
            ModelError::Diverged { .. } => "seqmodel.diverged",
            ModelError::CheckpointVersion { .. } => "seqmodel.checkpoint_version",
            ModelError::ManifestMismatch(_) => "seqmodel.manifest_mismatch",
            ModelError::ChecksumMismatch { .. } => "seqmodel.checksum_mismatch",
            ModelError::Io(_) => "seqmodel.io",
            ModelError::Json(_) => "seqmodel.json",
        }
    }
}
