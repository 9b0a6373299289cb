//! Post-hoc rejection pipeline for multi-hop questions, plus an
//! equality-gated baseline.
//!
//! A multi-hop question is decomposed into per-hop subquestions, each hop is
//! answered greedily by the original model with the running transcript as
//! context, and every answer is scored for uncertainty under the unlearned
//! model. A question is rejected when any hop's score exceeds a calibrated
//! threshold or when a retrieval gate finds a subquestion too similar to a
//! stored forget fact; otherwise the last hop's answer is returned.

mod calibrate;
mod decompose;
mod memory;
mod pipeline;
mod score;

pub use calibrate::{calibrate_threshold, write_density_tsv, CalibrationReport, DensityBin, DENSITY_BINS};
pub use decompose::{
    split_rendered_question, DecomposedQuestion, Decomposer, DecomposerMode, DecompositionOrigin,
    HttpDecomposer, SubprocessDecomposer,
};
pub use memory::{
    retrieval_gate, trigram_cosine, ForgetMemory, MemoryEntry, DEFAULT_SIMILARITY_THRESHOLD,
};
pub use pipeline::{
    decide, mello_baseline, run_mello, run_munch, write_traces, Decision, PipelineConfig,
    QuestionTrace, Verdict,
};
pub use score::{answer_subquestions, hop_prompt, uncertainty_scores, HopAnswer, ScoreNorm};

use thiserror::Error;

use crate::seqmodel::{ModelError, ModelTag};

#[derive(Debug, Error)]
pub enum MunchError {
    #[error("question {0} is not multi-hop")]
    NotMultiHop(String),
    #[error("hop answering requires the original checkpoint, got {0:?}")]
    Producer(ModelTag),
    #[error("decomposition invalid: {0}")]
    DecompositionInvalid(String),
    #[error("decomposer protocol: {0}")]
    Protocol(String),
    #[error("{side} score list is empty")]
    EmptyScores { side: &'static str },
    #[error("hop {hop} alone needs {len} prompt tokens but only {max} fit")]
    ContextOverflow { hop: usize, len: usize, max: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl MunchError {
    pub fn code(&self) -> &'static str {
        match self {
            MunchError::NotMultiHop(_) => "munch.not_multi_hop",
            MunchError::Producer(_) => "munch.producer",
            MunchError::DecompositionInvalid(_) => "munch.decomposition_invalid",
            MunchError::Protocol(_) => "munch.protocol",
            MunchError::EmptyScores { .. } => "munch.empty_scores",
            MunchError::ContextOverflow { .. } => "munch.context_overflow",
            MunchError::Model(e) => e.code(),
            MunchError::Io(_) => "munch.io",
            MunchError::Json(_) => "munch.json",
        }
    }
}
