//! Desk-scale machine-unlearning laboratory.
//!
//! The crate is organized as a pipeline over one shared artifact chain:
//!
//! ```text
//! kbgen ──► DatasetBundle ──► corpus ──► seqmodel::fit ──► ModelCheckpoint
//!                                │                              │
//!                                ├──► unlearner ────────────────┼──► unlearned checkpoint
//!                                │                              │
//!                                └──► munch (decompose/answer/  │
//!                                     score/calibrate/decide) ◄─┘
//!                                                │
//!                                       evalsuite (PA, ROUGE-L, LM) ──► reports
//! ```
//!
//! `kbgen` builds a synthetic relational knowledge base plus single- and
//! multi-hop question sets with forget/retain splits. `seqmodel` is a small
//! decoder-only attention model trained from scratch on renderings of that
//! knowledge base. `unlearner` applies gradient-ascent and preference-based
//! unlearning objectives, optionally mixed with a retain term. `munch`
//! decomposes multi-hop questions, answers hops with the original model,
//! scores those answers under the unlearned model, and rejects when the
//! uncertainty or a retrieval gate says the question touches forgotten
//! ground. `evalsuite` measures probing accuracy, ROUGE-L recall, and LM
//! loss for every split; `experiment` wires the stages into reproducible
//! run directories.
//!
//! Everything is deterministic given a seed: generation, training,
//! decoding, and report serialization are all single-threaded and driven by
//! explicitly derived random streams.

pub mod corpus;
pub mod evalsuite;
pub mod experiment;
pub mod hashutil;
pub mod kbgen;
pub mod munch;
pub mod rngutil;
pub mod seqmodel;
pub mod unlearner;
