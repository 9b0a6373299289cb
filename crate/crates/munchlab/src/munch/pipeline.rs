//! The verdict rule, the per-question pipeline drivers, the equality-gated
//! baseline, and the decision log format.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    answer_subquestions, retrieval_gate, uncertainty_scores, DecomposedQuestion, Decomposer,
    DecomposerMode, ForgetMemory, HopAnswer, MunchError, ScoreNorm, DEFAULT_SIMILARITY_THRESHOLD,
};
use crate::corpus::resolve_subquestions;
use crate::kbgen::QaItem;
use crate::seqmodel::Model;
use crate::unlearner::DEFAULT_REJECTION_POOL;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Answer,
    Reject,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub verdict: Verdict,
    pub final_text: String,
}

/// Pipeline settings shared by every question of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub score_norm: ScoreNorm,
    pub similarity_threshold: f64,
    pub rejection_text: String,
    pub decomposer: DecomposerMode,
    /// Greedy-decoding budget per hop, also the context headroom reserved
    /// when assembling hop prompts.
    pub max_answer_tokens: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            score_norm: ScoreNorm::Mean,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            rejection_text: DEFAULT_REJECTION_POOL[0].to_string(),
            decomposer: DecomposerMode::Template,
            max_answer_tokens: 8,
        }
    }
}

/// One line of the decision log; field order is the file format. Non-finite
/// numbers (the +inf score sentinel, the baseline's absent threshold)
/// serialize as JSON null.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionTrace {
    pub question_id: String,
    pub subquestions: Vec<String>,
    pub hop_answers: Vec<String>,
    /// One entry per scored hop; scoring stops at the first gate hit, so
    /// this can be shorter than the hop count.
    pub scores: Vec<f64>,
    pub gate_hits: Vec<bool>,
    pub tau: f64,
    pub verdict: Verdict,
    pub final_text: String,
}

/// Reject iff any gate hit or any computed score exceeds the threshold;
/// otherwise the final answer is the last hop's text.
pub fn decide(
    gate_hits: &[bool],
    scores: &[f64],
    tau: f64,
    last_hop_answer: &str,
    rejection_text: &str,
) -> Decision {
    let reject = gate_hits.iter().any(|&h| h) || scores.iter().any(|&s| s > tau);
    if reject {
        Decision { verdict: Verdict::Reject, final_text: rejection_text.to_string() }
    } else {
        Decision { verdict: Verdict::Answer, final_text: last_hop_answer.to_string() }
    }
}

/// Full pipeline for one multi-hop question: decompose, answer each hop with
/// the original model, gate every resolved subquestion against the forget
/// memory, score hops before the first gate hit under the unlearned model,
/// decide. The trace keeps the subquestions in placeholder form; the gate
/// and the scorer see them resolved with the generated answers.
pub fn run_munch(
    original: &Model,
    unlearned: &Model,
    item: &QaItem,
    decomposer: &mut Decomposer,
    memory: &ForgetMemory,
    tau: f64,
    cfg: &PipelineConfig,
) -> Result<QuestionTrace, MunchError> {
    let dq = decomposer.decompose(item)?;
    let answers = answer_subquestions(original, &dq, cfg.max_answer_tokens)?;
    let answer_texts: Vec<String> =
        answers.iter().map(|a| a.generated_text.clone()).collect();
    let resolved = resolve_subquestions(&dq.subquestions, &answer_texts);
    let gate_hits: Vec<bool> =
        resolved.iter().map(|q| retrieval_gate(q, memory).1).collect();
    let scored = gate_hits.iter().position(|&h| h).unwrap_or(answers.len());
    let scores = uncertainty_scores(
        unlearned,
        &dq,
        &answers[..scored],
        cfg.score_norm,
        cfg.max_answer_tokens,
    )?;
    let last = answer_texts.last().map(|a| a.as_str()).unwrap_or("");
    let decision = decide(&gate_hits, &scores, tau, last, &cfg.rejection_text);
    Ok(QuestionTrace {
        question_id: item.id.0.clone(),
        subquestions: dq.subquestions,
        hop_answers: answer_texts,
        scores,
        gate_hits,
        tau,
        verdict: decision.verdict,
        final_text: decision.final_text,
    })
}

/// Equality-gated baseline: each hop retrieves the stored fact most similar
/// to its resolved subquestion, and a case-folded match between the
/// generated answer and the stored answer rejects the question. Returns the
/// decision and the per-hop match flags.
pub fn mello_baseline(
    dq: &DecomposedQuestion,
    answers: &[HopAnswer],
    memory: &ForgetMemory,
    rejection_text: &str,
) -> (Decision, Vec<bool>) {
    let answer_texts: Vec<String> =
        answers.iter().map(|a| a.generated_text.clone()).collect();
    let resolved = resolve_subquestions(&dq.subquestions, &answer_texts);
    let matches: Vec<bool> = answers
        .iter()
        .enumerate()
        .map(|(hop, ans)| {
            memory.most_similar(&resolved[hop]).is_some_and(|(idx, _)| {
                memory.entries[idx].answer.to_lowercase() == ans.generated_text.to_lowercase()
            })
        })
        .collect();
    let reject = matches.iter().any(|&m| m);
    let last = answers.last().map(|a| a.generated_text.as_str()).unwrap_or("");
    let decision = Decision {
        verdict: if reject { Verdict::Reject } else { Verdict::Answer },
        final_text: if reject { rejection_text.to_string() } else { last.to_string() },
    };
    (decision, matches)
}

/// Baseline driver with the same trace shape as [`run_munch`]; the baseline
/// has no uncertainty scores and no threshold (recorded as null), and its
/// gate column holds the per-hop equality matches.
pub fn run_mello(
    original: &Model,
    item: &QaItem,
    decomposer: &mut Decomposer,
    memory: &ForgetMemory,
    cfg: &PipelineConfig,
) -> Result<QuestionTrace, MunchError> {
    let dq = decomposer.decompose(item)?;
    let answers = answer_subquestions(original, &dq, cfg.max_answer_tokens)?;
    let (decision, matches) = mello_baseline(&dq, &answers, memory, &cfg.rejection_text);
    Ok(QuestionTrace {
        question_id: item.id.0.clone(),
        subquestions: dq.subquestions,
        hop_answers: answers.into_iter().map(|a| a.generated_text).collect(),
        scores: Vec::new(),
        gate_hits: matches,
        tau: f64::NAN,
        verdict: decision.verdict,
        final_text: decision.final_text,
    })
}

/// Line-delimited JSON, one trace per line, input order preserved.
pub fn write_traces(traces: &[QuestionTrace], out: &mut dyn Write) -> Result<(), MunchError> {
    for trace in traces {
        serde_json::to_writer(&mut *out, trace)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}
