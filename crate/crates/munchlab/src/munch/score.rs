//! Hop answering with the original model and uncertainty scoring with the
//! unlearned model. Both sides resolve follow-up subquestions with the
//! previous hop's generated answer and build the hop prompt through the
//! same function, so scores are evaluated in exactly the context the
//! answers were generated in.

use serde::{Deserialize, Serialize};

use super::{DecomposedQuestion, MunchError};
use crate::corpus::resolve_subquestion;
use crate::seqmodel::{greedy_decode, sequence_nll, Model, ModelTag, BOS, SEP};

/// Uncertainty normalization: mean per generated token (default) or the
/// plain sequence sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreNorm {
    #[default]
    Mean,
    Sum,
}

/// One hop's greedy answer from the original checkpoint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HopAnswer {
    pub index: usize,
    pub generated_text: String,
    /// Word tokens as generated; the end token is not included.
    pub token_ids: Vec<u32>,
    /// False when generation ran out of context or token budget instead.
    pub hit_eos: bool,
    /// Leading hops dropped from this hop's prompt to fit the context.
    pub truncated_hops: usize,
}

/// Prompt for hop `hop` (zero-based): `<bos>`, then each kept hop's
/// subquestion tokens and `<sep>`, with prior hops followed by their answer
/// tokens and `<sep>`. Oldest hops are dropped first until the prompt leaves
/// `answer_budget` tokens of room; the drop count is returned with the
/// prompt.
pub fn hop_prompt(
    subq_tokens: &[Vec<u32>],
    answer_tokens: &[Vec<u32>],
    hop: usize,
    context_len: usize,
    answer_budget: usize,
) -> Result<(Vec<u32>, usize), MunchError> {
    let budget = context_len.saturating_sub(answer_budget);
    let assemble = |start: usize| {
        let mut p = vec![BOS];
        for h in start..=hop {
            p.extend_from_slice(&subq_tokens[h]);
            p.push(SEP);
            if h < hop {
                p.extend_from_slice(&answer_tokens[h]);
                p.push(SEP);
            }
        }
        p
    };
    for start in 0..=hop {
        let prompt = assemble(start);
        if prompt.len() <= budget {
            return Ok((prompt, start));
        }
    }
    let minimal = assemble(hop);
    Err(MunchError::ContextOverflow { hop, len: minimal.len(), max: budget })
}

/// Answers each subquestion in order, greedily, with the running transcript
/// of earlier subquestions and answers as context. Each follow-up is
/// resolved with the answer just generated before it is asked.
pub fn answer_subquestions(
    original: &Model,
    dq: &DecomposedQuestion,
    max_answer_tokens: usize,
) -> Result<Vec<HopAnswer>, MunchError> {
    if original.tag != ModelTag::Original {
        return Err(MunchError::Producer(original.tag));
    }
    let vocab = &original.vocab;
    let hops = dq.subquestions.len();
    let mut answers: Vec<HopAnswer> = Vec::with_capacity(hops);
    let mut subq_tokens: Vec<Vec<u32>> = Vec::with_capacity(hops);
    let mut answer_tokens: Vec<Vec<u32>> = Vec::with_capacity(hops);
    for (hop, subq) in dq.subquestions.iter().enumerate() {
        let prev = answers.last().map(|a: &HopAnswer| a.generated_text.as_str());
        subq_tokens.push(vocab.encode(&resolve_subquestion(subq, prev)));
        let (prompt, truncated_hops) = hop_prompt(
            &subq_tokens,
            &answer_tokens,
            hop,
            original.arch.context_len,
            max_answer_tokens,
        )?;
        let decoded = greedy_decode(original, &prompt, max_answer_tokens)?;
        answers.push(HopAnswer {
            index: hop,
            generated_text: vocab.decode(&decoded.tokens),
            token_ids: decoded.tokens.clone(),
            hit_eos: decoded.hit_eos,
            truncated_hops,
        });
        answer_tokens.push(decoded.tokens);
    }
    Ok(answers)
}

/// Per-hop uncertainty of generated answers under `scorer` (the unlearned
/// checkpoint in the pipeline): NLL of the answer tokens in their original
/// prompt context. An empty answer scores +inf, forcing rejection.
pub fn uncertainty_scores(
    scorer: &Model,
    dq: &DecomposedQuestion,
    answers: &[HopAnswer],
    norm: ScoreNorm,
    max_answer_tokens: usize,
) -> Result<Vec<f64>, MunchError> {
    let vocab = &scorer.vocab;
    // Identical resolution to answer_subquestions, so each answer is scored
    // under the exact prompt it was generated from.
    let subq_tokens: Vec<Vec<u32>> = dq.subquestions[..answers.len()]
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let prev = i.checked_sub(1).map(|p| answers[p].generated_text.as_str());
            vocab.encode(&resolve_subquestion(q, prev))
        })
        .collect();
    let answer_tokens: Vec<Vec<u32>> = answers.iter().map(|a| a.token_ids.clone()).collect();
    let mut scores = Vec::with_capacity(answers.len());
    for (hop, ans) in answers.iter().enumerate() {
        if ans.token_ids.is_empty() {
            scores.push(f64::INFINITY);
            continue;
        }
        let (prompt, _) = hop_prompt(
            &subq_tokens,
            &answer_tokens,
            hop,
            scorer.arch.context_len,
            max_answer_tokens,
        )?;
        let nll = sequence_nll(scorer, &prompt, &ans.token_ids)?;
        scores.push(match norm {
            ScoreNorm::Mean => nll / ans.token_ids.len() as f64,
            ScoreNorm::Sum => nll,
        });
    }
    Ok(scores)
}
