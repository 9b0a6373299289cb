//! Split-level metrics (probing accuracy, ROUGE-L recall, LM loss) and the
//! four-cell report assembly, with optional routing of multi-hop questions
//! through the rejection pipeline or its baseline.
//!
//! Probing accuracy ranks closed candidate sets (all knowledge-base objects
//! of the item's relation) by sequence log-probability and is macro-averaged
//! over relations. Multi-hop cells under a pipeline score exact match on the
//! pipeline's final text instead, since rank is undefined for emitted text.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::qa_example;
use crate::kbgen::{DatasetBundle, QaItem, QuestionId, QuestionKind, Split};
use crate::munch::{
    run_mello, run_munch, Decomposer, ForgetMemory, MunchError, PipelineConfig, QuestionTrace,
    Verdict,
};
use crate::seqmodel::{
    batch_nll, greedy_decode, tokenize_words, DecodeState, Model, ModelError, SeqExample,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("pipeline munch needs a calibrated threshold; run calibration first")]
    MissingTau,
    #[error("no items in the {split}/{hops} cell")]
    EmptyCell { split: &'static str, hops: &'static str },
    #[error(transparent)]
    Munch(#[from] MunchError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl EvalError {
    pub fn code(&self) -> &'static str {
        match self {
            EvalError::MissingTau => "evalsuite.missing_tau",
            EvalError::EmptyCell { .. } => "evalsuite.empty_cell",
            EvalError::Munch(e) => e.code(),
            EvalError::Model(e) => e.code(),
            EvalError::Io(_) => "evalsuite.io",
            EvalError::Json(_) => "evalsuite.json",
        }
    }
}

/// How multi-hop questions reach the evaluated model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    /// Ask the unlearned checkpoint directly.
    Raw,
    /// Decompose, answer with the original, reject by uncertainty and gate.
    Munch,
    /// Decompose, answer with the original, reject by memory equality.
    Mello,
}

impl std::fmt::Display for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Pipeline::Raw => "raw",
            Pipeline::Munch => "munch",
            Pipeline::Mello => "mello",
        })
    }
}

/// Closed candidate sets: per relation, the sorted unique object surfaces
/// appearing in the knowledge base under that relation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CandidateMap {
    by_relation: BTreeMap<String, Vec<String>>,
}

impl CandidateMap {
    pub fn from_bundle(bundle: &DatasetBundle) -> CandidateMap {
        let mut by_relation: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for fact in &bundle.facts {
            by_relation.entry(fact.relation.clone()).or_default().push(fact.object.clone());
        }
        for objects in by_relation.values_mut() {
            objects.sort();
            objects.dedup();
        }
        CandidateMap { by_relation }
    }

    pub fn candidates(&self, relation: &str) -> Option<&[String]> {
        self.by_relation.get(relation).map(|v| v.as_slice())
    }
}

/// Relation governing an item's answer: the relation of its final hop.
pub fn item_relation<'a>(bundle: &'a DatasetBundle, item: &QaItem) -> Option<&'a str> {
    let last = item.fact_ids.last()?;
    bundle.facts.iter().find(|f| &f.id == last).map(|f| f.relation.as_str())
}

/// Probing-accuracy outcome: the percentage plus any items whose gold answer
/// was missing from its candidate set (each counted as a miss).
#[derive(Debug, Clone, PartialEq)]
pub struct PaResult {
    pub pa: f64,
    pub missing_gold: Vec<QuestionId>,
}

/// Mean over relations of the per-relation mean score, as a percentage.
fn macro_over_relations(scored: &[(&str, f64)]) -> f64 {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for &(rel, s) in scored {
        let slot = sums.entry(rel).or_insert((0.0, 0));
        slot.0 += s;
        slot.1 += 1;
    }
    if sums.is_empty() {
        return 0.0;
    }
    let total: f64 = sums.values().map(|&(sum, n)| sum / n as f64).sum();
    100.0 * total / sums.len() as f64
}

/// Rank-based probing accuracy: per item, every candidate is scored by the
/// summed log-probability of its word tokens continuing the question prompt,
/// and the item counts iff the gold answer scores strictly highest.
pub fn probing_accuracy(
    model: &Model,
    bundle: &DatasetBundle,
    items: &[&QaItem],
    cands: &CandidateMap,
) -> Result<PaResult, EvalError> {
    let vocab = &model.vocab;
    let mut scored: Vec<(&str, f64)> = Vec::with_capacity(items.len());
    let mut missing_gold = Vec::new();
    for item in items {
        let relation = item_relation(bundle, item).unwrap_or("");
        let candidates = cands.candidates(relation).unwrap_or(&[]);
        if !candidates.iter().any(|c| c == &item.answer) {
            missing_gold.push(item.id.clone());
            scored.push((relation, 0.0));
            continue;
        }
        let prompt = qa_example(vocab, &item.text, "x").prompt;
        let mut state = DecodeState::new(model);
        for &t in &prompt {
            state.push(t)?;
        }
        let mut gold_lp = f64::NEG_INFINITY;
        let mut best_other = f64::NEG_INFINITY;
        for candidate in candidates {
            let lp = state.score_continuation(&vocab.encode(candidate))?;
            if candidate == &item.answer {
                gold_lp = lp;
            } else if lp > best_other {
                best_other = lp;
            }
        }
        scored.push((relation, if gold_lp > best_other { 1.0 } else { 0.0 }));
    }
    Ok(PaResult { pa: macro_over_relations(&scored), missing_gold })
}

/// LCS length over word tokens divided by the reference word count.
/// An empty reference scores 0.
pub fn rouge_l_recall(prediction: &str, reference: &str) -> f64 {
    let pred = tokenize_words(prediction);
    let refr = tokenize_words(reference);
    if refr.is_empty() {
        return 0.0;
    }
    let (m, n) = (pred.len(), refr.len());
    let mut dp = vec![0usize; n + 1];
    for i in 0..m {
        let mut diag = 0;
        for j in 0..n {
            let up = dp[j + 1];
            dp[j + 1] = if pred[i] == refr[j] { diag + 1 } else { up.max(dp[j]) };
            diag = up;
        }
    }
    dp[n] as f64 / n as f64
}

/// Pooled mean per-token NLL over the items' answer continuations (end token
/// included: the model must know where answers stop).
pub fn lm_loss(model: &Model, items: &[&QaItem]) -> Result<f64, EvalError> {
    let vocab = &model.vocab;
    let examples: Vec<SeqExample> =
        items.iter().map(|q| qa_example(vocab, &q.text, &q.answer)).collect();
    let mut nll = 0.0;
    let mut tokens = 0usize;
    for chunk in examples.chunks(32) {
        let refs: Vec<&SeqExample> = chunk.iter().collect();
        let values = batch_nll(model, &refs)?;
        nll += values.nll.iter().sum::<f64>();
        tokens += values.token_counts.iter().sum::<usize>();
    }
    Ok(nll / tokens.max(1) as f64)
}

/// One row of the four-cell report. Percentages are rounded to one decimal
/// and the loss to four at assembly, so the TSV and its JSON mirror carry
/// identical numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub split: String,
    pub hops: String,
    pub pa: f64,
    pub rouge_l: f64,
    pub lm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Caller-supplied row label, e.g. "original" or "ga+rt".
    pub method: String,
    pub pipeline: Pipeline,
    pub forget_fraction: f64,
    pub seed: u64,
    /// None for raw and the baseline.
    pub tau: Option<f64>,
    /// How multi-hop cells were scored, recorded because the exact-match
    /// convention is not comparable to rank-based probing.
    pub multi_pa_convention: String,
    /// Fixed order: forget/single, forget/multi, retain/single, retain/multi.
    pub cells: Vec<ReportCell>,
}

/// Everything evaluate() reads; the unlearned slot holds whichever
/// checkpoint the report row is about (the original model for the
/// pre-unlearning row).
pub struct EvalContext<'a> {
    pub bundle: &'a DatasetBundle,
    pub original: &'a Model,
    pub unlearned: &'a Model,
    pub memory: &'a ForgetMemory,
    pub pipeline_cfg: &'a PipelineConfig,
}

/// Report row metadata supplied by the caller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub method: String,
    pub forget_fraction: f64,
    pub seed: u64,
}

#[derive(Debug)]
pub struct EvalOutcome {
    pub report: MetricsReport,
    /// One trace per multi-hop item, in cell order; empty under raw.
    pub traces: Vec<QuestionTrace>,
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn cell_items<'a>(
    bundle: &'a DatasetBundle,
    split: &'static str,
    hops: &'static str,
) -> Result<Vec<&'a QaItem>, EvalError> {
    let kind = if hops == "single" { QuestionKind::Single } else { QuestionKind::Multi };
    let items: Vec<&QaItem> = match split {
        "forget" => bundle.split_questions(Split::Forget, kind),
        _ => bundle.split_questions(Split::RetainTest, kind),
    };
    if items.is_empty() {
        return Err(EvalError::EmptyCell { split, hops });
    }
    Ok(items)
}

/// Greedy answer text of `model` for each item's question prompt.
fn generate_answers(
    model: &Model,
    items: &[&QaItem],
    max_new: usize,
) -> Result<Vec<String>, EvalError> {
    let vocab = &model.vocab;
    items
        .iter()
        .map(|q| {
            let prompt = qa_example(vocab, &q.text, "x").prompt;
            let decoded = greedy_decode(model, &prompt, max_new)?;
            Ok(vocab.decode(&decoded.tokens))
        })
        .collect()
}

/// Exact-match probing for pipeline text: rejected scores 0, answered scores
/// 1 iff the final text equals the gold answer case-folded; macro-averaged
/// over relations like rank-based probing.
fn exact_match_pa(bundle: &DatasetBundle, items: &[&QaItem], traces: &[QuestionTrace]) -> f64 {
    let scored: Vec<(&str, f64)> = items
        .iter()
        .zip(traces)
        .map(|(item, trace)| {
            let relation = item_relation(bundle, item).unwrap_or("");
            let hit = trace.verdict == Verdict::Answer
                && trace.final_text.to_lowercase() == item.answer.to_lowercase();
            (relation, if hit { 1.0 } else { 0.0 })
        })
        .collect();
    macro_over_relations(&scored)
}

fn mean_rouge(predictions: &[String], items: &[&QaItem]) -> f64 {
    let total: f64 =
        predictions.iter().zip(items).map(|(p, q)| rouge_l_recall(p, &q.answer)).sum();
    100.0 * total / items.len() as f64
}

/// Fills the four (split x hop-kind) cells for one checkpoint and pipeline.
/// Single-hop cells always probe the unlearned checkpoint directly; under a
/// pipeline, multi-hop answers and verdicts come from the pipeline and are
/// scored by exact match. Returns the report and the pipeline traces.
pub fn evaluate(
    ctx: &EvalContext<'_>,
    pipeline: Pipeline,
    tau: Option<f64>,
    meta: &RunMeta,
) -> Result<EvalOutcome, EvalError> {
    if pipeline == Pipeline::Munch && tau.is_none() {
        return Err(EvalError::MissingTau);
    }
    let cands = CandidateMap::from_bundle(ctx.bundle);
    let max_new = ctx.pipeline_cfg.max_answer_tokens;
    let mut cells = Vec::with_capacity(4);
    let mut traces = Vec::new();

    for (split, hops) in
        [("forget", "single"), ("forget", "multi"), ("retain", "single"), ("retain", "multi")]
    {
        let items = cell_items(ctx.bundle, split, hops)?;
        let lm = lm_loss(ctx.unlearned, &items)?;
        let (pa, rouge) = if hops == "single" || pipeline == Pipeline::Raw {
            let pa = probing_accuracy(ctx.unlearned, ctx.bundle, &items, &cands)?.pa;
            let answers = generate_answers(ctx.unlearned, &items, max_new)?;
            (pa, mean_rouge(&answers, &items))
        } else {
            let mut decomposer = Decomposer::from_mode(&ctx.pipeline_cfg.decomposer)?;
            let cell_traces: Vec<QuestionTrace> = items
                .iter()
                .map(|item| match pipeline {
                    Pipeline::Munch => run_munch(
                        ctx.original,
                        ctx.unlearned,
                        item,
                        &mut decomposer,
                        ctx.memory,
                        tau.expect("checked above"),
                        ctx.pipeline_cfg,
                    ),
                    Pipeline::Mello => {
                        run_mello(ctx.original, item, &mut decomposer, ctx.memory, ctx.pipeline_cfg)
                    }
                    Pipeline::Raw => unreachable!("raw handled above"),
                })
                .collect::<Result<_, _>>()?;
            let pa = exact_match_pa(ctx.bundle, &items, &cell_traces);
            let finals: Vec<String> =
                cell_traces.iter().map(|t| t.final_text.clone()).collect();
            let rouge = mean_rouge(&finals, &items);
            traces.extend(cell_traces);
            (pa, rouge)
        };
        cells.push(ReportCell {
            split: split.to_string(),
            hops: hops.to_string(),
            pa: round1(pa),
            rouge_l: round1(rouge),
            lm: round4(lm),
        });
    }

    let multi_pa_convention = match pipeline {
        Pipeline::Raw => "closed_candidate_rank",
        _ => "exact_match",
    };
    Ok(EvalOutcome {
        report: MetricsReport {
            method: meta.method.clone(),
            pipeline,
            forget_fraction: meta.forget_fraction,
            seed: meta.seed,
            tau: if pipeline == Pipeline::Munch { tau } else { None },
            multi_pa_convention: multi_pa_convention.to_string(),
            cells,
        },
        traces,
    })
}

/// Table-shaped rows: method, split, hop kind, then the three metrics with
/// percentages at one decimal.
pub fn write_report_tsv(report: &MetricsReport, out: &mut dyn Write) -> Result<(), EvalError> {
    writeln!(out, "method\tsplit\thops\tpa\trouge_l\tlm")?;
    for cell in &report.cells {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.1}\t{:.1}\t{:.4}",
            report.method, cell.split, cell.hops, cell.pa, cell.rouge_l, cell.lm
        )?;
    }
    Ok(())
}

/// The same numbers as the TSV plus the run metadata, as pretty JSON.
pub fn write_report_json(report: &MetricsReport, out: &mut dyn Write) -> Result<(), EvalError> {
    serde_json::to_writer_pretty(&mut *out, report)?;
    out.write_all(b"\n")?;
    Ok(())
}
