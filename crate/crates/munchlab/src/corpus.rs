//! Pretraining corpus assembly and the sequence conventions shared by
//! training, evaluation, and the question pipeline.
//!
//! Every consumer of the model goes through the three example builders
//! here, so prompts seen at evaluation time are byte-identical to prompts
//! seen in training:
//!
//! * QA: prompt `<bos> question <sep>`, target `answer <eos>`;
//! * declarative: prompt `<bos>`, target `statement <eos>`;
//! * transcript hop i: prompt `<bos> q1 <sep> a1 <sep> ... qi <sep>`,
//!   target `ai <eos>`.
//!
//! The corpus blocks, in order: declarative statements for every fact,
//! QA pairs for every single-hop question, every multi-hop question
//! verbatim, auxiliary multi-hop questions composed from graph paths that
//! match no dataset chain, and hop-by-hop transcripts of those auxiliary
//! paths. Multi-hop competence is trained knowledge, the same substrate
//! unlearning edits; the auxiliary paths widen question coverage and their
//! transcripts teach the stepwise answer format the question pipeline
//! prompts with.
//!
//! Transcripts train follow-up subquestions in anaphor form ("... of that
//! person?"); the pipeline asks them resolved, with the previous answer
//! substituted in ([`resolve_subquestion`]). The asymmetry is deliberate.
//! Answering the resolved form is carried by generalization from the
//! trained direct questions, which is exactly the surface unlearning
//! edits: training the resolved form verbatim would leave every forgotten
//! answer reachable (and confidently scored) through a surface the
//! unlearner never touches.

use std::collections::{BTreeSet, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kbgen::{
    statement_text, DatasetBundle, FactTriple, QuestionKind, RelationSpec, COREF_ANAPHOR,
};
use crate::rngutil::derive_rng;
use crate::seqmodel::{SeqExample, Vocabulary, BOS, EOS, SEP};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{kind} example needs {len} tokens, context holds {max}")]
    ContextOverflow { kind: String, len: usize, max: usize },
}

impl CorpusError {
    pub fn code(&self) -> &'static str {
        match self {
            CorpusError::ContextOverflow { .. } => "corpus.context_overflow",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    /// (hop count, number of auxiliary paths) per chain length; requests
    /// beyond the available paths are clamped.
    pub aux_paths: Vec<(usize, usize)>,
    pub with_transcripts: bool,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig { aux_paths: vec![(2, 1200), (3, 1800)], with_transcripts: true, seed: 0 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CorpusStats {
    pub declaratives: usize,
    pub single_qa: usize,
    pub multi_qa: usize,
    pub aux_qa: usize,
    pub transcripts: usize,
    /// (hop count, paths available after exclusion, paths used).
    pub aux_pool: Vec<(usize, usize, usize)>,
    pub total_tokens: usize,
}

#[derive(Debug, Clone)]
pub struct PretrainCorpus {
    pub vocab: Vocabulary,
    pub examples: Vec<SeqExample>,
    pub stats: CorpusStats,
}

/// `<bos> question <sep>` / `answer <eos>`.
pub fn qa_example(vocab: &Vocabulary, question: &str, answer: &str) -> SeqExample {
    let mut prompt = vec![BOS];
    prompt.extend(vocab.encode(question));
    prompt.push(SEP);
    let mut target = vocab.encode(answer);
    target.push(EOS);
    SeqExample::new(prompt, target)
}

/// `<bos>` / `statement <eos>`.
pub fn declarative_example(vocab: &Vocabulary, statement: &str) -> SeqExample {
    let mut target = vocab.encode(statement);
    target.push(EOS);
    SeqExample::new(vec![BOS], target)
}

/// A follow-up subquestion as actually asked: the anaphor replaced by the
/// previous hop's answer. The opening hop has no antecedent and is asked
/// verbatim.
pub fn resolve_subquestion(subquestion: &str, previous_answer: Option<&str>) -> String {
    match previous_answer {
        Some(prev) => subquestion.replace(COREF_ANAPHOR, prev),
        None => subquestion.to_string(),
    }
}

/// [`resolve_subquestion`] across a decomposition, pairing hop `i` with
/// answer `i - 1`. `answers` may be one hop short of `subquestions`; every
/// resolvable hop is returned.
pub fn resolve_subquestions(subquestions: &[String], answers: &[String]) -> Vec<String> {
    subquestions
        .iter()
        .take(answers.len() + 1)
        .enumerate()
        .map(|(i, q)| {
            resolve_subquestion(q, i.checked_sub(1).map(|p| answers[p].as_str()))
        })
        .collect()
}

/// Prompt for answering hop `i` (0-based) of a decomposed question: the
/// subquestions so far interleaved with the answers so far, every segment
/// closed by `<sep>`. Joins what it is given: training transcripts pass
/// anaphor-form follow-ups, the pipeline passes resolved ones.
pub fn transcript_prompt(
    vocab: &Vocabulary,
    subquestions: &[String],
    answers: &[String],
    i: usize,
) -> Vec<u32> {
    let mut prompt = vec![BOS];
    for h in 0..=i {
        prompt.extend(vocab.encode(&subquestions[h]));
        prompt.push(SEP);
        if h < i {
            prompt.extend(vocab.encode(&answers[h]));
            prompt.push(SEP);
        }
    }
    prompt
}

/// Transcript example for hop `i`: [`transcript_prompt`] / `answer_i <eos>`.
/// At hop 0 this coincides with [`qa_example`] on the first subquestion.
pub fn transcript_example(
    vocab: &Vocabulary,
    subquestions: &[String],
    answers: &[String],
    i: usize,
) -> SeqExample {
    let prompt = transcript_prompt(vocab, subquestions, answers, i);
    let mut target = vocab.encode(&answers[i]);
    target.push(EOS);
    SeqExample::new(prompt, target)
}

/// A composed path through the fact graph: adjacent facts chain
/// object-to-subject and no fact repeats, exactly the dataset's chain rule.
struct AuxPath<'b> {
    facts: Vec<&'b FactTriple>,
}

impl<'b> AuxPath<'b> {
    fn subquestions(&self, rels: &HashMap<&str, &RelationSpec>) -> Vec<String> {
        self.facts
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let rel = rels[f.relation.as_str()];
                if i == 0 {
                    rel.question.replace("{subject}", &f.subject)
                } else {
                    rel.coref_question.clone()
                }
            })
            .collect()
    }

    fn answers(&self) -> Vec<String> {
        self.facts.iter().map(|f| f.object.clone()).collect()
    }
}

/// All paths of `hops` distinct facts, in fact-order enumeration, skipping
/// any whose fact-id sequence appears in `excluded`.
fn enumerate_paths<'b>(
    facts: &'b [FactTriple],
    outgoing: &HashMap<&str, Vec<usize>>,
    hops: usize,
    excluded: &BTreeSet<Vec<String>>,
) -> Vec<AuxPath<'b>> {
    let mut paths = Vec::new();
    let mut stack: Vec<usize> = Vec::with_capacity(hops);
    fn extend<'b>(
        facts: &'b [FactTriple],
        outgoing: &HashMap<&str, Vec<usize>>,
        hops: usize,
        excluded: &BTreeSet<Vec<String>>,
        stack: &mut Vec<usize>,
        paths: &mut Vec<AuxPath<'b>>,
    ) {
        if stack.len() == hops {
            let ids: Vec<String> = stack.iter().map(|&i| facts[i].id.0.clone()).collect();
            if !excluded.contains(&ids) {
                paths.push(AuxPath { facts: stack.iter().map(|&i| &facts[i]).collect() });
            }
            return;
        }
        let candidates: Vec<usize> = match stack.last() {
            None => (0..facts.len()).collect(),
            Some(&last) => outgoing
                .get(facts[last].object.as_str())
                .map(|v| v.iter().copied().filter(|i| !stack.contains(i)).collect())
                .unwrap_or_default(),
        };
        for i in candidates {
            stack.push(i);
            extend(facts, outgoing, hops, excluded, stack, paths);
            stack.pop();
        }
    }
    extend(facts, outgoing, hops, excluded, &mut stack, &mut paths);
    paths
}

/// Word sources for the vocabulary: every text the corpus or the pipeline
/// will ever tokenize must be covered here.
fn vocab_texts<'b>(bundle: &'b DatasetBundle, statements: &'b [String]) -> Vec<&'b str> {
    let mut texts: Vec<&str> = Vec::new();
    for q in &bundle.questions {
        texts.push(&q.text);
        texts.push(&q.answer);
    }
    for s in statements {
        texts.push(s);
    }
    // Follow-up forms reach the encoder through transcripts and decomposer
    // output even when every rendered dataset question is single-hop.
    for r in &bundle.config.relations {
        texts.push(&r.coref_question);
    }
    texts
}

pub fn build_pretraining_corpus(
    bundle: &DatasetBundle,
    cfg: &CorpusConfig,
    context_len: usize,
    extra_vocab_texts: &[&str],
) -> Result<PretrainCorpus, CorpusError> {
    let kb = bundle.knowledge_base();
    let rels: HashMap<&str, &RelationSpec> =
        kb.relations.iter().map(|r| (r.name.as_str(), r)).collect();
    let statements: Vec<String> =
        kb.facts.iter().map(|f| statement_text(rels[f.relation.as_str()], f)).collect();

    let mut texts = vocab_texts(bundle, &statements);
    texts.extend(extra_vocab_texts.iter().copied());
    let vocab = Vocabulary::build(texts);

    let mut stats = CorpusStats::default();
    let mut examples = Vec::new();
    // Auxiliary paths sharing a prefix would emit identical transcripts;
    // each distinct example trains once. Returns false for a duplicate so
    // callers skip their stats bump.
    let mut seen: BTreeSet<(Vec<u32>, Vec<u32>)> = BTreeSet::new();
    let mut push = |ex: SeqExample, kind: &str, stats: &mut CorpusStats| {
        if ex.total_len() > context_len {
            return Err(CorpusError::ContextOverflow {
                kind: kind.to_string(),
                len: ex.total_len(),
                max: context_len,
            });
        }
        if !seen.insert((ex.prompt.clone(), ex.target.clone())) {
            return Ok(false);
        }
        stats.total_tokens += ex.total_len();
        examples.push(ex);
        Ok(true)
    };

    for s in &statements {
        if push(declarative_example(&vocab, s), "declarative", &mut stats)? {
            stats.declaratives += 1;
        }
    }
    for q in &bundle.questions {
        let ex = qa_example(&vocab, &q.text, &q.answer);
        match q.kind {
            QuestionKind::Single => {
                if push(ex, "single-hop", &mut stats)? {
                    stats.single_qa += 1;
                }
            }
            QuestionKind::Multi => {
                if push(ex, "multi-hop", &mut stats)? {
                    stats.multi_qa += 1;
                }
            }
        }
    }

    // Dataset chains are already trained as QA above; excluding their exact
    // fact sequences keeps the auxiliary block free of duplicates.
    let excluded: BTreeSet<Vec<String>> = bundle
        .chains
        .iter()
        .map(|c| c.fact_ids.iter().map(|f| f.0.clone()).collect())
        .collect();
    let mut outgoing: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, f) in kb.facts.iter().enumerate() {
        outgoing.entry(f.subject.as_str()).or_default().push(i);
    }

    for &(hops, want) in &cfg.aux_paths {
        let mut pool = enumerate_paths(&kb.facts, &outgoing, hops, &excluded);
        let mut rng = derive_rng(cfg.seed, &format!("corpus.aux{hops}"));
        pool.shuffle(&mut rng);
        let used = want.min(pool.len());
        stats.aux_pool.push((hops, pool.len(), used));
        for path in pool.into_iter().take(used) {
            let subqs = path.subquestions(&rels);
            let answers = path.answers();
            let text = subqs.join(" ");
            let qa = qa_example(&vocab, &text, &answers[hops - 1]);
            if push(qa, "auxiliary multi-hop", &mut stats)? {
                stats.aux_qa += 1;
            }
            if cfg.with_transcripts {
                for i in 1..hops {
                    let t = transcript_example(&vocab, &subqs, &answers, i);
                    if push(t, "transcript", &mut stats)? {
                        stats.transcripts += 1;
                    }
                }
            }
        }
    }

    Ok(PretrainCorpus { vocab, examples, stats })
}
