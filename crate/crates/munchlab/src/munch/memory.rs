//! The stored forget set and the character-trigram similarity backing both
//! the retrieval gate and the baseline's per-hop retrieval.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::kbgen::{DatasetBundle, QuestionKind, Split};

pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemoryEntry {
    pub question: String,
    pub answer: String,
}

/// Rendered forget single-hop facts plus the gate threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgetMemory {
    pub entries: Vec<MemoryEntry>,
    pub similarity_threshold: f64,
}

impl ForgetMemory {
    /// Entries cover exactly the bundle's forget single-hop split, in
    /// bundle order.
    pub fn from_bundle(bundle: &DatasetBundle, similarity_threshold: f64) -> ForgetMemory {
        let entries = bundle
            .split_questions(Split::Forget, QuestionKind::Single)
            .iter()
            .map(|q| MemoryEntry { question: q.text.clone(), answer: q.answer.clone() })
            .collect();
        ForgetMemory { entries, similarity_threshold }
    }

    /// Index and similarity of the entry whose question is most similar to
    /// `text`; ties break toward the earliest entry. None when empty.
    pub fn most_similar(&self, text: &str) -> Option<(usize, f64)> {
        let probe = trigram_counts(text);
        let mut best: Option<(usize, f64)> = None;
        for (i, entry) in self.entries.iter().enumerate() {
            let sim = cosine(&probe, &trigram_counts(&entry.question));
            if best.is_none_or(|(_, b)| sim > b) {
                best = Some((i, sim));
            }
        }
        best
    }
}

/// Counts of consecutive character triples, case-sensitive, over the string
/// as written. Strings shorter than three characters have no trigrams.
fn trigram_counts(text: &str) -> HashMap<(char, char, char), f64> {
    let chars: Vec<char> = text.chars().collect();
    let mut counts = HashMap::new();
    for w in chars.windows(3) {
        *counts.entry((w[0], w[1], w[2])).or_insert(0.0) += 1.0;
    }
    counts
}

fn cosine(a: &HashMap<(char, char, char), f64>, b: &HashMap<(char, char, char), f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(k, &va)| b.get(k).map(|&vb| va * vb)).sum();
    let na = a.values().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.values().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Cosine similarity between the trigram count vectors of two strings, in
/// [0, 1]. A string without trigrams is similar to nothing, itself included.
pub fn trigram_cosine(a: &str, b: &str) -> f64 {
    cosine(&trigram_counts(a), &trigram_counts(b))
}

/// Max similarity of `subquestion` over the stored questions, and whether it
/// clears the memory's threshold. A hit forces rejection of the whole
/// question and short-circuits uncertainty scoring.
pub fn retrieval_gate(subquestion: &str, memory: &ForgetMemory) -> (f64, bool) {
    let similarity = memory.most_similar(subquestion).map_or(0.0, |(_, s)| s);
    (similarity, similarity >= memory.similarity_threshold)
}
