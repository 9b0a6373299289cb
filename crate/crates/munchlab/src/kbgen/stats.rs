//! Split-level dataset summaries.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::types::{DatasetBundle, QuestionKind, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub singles: usize,
    pub multis: usize,
    pub mean_question_words: f64,
    /// Mean chain length over the split's multi-hop questions; absent when
    /// the split has none.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_hops: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub entities: usize,
    pub facts: usize,
    pub chains: usize,
    pub questions: usize,
    pub forget: SplitStats,
    pub retain_train: SplitStats,
    pub retain_valid: SplitStats,
    pub retain_test: SplitStats,
    /// Mean number of forgotten facts per forget multi-hop question.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_unlearned_hops: Option<f64>,
}

fn split_stats(bundle: &DatasetBundle, split: Split) -> SplitStats {
    let mut singles = 0usize;
    let mut multis = 0usize;
    let mut words = 0usize;
    let mut hops = 0usize;
    for q in bundle.questions.iter().filter(|q| q.split == split) {
        words += q.text.split_whitespace().count();
        match q.kind {
            QuestionKind::Single => singles += 1,
            QuestionKind::Multi => {
                multis += 1;
                hops += q.fact_ids.len();
            }
        }
    }
    let total = singles + multis;
    SplitStats {
        singles,
        multis,
        mean_question_words: if total == 0 { 0.0 } else { words as f64 / total as f64 },
        mean_hops: if multis == 0 { None } else { Some(hops as f64 / multis as f64) },
    }
}

pub fn dataset_stats(bundle: &DatasetBundle) -> DatasetStats {
    let forget_facts: HashSet<&str> = bundle
        .questions
        .iter()
        .filter(|q| q.kind == QuestionKind::Single && q.split == Split::Forget)
        .map(|q| q.fact_ids[0].0.as_str())
        .collect();
    let forget_multis: Vec<&super::types::QaItem> = bundle
        .questions
        .iter()
        .filter(|q| q.kind == QuestionKind::Multi && q.split == Split::Forget)
        .collect();
    let mean_unlearned_hops = if forget_multis.is_empty() {
        None
    } else {
        let total: usize = forget_multis
            .iter()
            .map(|q| q.fact_ids.iter().filter(|f| forget_facts.contains(f.0.as_str())).count())
            .sum();
        Some(total as f64 / forget_multis.len() as f64)
    };

    DatasetStats {
        entities: bundle.entities.len(),
        facts: bundle.facts.len(),
        chains: bundle.chains.len(),
        questions: bundle.questions.len(),
        forget: split_stats(bundle, Split::Forget),
        retain_train: split_stats(bundle, Split::RetainTrain),
        retain_valid: split_stats(bundle, Split::RetainValid),
        retain_test: split_stats(bundle, Split::RetainTest),
        mean_unlearned_hops,
    }
}
