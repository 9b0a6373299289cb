//! Question rendering.
//!
//! Single-hop questions name their subject. Multi-hop questions are the
//! hop-one question followed by coreference follow-ups, joined with single
//! spaces, so a multi-hop text splits back into its subquestions exactly:
//!
//! "Who is the mentor of Masrin Koveth? And who is the rival of that person?"

use std::collections::HashMap;

use super::types::{
    FactChain, FactTriple, KbgenError, KnowledgeBase, QaItem, QuestionId, QuestionKind, RelationSpec,
    Split,
};

fn relation_map(kb: &KnowledgeBase) -> HashMap<&str, &RelationSpec> {
    kb.relations.iter().map(|r| (r.name.as_str(), r)).collect()
}

fn fact_map(kb: &KnowledgeBase) -> HashMap<&str, &FactTriple> {
    kb.facts.iter().map(|f| (f.id.0.as_str(), f)).collect()
}

pub(crate) fn single_question_text(rel: &RelationSpec, subject: &str) -> String {
    rel.question.replace("{subject}", subject)
}

pub(crate) fn statement_text(rel: &RelationSpec, fact: &FactTriple) -> String {
    rel.statement.replace("{subject}", &fact.subject).replace("{object}", &fact.object)
}

/// Per-hop question texts for a chain: hop one names the subject, later hops
/// use the relation's coreference form verbatim.
pub fn chain_subquestions(kb: &KnowledgeBase, chain: &FactChain) -> Result<Vec<String>, KbgenError> {
    let rels = relation_map(kb);
    let facts = fact_map(kb);
    let mut out = Vec::with_capacity(chain.fact_ids.len());
    for (i, fid) in chain.fact_ids.iter().enumerate() {
        let fact = facts
            .get(fid.0.as_str())
            .ok_or_else(|| KbgenError::Invariant(format!("chain {} references unknown fact {fid}", chain.id)))?;
        let rel = rels
            .get(fact.relation.as_str())
            .ok_or_else(|| KbgenError::Invariant(format!("fact {fid} has unknown relation {:?}", fact.relation)))?;
        if i == 0 {
            out.push(single_question_text(rel, &fact.subject));
        } else {
            out.push(rel.coref_question.clone());
        }
    }
    Ok(out)
}

/// Renders one single-hop question per fact and one multi-hop question per
/// chain, in that order. Splits are filled in later; every item starts as
/// `RetainTrain`.
pub fn render_questions(
    kb: &KnowledgeBase,
    chains: &[FactChain],
) -> Result<Vec<QaItem>, KbgenError> {
    let rels = relation_map(kb);
    let facts = fact_map(kb);
    let mut items = Vec::with_capacity(kb.facts.len() + chains.len());

    for fact in &kb.facts {
        let rel = rels
            .get(fact.relation.as_str())
            .ok_or_else(|| KbgenError::Invariant(format!("fact {} has unknown relation {:?}", fact.id, fact.relation)))?;
        items.push(QaItem {
            id: QuestionId(format!("q{:05}", items.len())),
            kind: QuestionKind::Single,
            text: single_question_text(rel, &fact.subject),
            answer: fact.object.clone(),
            fact_ids: vec![fact.id.clone()],
            split: Split::RetainTrain,
        });
    }

    for chain in chains {
        let subqs = chain_subquestions(kb, chain)?;
        let last = facts
            .get(chain.fact_ids.last().expect("chains have at least one hop").0.as_str())
            .expect("chain facts were resolved above");
        items.push(QaItem {
            id: QuestionId(format!("q{:05}", items.len())),
            kind: QuestionKind::Multi,
            text: subqs.join(" "),
            answer: last.object.clone(),
            fact_ids: chain.fact_ids.clone(),
            split: Split::RetainTrain,
        });
    }

    Ok(items)
}

/// Declarative renderings of every fact, used for the pretraining corpus.
pub fn render_statements(kb: &KnowledgeBase) -> Vec<(FactTriple, String)> {
    let rels = relation_map(kb);
    kb.facts
        .iter()
        .map(|f| {
            let rel = rels.get(f.relation.as_str()).expect("facts only use declared relations");
            (f.clone(), statement_text(rel, f))
        })
        .collect()
}
