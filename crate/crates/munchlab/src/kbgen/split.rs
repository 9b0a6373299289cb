//! Forget/retain split assignment.
//!
//! Rules, applied in order:
//! 1. a fact appearing in more than `max_pin_appearances` multi-hop
//!    questions is pinned: its single-hop question goes to retain_train and
//!    it is never eligible for forgetting;
//! 2. the forget set is a uniform draw of round(forget_fraction * eligible)
//!    facts from the eligible (unpinned) pool, so no redraws are ever needed;
//! 3. a multi-hop question containing at least one forget fact is itself
//!    forget; remaining multi-hop questions split into valid/test;
//! 4. retained single-hop questions split into train/valid/test with the
//!    valid and test counts computed against the whole retained pool but
//!    drawn only from unpinned facts.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;

use super::types::{DatasetBundle, FactId, GenConfig, KbgenError, QaItem, QuestionKind, Split};
use crate::rngutil::derive_rng;

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor() as usize
}

/// Assigns a split to every question in place.
pub fn split_dataset(
    questions: &mut [QaItem],
    cfg: &GenConfig,
) -> Result<(), KbgenError> {
    let mut appearances: HashMap<&FactId, usize> = HashMap::new();
    for q in questions.iter().filter(|q| q.kind == QuestionKind::Multi) {
        for fid in &q.fact_ids {
            *appearances.entry(fid).or_insert(0) += 1;
        }
    }

    // Singles are listed in fact order; that order is the draw order.
    let single_fact_ids: Vec<FactId> = questions
        .iter()
        .filter(|q| q.kind == QuestionKind::Single)
        .map(|q| q.fact_ids[0].clone())
        .collect();

    let pinned: HashSet<FactId> = single_fact_ids
        .iter()
        .filter(|fid| appearances.get(fid).copied().unwrap_or(0) > cfg.max_pin_appearances)
        .cloned()
        .collect();

    let eligible: Vec<FactId> =
        single_fact_ids.iter().filter(|fid| !pinned.contains(fid)).cloned().collect();

    let n_forget = round_half_up(cfg.forget_fraction * eligible.len() as f64);
    if cfg.forget_fraction > 0.0 && n_forget == 0 {
        return Err(KbgenError::DegenerateSplit(format!(
            "forget_fraction {} of {} eligible facts rounds to zero forget facts",
            cfg.forget_fraction,
            eligible.len()
        )));
    }

    let mut rng = derive_rng(cfg.seed, "kbgen.split");
    let mut forget_pool = eligible.clone();
    forget_pool.shuffle(&mut rng);
    forget_pool.truncate(n_forget);
    let forget: HashSet<FactId> = forget_pool.into_iter().collect();

    let n_retain_single = single_fact_ids.len() - forget.len();
    if n_retain_single == 0 {
        return Err(KbgenError::DegenerateSplit(
            "every single-hop fact landed in the forget split".into(),
        ));
    }

    // Valid/test quotas are computed over all retained singles but can only
    // be drawn from unpinned ones; quotas shrink if that pool is too small.
    let mut unpinned_retain: Vec<FactId> = eligible.iter().filter(|f| !forget.contains(f)).cloned().collect();
    unpinned_retain.shuffle(&mut rng);
    let n_valid = round_half_up(cfg.retain_valid_fraction * n_retain_single as f64)
        .min(unpinned_retain.len());
    let n_test = round_half_up(cfg.retain_test_fraction * n_retain_single as f64)
        .min(unpinned_retain.len() - n_valid);
    let valid: HashSet<FactId> = unpinned_retain[..n_valid].iter().cloned().collect();
    let test: HashSet<FactId> = unpinned_retain[n_valid..n_valid + n_test].iter().cloned().collect();
    if n_retain_single == valid.len() + test.len() {
        return Err(KbgenError::DegenerateSplit(
            "no single-hop facts left for retain_train".into(),
        ));
    }

    let mut retained_multi_idx: Vec<usize> = Vec::new();
    for (i, q) in questions.iter_mut().enumerate() {
        match q.kind {
            QuestionKind::Single => {
                let fid = &q.fact_ids[0];
                q.split = if forget.contains(fid) {
                    Split::Forget
                } else if valid.contains(fid) {
                    Split::RetainValid
                } else if test.contains(fid) {
                    Split::RetainTest
                } else {
                    Split::RetainTrain
                };
            }
            QuestionKind::Multi => {
                if q.fact_ids.iter().any(|f| forget.contains(f)) {
                    q.split = Split::Forget;
                } else {
                    retained_multi_idx.push(i);
                }
            }
        }
    }

    retained_multi_idx.shuffle(&mut rng);
    let n_multi_valid = round_half_up(cfg.multi_valid_fraction * retained_multi_idx.len() as f64);
    for (rank, idx) in retained_multi_idx.into_iter().enumerate() {
        questions[idx].split =
            if rank < n_multi_valid { Split::RetainValid } else { Split::RetainTest };
    }

    Ok(())
}

/// Library-side invariant sweep, run after generation and on load. The test
/// suite re-checks the same properties independently from raw JSON.
pub fn check_invariants(bundle: &DatasetBundle) -> Result<(), KbgenError> {
    let fail = |msg: String| Err(KbgenError::Invariant(msg));

    let entity_set: HashSet<&str> = bundle.entities.iter().map(|s| s.as_str()).collect();
    let relation_set: HashSet<&str> =
        bundle.config.relations.iter().map(|r| r.name.as_str()).collect();

    let mut fact_by_id: HashMap<&str, &super::types::FactTriple> = HashMap::new();
    let mut slot_seen: HashSet<(&str, &str)> = HashSet::new();
    for f in &bundle.facts {
        if fact_by_id.insert(f.id.0.as_str(), f).is_some() {
            return fail(format!("duplicate fact id {}", f.id));
        }
        if !slot_seen.insert((f.subject.as_str(), f.relation.as_str())) {
            return fail(format!("duplicate (subject, relation) slot on fact {}", f.id));
        }
        if f.subject == f.object {
            return fail(format!("fact {} is reflexive", f.id));
        }
        if !entity_set.contains(f.subject.as_str()) || !entity_set.contains(f.object.as_str()) {
            return fail(format!("fact {} references an unknown entity", f.id));
        }
        if !relation_set.contains(f.relation.as_str()) {
            return fail(format!("fact {} uses undeclared relation {:?}", f.id, f.relation));
        }
    }

    let hop_support: HashSet<usize> = bundle.config.hop_weights.iter().map(|&(h, _)| h).collect();
    let mut chain_by_id: HashMap<&str, &super::types::FactChain> = HashMap::new();
    let mut chain_paths: HashSet<&[FactId]> = HashSet::new();
    for c in &bundle.chains {
        if chain_by_id.insert(c.id.0.as_str(), c).is_some() {
            return fail(format!("duplicate chain id {}", c.id));
        }
        if !chain_paths.insert(&c.fact_ids) {
            return fail(format!("chain {} duplicates another chain's fact path", c.id));
        }
        if !hop_support.contains(&c.hops()) {
            return fail(format!("chain {} has {} hops, outside the configured support", c.id, c.hops()));
        }
        for pair in c.fact_ids.windows(2) {
            let a = fact_by_id.get(pair[0].0.as_str());
            let b = fact_by_id.get(pair[1].0.as_str());
            match (a, b) {
                (Some(a), Some(b)) => {
                    if a.object != b.subject {
                        return fail(format!("chain {} breaks adjacency at fact {}", c.id, a.id));
                    }
                }
                _ => return fail(format!("chain {} references unknown facts", c.id)),
            }
        }
    }

    let mut appearances: HashMap<&FactId, usize> = HashMap::new();
    for q in bundle.questions.iter().filter(|q| q.kind == QuestionKind::Multi) {
        for fid in &q.fact_ids {
            *appearances.entry(fid).or_insert(0) += 1;
        }
    }
    let forget_facts: HashSet<&FactId> = bundle
        .questions
        .iter()
        .filter(|q| q.kind == QuestionKind::Single && q.split == Split::Forget)
        .map(|q| &q.fact_ids[0])
        .collect();

    let mut question_ids = HashSet::new();
    let mut question_texts = HashSet::new();
    let mut singles_by_fact: HashMap<&FactId, usize> = HashMap::new();
    let mut multis_by_path: HashSet<&[FactId]> = HashSet::new();
    for q in &bundle.questions {
        if !question_ids.insert(q.id.0.as_str()) {
            return fail(format!("duplicate question id {}", q.id));
        }
        if !question_texts.insert(q.text.as_str()) {
            return fail(format!("duplicate question text on {}", q.id));
        }
        let last = match q.fact_ids.last().and_then(|f| fact_by_id.get(f.0.as_str())) {
            Some(f) => f,
            None => return fail(format!("question {} references unknown facts", q.id)),
        };
        if q.answer != last.object {
            return fail(format!("question {} answer does not match its final fact", q.id));
        }
        match q.kind {
            QuestionKind::Single => {
                if q.fact_ids.len() != 1 {
                    return fail(format!("single-hop question {} lists {} facts", q.id, q.fact_ids.len()));
                }
                *singles_by_fact.entry(&q.fact_ids[0]).or_insert(0) += 1;
                let fid = &q.fact_ids[0];
                let pinned = appearances.get(fid).copied().unwrap_or(0) > bundle.config.max_pin_appearances;
                if pinned && q.split != Split::RetainTrain {
                    return fail(format!(
                        "fact {fid} appears in more than {} multi-hop questions but its question {} is {:?}",
                        bundle.config.max_pin_appearances, q.id, q.split
                    ));
                }
            }
            QuestionKind::Multi => {
                if q.fact_ids.len() < 2 {
                    return fail(format!("multi-hop question {} lists {} facts", q.id, q.fact_ids.len()));
                }
                if !chain_paths.contains(q.fact_ids.as_slice()) {
                    return fail(format!("multi-hop question {} matches no chain", q.id));
                }
                if !multis_by_path.insert(&q.fact_ids) {
                    return fail(format!("two multi-hop questions share a chain ({})", q.id));
                }
                let touches_forget = q.fact_ids.iter().any(|f| forget_facts.contains(f));
                if touches_forget && q.split != Split::Forget {
                    return fail(format!("question {} touches a forget fact but is {:?}", q.id, q.split));
                }
                if !touches_forget && q.split == Split::Forget {
                    return fail(format!("question {} is forget but touches no forget fact", q.id));
                }
                if q.split == Split::RetainTrain {
                    return fail(format!("multi-hop question {} landed in retain_train", q.id));
                }
            }
        }
    }

    for f in &bundle.facts {
        if singles_by_fact.get(&f.id).copied().unwrap_or(0) != 1 {
            return fail(format!("fact {} does not have exactly one single-hop question", f.id));
        }
    }
    if bundle.questions.len() != bundle.facts.len() + bundle.chains.len() {
        return fail("question count does not match facts + chains".into());
    }

    Ok(())
}
