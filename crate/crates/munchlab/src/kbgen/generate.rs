//! Knowledge-base and chain sampling.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::Rng;

use super::names::entity_name;
use super::types::{ChainId, FactChain, FactId, FactTriple, GenConfig, KbgenError, KnowledgeBase};
use crate::rngutil::derive_rng;

/// Redraw budget multiplier for rejection sampling loops.
const ATTEMPT_FACTOR: usize = 100;

pub(crate) fn validate_config(cfg: &GenConfig) -> Result<(), KbgenError> {
    let fail = |msg: String| Err(KbgenError::InfeasibleConfig(msg));
    if cfg.n_entities < 2 {
        return fail(format!("n_entities = {} but at least 2 are needed", cfg.n_entities));
    }
    if cfg.relations.is_empty() {
        return fail("relation list is empty".into());
    }
    let mut names = HashSet::new();
    for rel in &cfg.relations {
        if !names.insert(rel.name.as_str()) {
            return fail(format!("duplicate relation name {:?}", rel.name));
        }
        if !rel.question.contains("{subject}") {
            return fail(format!("relation {:?} question template lacks {{subject}}", rel.name));
        }
        if !rel.statement.contains("{subject}") || !rel.statement.contains("{object}") {
            return fail(format!(
                "relation {:?} statement template lacks {{subject}} or {{object}}",
                rel.name
            ));
        }
        if rel.coref_question.contains("{subject}") {
            return fail(format!(
                "relation {:?} coref template must not name the subject",
                rel.name
            ));
        }
    }
    if cfg.n_facts == 0 {
        return fail("n_facts = 0".into());
    }
    if cfg.n_facts > cfg.n_entities * cfg.relations.len() {
        return fail(format!(
            "n_facts = {} exceeds the {} distinct (subject, relation) slots",
            cfg.n_facts,
            cfg.n_entities * cfg.relations.len()
        ));
    }
    if cfg.n_facts >= 100_000 || cfg.n_chains >= 100_000 {
        return fail("fact and chain counts above 99999 are unsupported".into());
    }
    if cfg.hop_weights.is_empty() {
        return fail("hop_weights is empty".into());
    }
    for &(hops, w) in &cfg.hop_weights {
        if hops < 2 {
            return fail(format!("hop count {hops} in hop_weights; chains need at least 2 hops"));
        }
        if !(w.is_finite() && w > 0.0) {
            return fail(format!("hop weight {w} for {hops} hops is not positive"));
        }
    }
    for (label, v) in [
        ("forget_fraction", cfg.forget_fraction),
        ("retain_valid_fraction", cfg.retain_valid_fraction),
        ("retain_test_fraction", cfg.retain_test_fraction),
        ("multi_valid_fraction", cfg.multi_valid_fraction),
    ] {
        if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
            return fail(format!("{label} = {v} is outside [0, 1]"));
        }
    }
    if cfg.retain_valid_fraction + cfg.retain_test_fraction >= 1.0 {
        return fail("retain valid + test fractions leave no training facts".into());
    }
    Ok(())
}

/// Samples entities and facts.
///
/// Entity names are drawn with redraw-on-collision. Facts are chosen by
/// shuffling the full (entity, relation) slot grid and keeping the first
/// `n_facts` slots, so each (subject, relation) pair is used at most once;
/// kept slots are then sorted back to grid order and each gets a uniformly
/// drawn object distinct from its subject.
pub fn generate_kb(cfg: &GenConfig) -> Result<KnowledgeBase, KbgenError> {
    validate_config(cfg)?;

    let mut name_rng = derive_rng(cfg.seed, "kbgen.entities");
    let mut entities: Vec<String> = Vec::with_capacity(cfg.n_entities);
    let mut seen = HashSet::new();
    let mut attempts = 0usize;
    while entities.len() < cfg.n_entities {
        attempts += 1;
        if attempts > cfg.n_entities * ATTEMPT_FACTOR {
            return Err(KbgenError::InfeasibleConfig(format!(
                "could not draw {} distinct entity names",
                cfg.n_entities
            )));
        }
        let name = entity_name(&mut name_rng);
        if seen.insert(name.clone()) {
            entities.push(name);
        }
    }

    let mut slot_rng = derive_rng(cfg.seed, "kbgen.facts");
    let n_rel = cfg.relations.len();
    let mut slots: Vec<(usize, usize)> = (0..cfg.n_entities)
        .flat_map(|e| (0..n_rel).map(move |r| (e, r)))
        .collect();
    slots.shuffle(&mut slot_rng);
    slots.truncate(cfg.n_facts);
    slots.sort_unstable();

    let mut facts = Vec::with_capacity(cfg.n_facts);
    for (i, (e, r)) in slots.into_iter().enumerate() {
        let object = loop {
            let o = slot_rng.gen_range(0..cfg.n_entities);
            if o != e {
                break o;
            }
        };
        facts.push(FactTriple {
            id: FactId(format!("f{i:05}")),
            subject: entities[e].clone(),
            relation: cfg.relations[r].name.clone(),
            object: entities[object].clone(),
        });
    }

    Ok(KnowledgeBase { entities, relations: cfg.relations.clone(), facts })
}

/// Samples `cfg.n_chains` distinct fact paths by random walk.
///
/// Procedure, in draw order (tests re-derive it independently):
/// 1. hop count by cumulative weighted draw over `cfg.hop_weights` as listed;
/// 2. start fact uniform over the fact list;
/// 3. each later hop uniform over the facts whose subject equals the current
///    object, in fact-list order;
/// 4. a walk that dead-ends or reproduces an already accepted fact sequence
///    is abandoned and a fresh attempt begins.
///
/// Fails if the attempt budget runs out before `n_chains` distinct chains
/// are found.
pub fn build_chains(kb: &KnowledgeBase, cfg: &GenConfig) -> Result<Vec<FactChain>, KbgenError> {
    let mut outgoing: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, fact) in kb.facts.iter().enumerate() {
        outgoing.entry(fact.subject.as_str()).or_default().push(i);
    }

    let total_weight: f64 = cfg.hop_weights.iter().map(|&(_, w)| w).sum();
    let mut rng = derive_rng(cfg.seed, "kbgen.chains");
    let mut chains = Vec::with_capacity(cfg.n_chains);
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let budget = cfg.n_chains.max(1) * ATTEMPT_FACTOR;

    for _ in 0..budget {
        if chains.len() == cfg.n_chains {
            break;
        }
        let mut draw = rng.gen::<f64>() * total_weight;
        let mut hops = cfg.hop_weights[cfg.hop_weights.len() - 1].0;
        for &(h, w) in &cfg.hop_weights {
            if draw < w {
                hops = h;
                break;
            }
            draw -= w;
        }

        let mut path = vec![rng.gen_range(0..kb.facts.len())];
        let mut alive = true;
        while path.len() < hops {
            let tail_object = kb.facts[*path.last().expect("path is nonempty")].object.as_str();
            match outgoing.get(tail_object) {
                Some(outs) => path.push(outs[rng.gen_range(0..outs.len())]),
                None => {
                    alive = false;
                    break;
                }
            }
        }
        if alive && seen.insert(path.clone()) {
            chains.push(path);
        }
    }

    if chains.len() < cfg.n_chains {
        return Err(KbgenError::ChainSampling { requested: cfg.n_chains, built: chains.len() });
    }

    Ok(chains
        .into_iter()
        .enumerate()
        .map(|(i, path)| FactChain {
            id: ChainId(format!("c{i:05}")),
            fact_ids: path.into_iter().map(|f| kb.facts[f].id.clone()).collect(),
        })
        .collect())
}
