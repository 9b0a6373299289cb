//! Data model for the synthetic knowledge base and its question sets.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Opaque fact identifier ("f00042").
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FactId(pub String);

/// Opaque chain identifier ("c00007").
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChainId(pub String);

/// Opaque question identifier ("q00311").
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QuestionId(pub String);

impl std::fmt::Display for FactId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for ChainId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::fmt::Display for QuestionId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// One (subject, relation, object) triple. Subjects and objects are entity
/// surface names; the relation is the `RelationSpec` name. For any fixed
/// (subject, relation) pair the knowledge base holds at most one fact.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactTriple {
    pub id: FactId,
    pub subject: String,
    pub relation: String,
    pub object: String,
}

/// An ordered fact path: the object of hop i is the subject of hop i+1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactChain {
    pub id: ChainId,
    pub fact_ids: Vec<FactId>,
}

impl FactChain {
    pub fn hops(&self) -> usize {
        self.fact_ids.len()
    }
}

/// Which pool a question belongs to after splitting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Forget,
    RetainTrain,
    RetainValid,
    RetainTest,
}

impl Split {
    pub fn is_retain(self) -> bool {
        !matches!(self, Split::Forget)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Forget => "forget",
            Split::RetainTrain => "retain_train",
            Split::RetainValid => "retain_valid",
            Split::RetainTest => "retain_test",
        }
    }
}

/// Single-hop questions probe one fact; multi-hop questions probe a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Single,
    Multi,
}

/// A rendered question with its gold answer and fact provenance.
///
/// `fact_ids` lists the probed facts in hop order; single-hop questions have
/// exactly one. The answer is the surface name of the final object.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: QuestionId,
    pub kind: QuestionKind,
    pub text: String,
    pub answer: String,
    pub fact_ids: Vec<FactId>,
    pub split: Split,
}

/// Anaphor standing in for the previous hop's answer in follow-up question
/// forms. Consumers substitute the actual answer for it when a follow-up is
/// asked on its own.
pub const COREF_ANAPHOR: &str = "that person";

/// A relation with its rendering templates.
///
/// `question` and `statement` must contain the `{subject}` placeholder;
/// `statement` must also contain `{object}`. `coref_question` is the
/// follow-up form used for hop two onward of a multi-hop question and refers
/// back to the previous answer with [`COREF_ANAPHOR`] instead of naming it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationSpec {
    pub name: String,
    pub question: String,
    pub coref_question: String,
    pub statement: String,
}

impl RelationSpec {
    fn new(name: &str, phrase: &str) -> Self {
        RelationSpec {
            name: name.to_string(),
            question: format!("Who is the {phrase} of {{subject}}?"),
            coref_question: format!("And who is the {phrase} of {COREF_ANAPHOR}?"),
            statement: format!("The {phrase} of {{subject}} is {{object}}."),
        }
    }
}

/// The six stock relations. All map person entities to person entities, so
/// every fact's object can serve as the next hop's subject.
pub fn default_relations() -> Vec<RelationSpec> {
    vec![
        RelationSpec::new("mentor", "mentor"),
        RelationSpec::new("patron", "patron"),
        RelationSpec::new("rival", "rival"),
        RelationSpec::new("successor", "successor"),
        RelationSpec::new("confidant", "confidant"),
        RelationSpec::new("steward", "steward"),
    ]
}

/// Generation parameters. Serialized inside the dataset file so a bundle is
/// self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub n_entities: usize,
    pub n_facts: usize,
    pub n_chains: usize,
    /// (hop count, weight) pairs for chain length sampling, in draw order.
    pub hop_weights: Vec<(usize, f64)>,
    /// Fraction of eligible single-hop facts assigned to the forget split.
    pub forget_fraction: f64,
    /// Fractions of all retained single-hop facts assigned to valid/test.
    pub retain_valid_fraction: f64,
    pub retain_test_fraction: f64,
    /// Fraction of retained multi-hop questions assigned to valid (rest test).
    pub multi_valid_fraction: f64,
    /// A fact appearing in more than this many multi-hop questions is pinned
    /// to retain_train and never eligible for forgetting.
    pub max_pin_appearances: usize,
    pub relations: Vec<RelationSpec>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 0,
            n_entities: 500,
            n_facts: 2000,
            n_chains: 800,
            hop_weights: vec![(2, 0.65), (3, 0.35)],
            forget_fraction: 0.05,
            retain_valid_fraction: 1.0 / 9.0,
            retain_test_fraction: 1.0 / 9.0,
            multi_valid_fraction: 0.5,
            max_pin_appearances: 2,
            relations: default_relations(),
        }
    }
}

/// Entities, relations, and facts, before questions are rendered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub entities: Vec<String>,
    pub relations: Vec<RelationSpec>,
    pub facts: Vec<FactTriple>,
}

/// The complete generated dataset: knowledge base, chains, questions, and
/// the config that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetBundle {
    pub version: u32,
    pub config: GenConfig,
    pub facts: Vec<FactTriple>,
    pub chains: Vec<FactChain>,
    pub questions: Vec<QaItem>,
    /// Entity surfaces, kept so the bundle round-trips without re-deriving
    /// them from facts.
    pub entities: Vec<String>,
}

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum KbgenError {
    #[error("infeasible generation config: {0}")]
    InfeasibleConfig(String),
    #[error("chain sampling exhausted: built {built} of {requested} requested chains")]
    ChainSampling { requested: usize, built: usize },
    #[error("degenerate split: {0}")]
    DegenerateSplit(String),
    #[error("dataset invariant violated: {0}")]
    Invariant(String),
    #[error("dataset file version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed dataset json: {0}")]
    Json(#[from] serde_json::Error),
}

impl KbgenError {
    /// Stable machine-readable code for CLI error reporting.
    pub fn code(&self) -> &'static str {
        match self {
            KbgenError::InfeasibleConfig(_) => "kbgen.infeasible_config",
            KbgenError::ChainSampling { .. } => "kbgen.chain_sampling",
            KbgenError::DegenerateSplit(_) => "kbgen.degenerate_split",
            KbgenError::Invariant(_) => "kbgen.invariant",
            KbgenError::Version { .. } => "kbgen.version",
            KbgenError::Io(_) => "kbgen.io",
            KbgenError::Json(_) => "kbgen.json",
        }
    }
}
