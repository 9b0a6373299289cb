//! Synthetic knowledge-base generation.
//!
//! A generated [`DatasetBundle`] holds entities, relational facts, fact
//! chains, and rendered question/answer items with forget/retain splits.
//! Generation is deterministic in `GenConfig::seed`; every sampling phase
//! draws from its own derived stream, so tweaking one phase never perturbs
//! another.

mod generate;
mod names;
mod render;
mod split;
mod stats;
mod types;

use std::fs;
use std::io::Write;
use std::path::Path;

pub use generate::{build_chains, generate_kb};
pub(crate) use render::statement_text;
pub use render::{chain_subquestions, render_questions, render_statements};
pub use split::{check_invariants, split_dataset};
pub use stats::{dataset_stats, DatasetStats, SplitStats};
pub use types::{
    default_relations, ChainId, DatasetBundle, FactChain, FactId, FactTriple, GenConfig,
    KbgenError, KnowledgeBase, QaItem, QuestionId, QuestionKind, RelationSpec, Split,
    BUNDLE_VERSION, COREF_ANAPHOR,
};

impl DatasetBundle {
    /// Runs the full generation pipeline: knowledge base, chains, rendered
    /// questions, splits, and an invariant sweep over the result.
    pub fn generate(cfg: &GenConfig) -> Result<DatasetBundle, KbgenError> {
        let kb = generate_kb(cfg)?;
        let chains = build_chains(&kb, cfg)?;
        let mut questions = render_questions(&kb, &chains)?;
        split_dataset(&mut questions, cfg)?;
        let bundle = DatasetBundle {
            version: BUNDLE_VERSION,
            config: cfg.clone(),
            facts: kb.facts,
            chains,
            questions,
            entities: kb.entities,
        };
        check_invariants(&bundle)?;
        Ok(bundle)
    }

    /// Reconstructs the knowledge-base view of this bundle.
    pub fn knowledge_base(&self) -> KnowledgeBase {
        KnowledgeBase {
            entities: self.entities.clone(),
            relations: self.config.relations.clone(),
            facts: self.facts.clone(),
        }
    }

    pub fn stats(&self) -> DatasetStats {
        dataset_stats(self)
    }

    /// Questions of one split, in bundle order.
    pub fn split_questions(&self, split: Split, kind: QuestionKind) -> Vec<&QaItem> {
        self.questions.iter().filter(|q| q.split == split && q.kind == kind).collect()
    }

    pub fn chain_by_id(&self, id: &ChainId) -> Option<&FactChain> {
        self.chains.iter().find(|c| &c.id == id)
    }

    /// Serializes to pretty JSON with a trailing newline. Field order is
    /// struct declaration order, so output bytes are stable for a given
    /// bundle.
    pub fn save(&self, path: &Path) -> Result<(), KbgenError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let mut buf = serde_json::to_vec_pretty(self)?;
        buf.push(b'\n');
        let mut file = fs::File::create(path)?;
        file.write_all(&buf)?;
        Ok(())
    }

    /// Loads and re-verifies a bundle.
    pub fn load(path: &Path) -> Result<DatasetBundle, KbgenError> {
        let raw = fs::read(path)?;
        let bundle: DatasetBundle = serde_json::from_slice(&raw)?;
        if bundle.version != BUNDLE_VERSION {
            return Err(KbgenError::Version { found: bundle.version, expected: BUNDLE_VERSION });
        }
        check_invariants(&bundle)?;
        Ok(bundle)
    }
}
