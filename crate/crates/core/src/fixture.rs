//! The bundled demonstration dataset: a small admissions corpus, FAQ bank,
//! bonus rules, cutoff table and 60 labelled evaluation questions.

use std::sync::Arc;

use crate::agents::{CutoffTable, ScoreRuleTable};
use crate::engine::{Engine, EngineConfig};
use crate::generate::LlmProvider;
use crate::index::{Bm25Params, HashEmbedder, IndexSet};
use crate::ingest::{parse_jsonl, FaqPair, IngestConfig, IngestOutput, Ingestor, RawDocument, SimpleTokenizer};
use crate::retrieve::Bm25RatioScorer;

pub const CORPUS_JSONL: &str = include_str!("../fixtures/corpus.jsonl");
pub const FAQ_JSONL: &str = include_str!("../fixtures/faq.jsonl");
pub const RULES_JSON: &str = include_str!("../fixtures/rules.json");
pub const CUTOFFS_JSON: &str = include_str!("../fixtures/cutoffs.json");
pub const EVAL_ITEMS_JSONL: &str = include_str!("../fixtures/eval_items.jsonl");

pub fn documents() -> Vec<RawDocument> {
    parse_jsonl(CORPUS_JSONL.as_bytes(), "fixture corpus").expect("bundled corpus parses")
}

pub fn faqs() -> Vec<FaqPair> {
    parse_jsonl(FAQ_JSONL.as_bytes(), "fixture faq").expect("bundled faq parses")
}

pub fn rules() -> ScoreRuleTable {
    ScoreRuleTable::from_json(RULES_JSON).expect("bundled rules parse")
}

pub fn cutoffs() -> CutoffTable {
    CutoffTable::from_json(CUTOFFS_JSON).expect("bundled cutoffs parse")
}

/// The bundled corpus after cleaning and chunking with default settings.
pub fn ingest() -> IngestOutput {
    Ingestor::new(IngestConfig::default(), Arc::new(SimpleTokenizer))
        .expect("default config is valid")
        .run(documents(), faqs())
        .expect("bundled corpus ingests")
}

/// Index over [`ingest`] using the offline hashing embedder.
pub fn index() -> IndexSet {
    let out = ingest();
    IndexSet::build(&out.chunks, &out.faqs, &HashEmbedder::default(), &SimpleTokenizer, Bm25Params::default())
        .expect("bundled corpus indexes")
}

/// A complete offline engine over the bundled data: hashing embedder,
/// BM25-ratio re-ranker and the given model.
pub fn engine(provider: Arc<dyn LlmProvider>) -> Engine {
    engine_with(provider, EngineConfig::default(), Arc::new(index()))
}

pub fn engine_with(provider: Arc<dyn LlmProvider>, cfg: EngineConfig, index: Arc<IndexSet>) -> Engine {
    let tokenizer = Arc::new(SimpleTokenizer);
    Engine::new(
        index.clone(),
        Arc::new(HashEmbedder::default()),
        tokenizer.clone(),
        Arc::new(Bm25RatioScorer::new(index.clone(), tokenizer)),
        provider,
        Arc::new(rules()),
        Arc::new(cutoffs()),
        cfg,
    )
}
