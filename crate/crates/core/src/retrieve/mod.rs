//! Candidate generation and re-ranking.
//!
//! A query first tries a direct FAQ match. Otherwise the dense and keyword
//! top lists are merged into one pool, every candidate is scored by a
//! [`RerankScorer`], and the best `keep` passages go to the generator.

mod rerank;

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use rerank::{parse_score_reply, rerank, Bm25RatioScorer, LlmScorer, OverlapScorer, Reranked, RerankScorer, ScoreError};

use crate::ids::UnitId;
use crate::index::{EmbedError, EmbeddingProvider, EmbeddingVector, IndexSet, Scored, UnitSource};
use crate::ingest::Tokenizer;

#[derive(Debug, Error)]
pub enum RetrieveError {
    #[error("cannot embed query: {0}")]
    Embed(#[from] EmbedError),
    #[error("candidate pool is empty")]
    EmptyPool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalMode {
    Dense,
    Keyword,
    Hybrid,
}

impl std::str::FromStr for RetrievalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dense" => Ok(Self::Dense),
            "keyword" => Ok(Self::Keyword),
            "hybrid" => Ok(Self::Hybrid),
            other => Err(format!("unknown retrieval mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrieveConfig {
    pub k_dense: usize,
    pub k_keyword: usize,
    pub faq_threshold: f64,
    pub keep: usize,
    pub max_in_flight: usize,
    /// Re-ranked passages at or below this relevance are not used as evidence.
    pub min_relevance: f64,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        Self { k_dense: 15, k_keyword: 15, faq_threshold: 0.9, keep: 2, max_in_flight: 8, min_relevance: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: UnitId,
    pub text: String,
    pub dense_score: Option<f64>,
    pub keyword_score: Option<f64>,
}

impl Candidate {
    pub fn from_dense(&self) -> bool {
        self.dense_score.is_some()
    }

    pub fn from_keyword(&self) -> bool {
        self.keyword_score.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedPassage {
    pub id: UnitId,
    pub text: String,
    pub relevance: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaqMatch {
    pub id: UnitId,
    pub score: f64,
    pub question: String,
    pub answer: String,
}

/// Queries an [`IndexSet`] with a fixed embedder and tokenizer.
#[derive(Clone)]
pub struct Retriever {
    index: Arc<IndexSet>,
    embedder: Arc<dyn EmbeddingProvider>,
    tokenizer: Arc<dyn Tokenizer>,
    cfg: RetrieveConfig,
}

/// Pool order: dense score descending, then keyword score descending, then id.
fn pool_order(a: &Candidate, b: &Candidate) -> std::cmp::Ordering {
    let desc = |x: Option<f64>, y: Option<f64>| match (x, y) {
        (Some(x), Some(y)) => y.total_cmp(&x),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    };
    desc(a.dense_score, b.dense_score)
        .then_with(|| desc(a.keyword_score, b.keyword_score))
        .then_with(|| a.id.cmp(&b.id))
}

/// Merges two top lists by id.
pub fn merge_pool(index: &IndexSet, dense: &[Scored], keyword: &[Scored]) -> Vec<Candidate> {
    let mut by_id: HashMap<UnitId, Candidate> = HashMap::with_capacity(dense.len() + keyword.len());
    let text = |id: UnitId| index.unit(id).map(|u| u.text.clone()).unwrap_or_default();
    for s in dense {
        by_id.entry(s.id).or_insert_with(|| Candidate { id: s.id, text: text(s.id), dense_score: None, keyword_score: None }).dense_score =
            Some(s.score);
    }
    for s in keyword {
        by_id
            .entry(s.id)
            .or_insert_with(|| Candidate { id: s.id, text: text(s.id), dense_score: None, keyword_score: None })
            .keyword_score = Some(s.score);
    }
    let mut pool: Vec<Candidate> = by_id.into_values().collect();
    pool.sort_by(pool_order);
    pool
}

impl Retriever {
    pub fn new(
        index: Arc<IndexSet>,
        embedder: Arc<dyn EmbeddingProvider>,
        tokenizer: Arc<dyn Tokenizer>,
        cfg: RetrieveConfig,
    ) -> Self {
        Self { index, embedder, tokenizer, cfg }
    }

    /// The same retriever over a different index.
    pub fn with_index(&self, index: Arc<IndexSet>) -> Self {
        Self { index, ..self.clone() }
    }

    pub fn index(&self) -> &Arc<IndexSet> {
        &self.index
    }

    pub fn config(&self) -> &RetrieveConfig {
        &self.cfg
    }

    pub fn tokenizer(&self) -> &Arc<dyn Tokenizer> {
        &self.tokenizer
    }

    pub fn embed(&self, q: &str) -> Result<EmbeddingVector, EmbedError> {
        self.embedder.embed(q)
    }

    /// Best FAQ by question cosine, if it reaches the threshold.
    pub fn faq_direct_match(&self, q: &str) -> Result<Option<FaqMatch>, RetrieveError> {
        let v = match self.embedder.embed(q) {
            Ok(v) => v,
            Err(EmbedError::EmptyInput) => return Ok(None),
            Err(e) => return Err(e.into()),
        };
        Ok(faq_direct_match(&self.index, &v, self.cfg.faq_threshold))
    }

    pub fn dense_topk(&self, q: &str, k: usize) -> Result<Vec<Scored>, RetrieveError> {
        match self.embedder.embed(q) {
            Ok(v) => Ok(self.index.dense().topk(&v, k)),
            Err(EmbedError::EmptyInput) => Ok(Vec::new()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn keyword_topk(&self, q: &str, k: usize) -> Vec<Scored> {
        self.index.sparse().topk(q, self.tokenizer.as_ref(), k)
    }

    /// Dense top-k_dense union keyword top-k_keyword, merged by id.
    pub fn hybrid_retrieve(&self, q: &str) -> Result<Vec<Candidate>, RetrieveError> {
        self.candidates(q, RetrievalMode::Hybrid)
    }

    pub fn candidates(&self, q: &str, mode: RetrievalMode) -> Result<Vec<Candidate>, RetrieveError> {
        let dense = match mode {
            RetrievalMode::Dense | RetrievalMode::Hybrid => self.dense_topk(q, self.cfg.k_dense)?,
            RetrievalMode::Keyword => Vec::new(),
        };
        let keyword = match mode {
            RetrievalMode::Keyword | RetrievalMode::Hybrid => self.keyword_topk(q, self.cfg.k_keyword),
            RetrievalMode::Dense => Vec::new(),
        };
        Ok(merge_pool(&self.index, &dense, &keyword))
    }

    /// Candidates, re-ranked, with passages at or below `min_relevance`
    /// removed. An empty result means nothing in the corpus supports the
    /// query.
    pub fn retrieve(&self, q: &str, mode: RetrievalMode, scorer: &dyn RerankScorer) -> Result<Reranked, RetrieveError> {
        let pool = self.candidates(q, mode)?;
        if pool.is_empty() {
            return Ok(Reranked::default());
        }
        let mut out = rerank(q, &pool, scorer, self.cfg.keep, self.cfg.max_in_flight)?;
        out.passages.retain(|p| p.relevance > self.cfg.min_relevance);
        Ok(out)
    }
}

pub fn faq_direct_match(index: &IndexSet, q: &EmbeddingVector, threshold: f64) -> Option<FaqMatch> {
    let top = index.dense().topk_where(q, 1, |id| id.is_faq()).into_iter().next()?;
    if top.score < threshold {
        return None;
    }
    let unit = index.unit(top.id)?;
    match &unit.source {
        UnitSource::Faq { question, answer } => {
            Some(FaqMatch { id: top.id, score: top.score, question: question.clone(), answer: answer.clone() })
        }
        UnitSource::Chunk { .. } => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::{Bm25Params, HashEmbedder};
    use crate::ingest::{FaqPair, SimpleTokenizer};

    fn retriever() -> Retriever {
        let faqs = vec![
            FaqPair {
                faq_id: "FAQ-0001".parse().unwrap(),
                question: "trường có ký túc xá không?".into(),
                answer: "có, ký túc xá có 1.200 chỗ".into(),
                embedding: None,
            },
            FaqPair {
                faq_id: "FAQ-0002".parse().unwrap(),
                question: "ngành công nghệ thông tin có mã ngành là gì?".into(),
                answer: "mã ngành là 7480201".into(),
                embedding: None,
            },
        ];
        let ix = IndexSet::build(&[], &faqs, &HashEmbedder::default(), &SimpleTokenizer, Bm25Params::default()).unwrap();
        Retriever::new(Arc::new(ix), Arc::new(HashEmbedder::default()), Arc::new(SimpleTokenizer), RetrieveConfig::default())
    }

    #[test]
    fn direct_match_on_identical_question() {
        let r = retriever();
        let m = r.faq_direct_match("Trường có ký túc xá không?").unwrap().unwrap();
        assert_eq!(m.id.to_string(), "FAQ-0001");
        assert!((m.score - 1.0).abs() < 1e-6);
    }

    #[test]
    fn paraphrase_above_threshold_matches() {
        // 7 shared tokens of 7 and 8: cosine 7 / sqrt(56) = 0.935
        let r = retriever();
        let m = r.faq_direct_match("trường có ký túc xá không vậy?").unwrap().unwrap();
        assert!((m.score - 7.0 / 56f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn unrelated_query_has_no_direct_match() {
        assert!(retriever().faq_direct_match("zzz qqq").unwrap().is_none());
    }

    #[test]
    fn keyword_hit_joins_the_pool() {
        let r = retriever();
        let pool = r.hybrid_retrieve("7480201").unwrap();
        let c = pool.iter().find(|c| c.id.to_string() == "FAQ-0002").unwrap();
        assert!(c.from_keyword());
        assert!(pool.len() <= 30);
    }

    #[test]
    fn pool_merges_by_id() {
        let r = retriever();
        let id: UnitId = "FAQ-0001".parse().unwrap();
        let dense = [Scored { id, score: 0.5 }];
        let keyword = [Scored { id, score: 2.0 }];
        let pool = merge_pool(r.index(), &dense, &keyword);
        assert_eq!(pool.len(), 1);
        assert_eq!((pool[0].dense_score, pool[0].keyword_score), (Some(0.5), Some(2.0)));
    }
}
