use std::collections::{BTreeSet, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, LazyLock, Mutex};

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Candidate, RankedPassage, RetrieveError};
use crate::generate::{GenerationParams, LlmProvider, Message};
use crate::index::IndexSet;
use crate::ingest::{jaccard, normalize_text, Tokenizer};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("no number in scorer reply {0:?}")]
    Unparsable(String),
    #[error("scorer call failed: {0}")]
    Provider(String),
}

/// Relevance of one passage to a query, in `[0, 1]`.
pub trait RerankScorer: Send + Sync {
    fn score(&self, query: &str, passage: &str) -> Result<f64, ScoreError>;

    /// Cheap scorers are run inline instead of on worker threads.
    fn is_cheap(&self) -> bool {
        false
    }

    /// A copy reading corpus statistics from `index`, for scorers that have
    /// any. Called when the live index is swapped.
    fn rebind(&self, _index: &Arc<IndexSet>) -> Option<Arc<dyn RerankScorer>> {
        None
    }
}

/// Jaccard similarity of the query and passage token sets.
pub struct OverlapScorer {
    tokenizer: Arc<dyn Tokenizer>,
}

impl OverlapScorer {
    pub fn new(tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self { tokenizer }
    }
}

impl RerankScorer for OverlapScorer {
    fn score(&self, query: &str, passage: &str) -> Result<f64, ScoreError> {
        let q: HashSet<String> = self.tokenizer.tokenize(&normalize_text(query)).into_iter().collect();
        let p: HashSet<String> = self.tokenizer.tokenize(&normalize_text(passage)).into_iter().collect();
        Ok(jaccard(&q, &p))
    }

    fn is_cheap(&self) -> bool {
        true
    }
}

/// BM25 score of the passage, without length normalisation, divided by the
/// largest score any passage could reach for the same query. The result lies
/// in `[0, 1)`. Rare terms such as programme codes dominate. Passages are
/// already chunk-bounded, so length is not penalised. Serves as an offline
/// stand-in for a cross-encoder.
pub struct Bm25RatioScorer {
    index: Arc<IndexSet>,
    tokenizer: Arc<dyn Tokenizer>,
}

impl Bm25RatioScorer {
    pub fn new(index: Arc<IndexSet>, tokenizer: Arc<dyn Tokenizer>) -> Self {
        Self { index, tokenizer }
    }

    fn terms(&self, text: &str) -> Vec<String> {
        self.tokenizer
            .tokenize(&normalize_text(text))
            .into_iter()
            .filter(|t| t.chars().any(char::is_alphanumeric))
            .collect()
    }
}

impl RerankScorer for Bm25RatioScorer {
    fn score(&self, query: &str, passage: &str) -> Result<f64, ScoreError> {
        // ordered so the float sum, and with it tie order, is reproducible
        let q: BTreeSet<String> = self.terms(query).into_iter().collect();
        let p = self.terms(passage);
        if q.is_empty() || p.is_empty() {
            return Ok(0.0);
        }
        let sparse = self.index.sparse();
        let k1 = sparse.params().k1;
        let (mut got, mut best) = (0.0, 0.0);
        for t in &q {
            let idf = sparse.idf(t);
            let tf = p.iter().filter(|x| *x == t).count() as f64;
            got += idf * tf * (k1 + 1.0) / (tf + k1);
            best += idf * (k1 + 1.0);
        }
        Ok(if best > 0.0 { got / best } else { 0.0 })
    }

    fn is_cheap(&self) -> bool {
        true
    }

    fn rebind(&self, index: &Arc<IndexSet>) -> Option<Arc<dyn RerankScorer>> {
        Some(Arc::new(Self::new(index.clone(), self.tokenizer.clone())))
    }
}

pub const JUDGE_SYSTEM: &str = "You are a relevance judge. Reply with only a number between 0 and 1.";

/// Asks an LLM for a relevance number at temperature 0.
pub struct LlmScorer {
    provider: Arc<dyn LlmProvider>,
}

impl LlmScorer {
    pub fn new(provider: Arc<dyn LlmProvider>) -> Self {
        Self { provider }
    }

    pub fn messages(query: &str, passage: &str) -> Vec<Message> {
        vec![
            Message::system(JUDGE_SYSTEM),
            Message::user(format!("Query: {}\n---\n{}\n---", query.trim(), passage.trim())),
        ]
    }
}

impl RerankScorer for LlmScorer {
    fn score(&self, query: &str, passage: &str) -> Result<f64, ScoreError> {
        let params = GenerationParams { temperature: 0.0, top_p: 1.0, max_tokens: 8 };
        let reply = self
            .provider
            .chat(&Self::messages(query, passage), &params, &mut |_| {})
            .map_err(|e| ScoreError::Provider(e.to_string()))?;
        parse_score_reply(&reply.text)
    }
}

static DECIMAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[0-9]+(?:\.[0-9]+)?|\.[0-9]+").expect("valid pattern"));

/// First decimal literal in `reply`, clamped to `[0, 1]`.
pub fn parse_score_reply(reply: &str) -> Result<f64, ScoreError> {
    let m = DECIMAL.find(reply).ok_or_else(|| ScoreError::Unparsable(reply.to_string()))?;
    let v: f64 = m.as_str().parse().map_err(|_| ScoreError::Unparsable(reply.to_string()))?;
    Ok(v.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Reranked {
    pub passages: Vec<RankedPassage>,
    /// Candidates whose relevance came from retrieval scores.
    pub fallbacks: usize,
    /// Set when the scorer failed on every candidate.
    pub degraded: bool,
}

/// Relevance derived from retrieval scores: the larger of the clamped cosine
/// and the keyword score divided by the pool maximum.
fn fallback_relevance(c: &Candidate, kw_max: f64) -> f64 {
    let dense = c.dense_score.map_or(0.0, |s| s.clamp(0.0, 1.0));
    let keyword = match c.keyword_score {
        Some(s) if kw_max > 0.0 => (s / kw_max).clamp(0.0, 1.0),
        _ => 0.0,
    };
    dense.max(keyword)
}

fn score_all(query: &str, pool: &[Candidate], scorer: &dyn RerankScorer, max_in_flight: usize) -> Vec<Result<f64, ScoreError>> {
    let width = max_in_flight.max(1).min(pool.len());
    if scorer.is_cheap() || width <= 1 {
        return pool.iter().map(|c| scorer.score(query, &c.text)).collect();
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<f64, ScoreError>>>> = Mutex::new(vec![None; pool.len()]);
    std::thread::scope(|s| {
        for _ in 0..width {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(c) = pool.get(i) else { break };
                let r = scorer.score(query, &c.text);
                results.lock().expect("score slots")[i] = Some(r);
            });
        }
    });
    results.into_inner().expect("score slots").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Scores every candidate and keeps the best `keep`.
///
/// Ordering is relevance descending, then id ascending, so the output does
/// not depend on pool order or on the order concurrent scores complete.
pub fn rerank(
    query: &str,
    pool: &[Candidate],
    scorer: &dyn RerankScorer,
    keep: usize,
    max_in_flight: usize,
) -> Result<Reranked, RetrieveError> {
    if pool.is_empty() {
        return Err(RetrieveError::EmptyPool);
    }
    let kw_max = pool.iter().filter_map(|c| c.keyword_score).fold(0.0, f64::max);
    let scores = score_all(query, pool, scorer, max_in_flight);
    let mut fallbacks = 0;
    let mut scored: Vec<(f64, &Candidate)> = pool
        .iter()
        .zip(scores)
        .map(|(c, r)| match r {
            Ok(s) if s.is_finite() => (s.clamp(0.0, 1.0), c),
            _ => {
                fallbacks += 1;
                (fallback_relevance(c, kw_max), c)
            }
        })
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
    let passages = scored
        .into_iter()
        .take(keep)
        .enumerate()
        .map(|(i, (relevance, c))| RankedPassage { id: c.id, text: c.text.clone(), relevance, rank: i + 1 })
        .collect();
    Ok(Reranked { passages, fallbacks, degraded: fallbacks == pool.len() })
}
