use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::dense::select_top;
use super::{IndexError, Scored};
use crate::ids::UnitId;
use crate::ingest::{normalize_text, Tokenizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    /// Row of the unit in the index.
    pub row: u32,
    pub tf: u32,
}

/// Inverted index with Okapi BM25 scoring.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseIndex {
    params: Bm25Params,
    ids: Vec<UnitId>,
    rows: HashMap<UnitId, usize>,
    doc_len: Vec<u32>,
    avg_len: f64,
    postings: HashMap<String, Vec<Posting>>,
}

impl SparseIndex {
    /// Builds from pre-tokenized units.
    pub fn from_tokens(units: Vec<(UnitId, Vec<String>)>, params: Bm25Params) -> Result<Self, IndexError> {
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();
        let mut doc_len = Vec::with_capacity(units.len());
        let mut ids = Vec::with_capacity(units.len());
        let mut rows = HashMap::with_capacity(units.len());
        for (row, (id, tokens)) in units.into_iter().enumerate() {
            if rows.insert(id, row).is_some() {
                return Err(IndexError::DuplicateId(id));
            }
            ids.push(id);
            doc_len.push(tokens.len() as u32);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in tokens {
                *tf.entry(t).or_default() += 1;
            }
            for (term, tf) in tf {
                postings.entry(term).or_default().push(Posting { row: row as u32, tf });
            }
        }
        Self::assemble(params, ids, doc_len, postings)
    }

    pub fn from_texts(units: &[(UnitId, &str)], tokenizer: &dyn Tokenizer, params: Bm25Params) -> Result<Self, IndexError> {
        let tokenized = units
            .iter()
            .map(|(id, text)| (*id, tokenizer.tokenize(&normalize_text(text))))
            .collect();
        Self::from_tokens(tokenized, params)
    }

    pub(crate) fn assemble(
        params: Bm25Params,
        ids: Vec<UnitId>,
        doc_len: Vec<u32>,
        mut postings: HashMap<String, Vec<Posting>>,
    ) -> Result<Self, IndexError> {
        if ids.len() != doc_len.len() {
            return Err(IndexError::Corrupt("length table does not match ids".into()));
        }
        let mut rows = HashMap::with_capacity(ids.len());
        for (row, id) in ids.iter().enumerate() {
            if rows.insert(*id, row).is_some() {
                return Err(IndexError::DuplicateId(*id));
            }
        }
        for list in postings.values_mut() {
            list.sort_unstable_by_key(|p| p.row);
            if list.iter().any(|p| p.tf == 0 || p.row as usize >= ids.len()) {
                return Err(IndexError::Corrupt("posting out of range".into()));
            }
        }
        let total: u64 = doc_len.iter().map(|&l| u64::from(l)).sum();
        let avg_len = if ids.is_empty() { 0.0 } else { total as f64 / ids.len() as f64 };
        Ok(Self { params, ids, rows, doc_len, avg_len, postings })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[UnitId] {
        &self.ids
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn avg_len(&self) -> f64 {
        self.avg_len
    }

    pub fn doc_len(&self, id: UnitId) -> Option<u32> {
        self.rows.get(&id).map(|&r| self.doc_len[r])
    }

    pub(crate) fn doc_lens(&self) -> &[u32] {
        &self.doc_len
    }

    pub(crate) fn postings(&self) -> &HashMap<String, Vec<Posting>> {
        &self.postings
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// `ln(1 + (N - n + 0.5) / (n + 0.5))`, positive for every term.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.ids.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, row: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = f64::from(tf);
        let len = f64::from(self.doc_len[row]);
        idf * (tf * (k1 + 1.0)) / (tf + k1 * (1.0 - b + b * len / self.avg_len))
    }

    /// BM25 score of one unit.
    pub fn score(&self, q_terms: &[String], id: UnitId) -> Result<f64, IndexError> {
        let row = *self.rows.get(&id).ok_or(IndexError::UnknownUnit(id))?;
        let mut score = 0.0;
        for term in q_terms {
            let Some(list) = self.postings.get(term) else { continue };
            if let Ok(i) = list.binary_search_by_key(&(row as u32), |p| p.row) {
                score += self.term_weight(self.idf(term), list[i].tf, row);
            }
        }
        Ok(score)
    }

    /// Units with a positive score, best `k` first.
    pub fn topk_terms(&self, q_terms: &[String], k: usize) -> Vec<Scored> {
        let mut acc = vec![0.0f64; self.ids.len()];
        let mut touched = Vec::new();
        for term in q_terms {
            let Some(list) = self.postings.get(term) else { continue };
            let idf = self.idf(term);
            for p in list {
                let row = p.row as usize;
                if acc[row] == 0.0 {
                    touched.push(row);
                }
                acc[row] += self.term_weight(idf, p.tf, row);
            }
        }
        let scored = touched
            .into_iter()
            .filter(|&r| acc[r] > 0.0)
            .map(|r| Scored { id: self.ids[r], score: acc[r] })
            .collect();
        select_top(scored, k)
    }

    pub fn topk(&self, query: &str, tokenizer: &dyn Tokenizer, k: usize) -> Vec<Scored> {
        self.topk_terms(&tokenizer.tokenize(&normalize_text(query)), k)
    }
}
