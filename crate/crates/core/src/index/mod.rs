//! Dense and keyword indexes over FAQ pairs and document chunks.
//!
//! Both indexes share one row order, the order of [`IndexSet::units`]. The set
//! is immutable after [`IndexSet::build`]; rebuilding produces a fresh set that
//! a server swaps in whole.

mod dense;
mod embed;
mod snapshot;
mod sparse;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dense::{build_dense, DenseIndex};
pub use embed::{
    dot, EmbedError, EmbeddingProvider, EmbeddingVector, HashEmbedder, HttpEmbedder, HttpEmbedderConfig, EMBEDDING_DIM,
};
pub use snapshot::{Manifest, SNAPSHOT_VERSION};
pub use sparse::{Bm25Params, Posting, SparseIndex};

use crate::ids::UnitId;
use crate::ingest::{Chunk, FaqPair, Tokenizer};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("duplicate unit id {0}")]
    DuplicateId(UnitId),
    #[error("unknown unit {0}")]
    UnknownUnit(UnitId),
    #[error("snapshot format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checksum mismatch for {0}")]
    Checksum(String),
    #[error("corrupt snapshot: {0}")]
    Corrupt(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("embedding failed after {embedded} of {total} units: {source}")]
    Embedding {
        embedded: usize,
        total: usize,
        #[source]
        source: EmbedError,
    },
    #[error(transparent)]
    Index(#[from] IndexError),
}

/// A unit id paired with a retrieval score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub id: UnitId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UnitSource {
    Chunk { parent_doc: String, token_start: usize, token_len: usize },
    Faq { question: String, answer: String },
}

/// What the indexes know about one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub id: UnitId,
    pub title: String,
    /// Passage text handed to the re-ranker and the generator.
    pub text: String,
    pub source: UnitSource,
}

impl UnitRecord {
    pub fn from_chunk(c: &Chunk) -> Self {
        Self {
            id: c.chunk_id,
            title: c.title.clone(),
            text: c.text.clone(),
            source: UnitSource::Chunk {
                parent_doc: c.parent_doc.clone(),
                token_start: c.token_start,
                token_len: c.token_len,
            },
        }
    }

    pub fn from_faq(f: &FaqPair) -> Self {
        Self {
            id: f.faq_id,
            title: f.question.clone(),
            text: format!("{} {}", f.question, f.answer),
            source: UnitSource::Faq { question: f.question.clone(), answer: f.answer.clone() },
        }
    }

    /// FAQ questions are embedded alone so a verbatim question scores 1.0.
    pub fn dense_text(&self) -> String {
        match &self.source {
            UnitSource::Faq { question, .. } => question.clone(),
            UnitSource::Chunk { .. } => format!("{} {}", self.title, self.text),
        }
    }

    pub fn keyword_text(&self) -> String {
        match &self.source {
            UnitSource::Faq { .. } => self.text.clone(),
            UnitSource::Chunk { .. } => format!("{} {}", self.title, self.text),
        }
    }

    pub fn parent_doc(&self) -> Option<&str> {
        match &self.source {
            UnitSource::Chunk { parent_doc, .. } => Some(parent_doc),
            UnitSource::Faq { .. } => None,
        }
    }
}

/// Units plus their dense and keyword indexes.
#[derive(Debug, Clone)]
pub struct IndexSet {
    units: Vec<UnitRecord>,
    rows: HashMap<UnitId, usize>,
    dense: DenseIndex,
    sparse: SparseIndex,
    embedder: String,
}

impl IndexSet {
    pub fn build(
        chunks: &[Chunk],
        faqs: &[FaqPair],
        embedder: &dyn EmbeddingProvider,
        tokenizer: &dyn Tokenizer,
        params: Bm25Params,
    ) -> Result<Self, BuildError> {
        let units = faqs
            .iter()
            .map(UnitRecord::from_faq)
            .chain(chunks.iter().map(UnitRecord::from_chunk))
            .collect();
        Self::from_units(units, embedder, tokenizer, params)
    }

    pub fn from_units(
        units: Vec<UnitRecord>,
        embedder: &dyn EmbeddingProvider,
        tokenizer: &dyn Tokenizer,
        params: Bm25Params,
    ) -> Result<Self, BuildError> {
        let dense_texts: Vec<(UnitId, String)> = units.iter().map(|u| (u.id, u.dense_text())).collect();
        let dense_refs: Vec<(UnitId, &str)> = dense_texts.iter().map(|(id, t)| (*id, t.as_str())).collect();
        let dense = build_dense(&dense_refs, embedder)?;
        let kw_texts: Vec<(UnitId, String)> = units.iter().map(|u| (u.id, u.keyword_text())).collect();
        let kw_refs: Vec<(UnitId, &str)> = kw_texts.iter().map(|(id, t)| (*id, t.as_str())).collect();
        let sparse = SparseIndex::from_texts(&kw_refs, tokenizer, params)?;
        Ok(Self::assemble(units, dense, sparse, embedder.name().to_string())?)
    }

    pub(crate) fn assemble(
        units: Vec<UnitRecord>,
        dense: DenseIndex,
        sparse: SparseIndex,
        embedder: String,
    ) -> Result<Self, IndexError> {
        let rows: HashMap<UnitId, usize> = units.iter().enumerate().map(|(i, u)| (u.id, i)).collect();
        if rows.len() != units.len() {
            return Err(IndexError::Corrupt("duplicate unit records".into()));
        }
        let order: Vec<UnitId> = units.iter().map(|u| u.id).collect();
        if dense.ids() != order.as_slice() || sparse.ids() != order.as_slice() {
            return Err(IndexError::Corrupt("index row order differs from unit table".into()));
        }
        Ok(Self { units, rows, dense, sparse, embedder })
    }

    pub fn empty(embedder: &str) -> Self {
        Self {
            units: Vec::new(),
            rows: HashMap::new(),
            dense: DenseIndex::default(),
            sparse: SparseIndex::default(),
            embedder: embedder.to_string(),
        }
    }

    pub fn units(&self) -> &[UnitRecord] {
        &self.units
    }

    pub fn unit(&self, id: UnitId) -> Option<&UnitRecord> {
        self.rows.get(&id).map(|&r| &self.units[r])
    }

    pub fn contains(&self, id: UnitId) -> bool {
        self.rows.contains_key(&id)
    }

    pub fn dense(&self) -> &DenseIndex {
        &self.dense
    }

    pub fn sparse(&self) -> &SparseIndex {
        &self.sparse
    }

    pub fn embedder_name(&self) -> &str {
        &self.embedder
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    /// Chunk ids whose parent document is `doc_id`.
    pub fn chunks_of(&self, doc_id: &str) -> Vec<UnitId> {
        self.units.iter().filter(|u| u.parent_doc() == Some(doc_id)).map(|u| u.id).collect()
    }
}
