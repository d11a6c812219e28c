//! Corpus preparation: normalization, PII redaction, entropy filtering,
//! near-duplicate removal and sliding-window chunking.
//!
//! Everything here is a pure function except [`read_documents`] and
//! [`read_faqs`]; [`Ingestor::run`] is the batch job that turns raw records
//! into indexable [`Chunk`]s and cleaned [`FaqPair`]s.

mod chunk;
mod dedup;
mod entropy;
mod normalize;
mod pii;
mod tokenize;

use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use chunk::{chunk_spans, ChunkConfig};
pub use dedup::{dedup_by, jaccard, DedupOutcome, Removed};
pub use entropy::{char_entropy, entropy_gate, EntropyBand, EntropyReject, EntropyVerdict};
pub use normalize::{clean_text, fold_diacritics, normalize_text};
pub use pii::{redact_pii, PiiPatterns, RedactionCounts, Redactor};
pub use tokenize::{tokenize, SimpleTokenizer, Token, Tokenizer};

use crate::ids::{UnitId, UnitKind, MAX_UNIT_NUMBER};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("invalid chunking: size {size}, stride {stride} (need 0 < stride <= size)")]
    InvalidChunking { size: usize, stride: usize },
    #[error("dedup threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("duplicate document id {0:?}")]
    DuplicateDocId(String),
    #[error("duplicate faq id {0}")]
    DuplicateFaqId(UnitId),
    #[error("faq {0} has an empty question or answer")]
    EmptyFaq(UnitId),
    #[error("corpus produces more than {MAX_UNIT_NUMBER} chunks")]
    TooManyChunks,
    #[error("invalid PII pattern: {0}")]
    Pattern(#[from] regex::Error),
    #[error("{path}:{line}: {source}")]
    Parse {
        path: String,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocSource {
    FaqExport,
    DriveDoc,
    WebPage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDocument {
    pub doc_id: String,
    pub title: String,
    pub body: String,
    pub source: DocSource,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaqPair {
    pub faq_id: UnitId,
    pub question: String,
    pub answer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: UnitId,
    pub parent_doc: String,
    pub title: String,
    pub token_start: usize,
    pub token_len: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f32>>,
}

/// Counts emitted by an ingest run.
///
/// `docs_in = entropy_rejects + docs_deduped + docs_retained`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub docs_in: usize,
    pub entropy_rejects: usize,
    pub docs_deduped: usize,
    pub docs_retained: usize,
    pub faqs_in: usize,
    pub faqs_deduped: usize,
    pub faqs_retained: usize,
    pub pii_redactions: RedactionCounts,
    pub chunks_out: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub chunk: ChunkConfig,
    pub dedup_threshold: f64,
    pub entropy: EntropyBand,
    pub pii: PiiPatterns,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            chunk: ChunkConfig::default(),
            dedup_threshold: 0.9,
            entropy: EntropyBand::default(),
            pii: PiiPatterns::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub chunks: Vec<Chunk>,
    pub faqs: Vec<FaqPair>,
    pub removed_docs: Vec<String>,
    pub report: CleaningReport,
}

pub struct Ingestor {
    cfg: IngestConfig,
    tokenizer: Arc<dyn Tokenizer>,
    redactor: Redactor,
}

impl Ingestor {
    pub fn new(cfg: IngestConfig, tokenizer: Arc<dyn Tokenizer>) -> Result<Self, IngestError> {
        cfg.chunk.validate()?;
        if !(cfg.dedup_threshold > 0.0 && cfg.dedup_threshold <= 1.0) {
            return Err(IngestError::InvalidThreshold(cfg.dedup_threshold));
        }
        let redactor = Redactor::new(&cfg.pii)?;
        Ok(Self { cfg, tokenizer, redactor })
    }

    pub fn tokenizer(&self) -> &Arc<dyn Tokenizer> {
        &self.tokenizer
    }

    pub fn run(&self, docs: Vec<RawDocument>, faqs: Vec<FaqPair>) -> Result<IngestOutput, IngestError> {
        let mut report = CleaningReport { docs_in: docs.len(), faqs_in: faqs.len(), ..Default::default() };

        let mut seen = HashSet::new();
        for d in &docs {
            if !seen.insert(d.doc_id.clone()) {
                return Err(IngestError::DuplicateDocId(d.doc_id.clone()));
            }
        }

        let mut cleaned = Vec::with_capacity(docs.len());
        for mut doc in docs {
            let body = clean_text(&doc.body);
            if !entropy_gate(&normalize_text(&body), self.cfg.entropy).is_accept() {
                report.entropy_rejects += 1;
                continue;
            }
            let (body, counts) = self.redactor.redact(&body);
            report.pii_redactions.add(counts);
            doc.title = clean_text(&doc.title);
            doc.body = body;
            cleaned.push(doc);
        }

        let dedup = dedup_by(cleaned, self.cfg.dedup_threshold, self.tokenizer.as_ref(), |d| &d.body);
        report.docs_deduped = dedup.removed.len();
        report.docs_retained = dedup.retained.len();
        let removed_docs = dedup.removed.into_iter().map(|r| r.item.doc_id).collect();

        let mut chunks = Vec::new();
        for doc in &dedup.retained {
            for chunk in self.chunk_document(doc)? {
                let number = chunks.len() + 1;
                if number > MAX_UNIT_NUMBER as usize {
                    return Err(IngestError::TooManyChunks);
                }
                let chunk_id = UnitId::new(UnitKind::Doc, number as u16).expect("bounded above");
                chunks.push(Chunk { chunk_id, ..chunk });
            }
        }
        report.chunks_out = chunks.len();

        let faqs = self.clean_faqs(faqs, &mut report)?;
        Ok(IngestOutput { chunks, faqs, removed_docs, report })
    }

    /// Windows one document. Chunk ids are placeholders (`DOC-0000`); the
    /// batch run assigns corpus-wide ids.
    pub fn chunk_document(&self, doc: &RawDocument) -> Result<Vec<Chunk>, IngestError> {
        let tokens = self.tokenizer.tokenize_spans(&doc.body);
        let spans = chunk_spans(tokens.len(), self.cfg.chunk)?;
        let placeholder = UnitId::doc(0).expect("zero is valid");
        Ok(spans
            .into_iter()
            .map(|span| {
                let bytes = tokens[span.start].start..tokens[span.end - 1].end;
                Chunk {
                    chunk_id: placeholder,
                    parent_doc: doc.doc_id.clone(),
                    title: doc.title.clone(),
                    token_start: span.start,
                    token_len: span.len(),
                    text: doc.body[bytes].to_string(),
                    embedding: None,
                }
            })
            .collect())
    }

    fn clean_faqs(&self, faqs: Vec<FaqPair>, report: &mut CleaningReport) -> Result<Vec<FaqPair>, IngestError> {
        let mut seen = HashSet::new();
        let mut cleaned = Vec::with_capacity(faqs.len());
        for mut faq in faqs {
            if faq.faq_id.kind() != UnitKind::Faq {
                return Err(IngestError::EmptyFaq(faq.faq_id));
            }
            if !seen.insert(faq.faq_id) {
                return Err(IngestError::DuplicateFaqId(faq.faq_id));
            }
            let (question, qc) = self.redactor.redact(&clean_text(&faq.question));
            let (answer, ac) = self.redactor.redact(&clean_text(&faq.answer));
            if question.is_empty() || answer.is_empty() {
                return Err(IngestError::EmptyFaq(faq.faq_id));
            }
            report.pii_redactions.add(qc);
            report.pii_redactions.add(ac);
            faq.question = question;
            faq.answer = answer;
            cleaned.push(faq);
        }
        let dedup = dedup_by(cleaned, self.cfg.dedup_threshold, self.tokenizer.as_ref(), |f| &f.question);
        report.faqs_deduped = dedup.removed.len();
        report.faqs_retained = dedup.retained.len();
        Ok(dedup.retained)
    }
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, IngestError> {
    let file = std::fs::File::open(path)?;
    parse_jsonl(std::io::BufReader::new(file), &path.display().to_string())
}

pub(crate) fn parse_jsonl<T: serde::de::DeserializeOwned>(
    reader: impl BufRead,
    origin: &str,
) -> Result<Vec<T>, IngestError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|source| IngestError::Parse {
            path: origin.to_string(),
            line: i + 1,
            source,
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Reads document records, one JSON object per line.
pub fn read_documents(path: &Path) -> Result<Vec<RawDocument>, IngestError> {
    read_jsonl(path)
}

/// Reads FAQ records, one JSON object per line.
pub fn read_faqs(path: &Path) -> Result<Vec<FaqPair>, IngestError> {
    read_jsonl(path)
}
