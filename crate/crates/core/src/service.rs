//! The conversational service behind the HTTP API, independent of any web
//! framework: sessions in, answers and interaction records out.

use std::path::Path;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Intent, QueryType};
use crate::config::AppConfig;
use crate::engine::{AgentOutcome, Engine, EngineError, OutcomeKind, PipelineMode, TurnContext};
use crate::ids::UnitId;
use crate::index::{BuildError, IndexError, IndexSet, UnitRecord};
use crate::ingest::{read_documents, read_faqs, CleaningReport, IngestError, Ingestor, SimpleTokenizer};
use crate::session::{context_window, Clock, SessionError, SessionStore, SystemClock, Turn};
use crate::telemetry::{
    daily_range, estimate_cost_as, DailyMetrics, InteractionRecord, PriceSheet, RecordLog, TelemetryError, Verdict,
};

/// Longest accepted message, in characters.
pub const MAX_MESSAGE_CHARS: usize = 4000;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("{0}")]
    BadRequest(String),
    #[error("an ingest is already running")]
    IngestRunning,
    #[error("ingest failed: {0}")]
    Ingest(String),
}

/// How a [`ServiceError`] should be reported to a client.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    NotFound,
    BadRequest,
    Conflict,
    /// A dependency is down; `retryable` tells the client whether to retry.
    Unavailable { retryable: bool },
    Internal,
}

impl ServiceError {
    pub fn class(&self) -> ErrorClass {
        match self {
            ServiceError::Session(e) if e.is_not_found() => ErrorClass::NotFound,
            ServiceError::Telemetry(TelemetryError::UnknownRecord(_)) => ErrorClass::NotFound,
            ServiceError::Telemetry(TelemetryError::MissingPrice(_)) => ErrorClass::NotFound,
            ServiceError::Telemetry(TelemetryError::InvalidTransition) => ErrorClass::BadRequest,
            ServiceError::BadRequest(_) => ErrorClass::BadRequest,
            ServiceError::IngestRunning => ErrorClass::Conflict,
            ServiceError::Engine(e) => ErrorClass::Unavailable { retryable: e.is_retryable() },
            _ => ErrorClass::Internal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TokenUsage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// A cited unit with the text a client shows when the citation is opened.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitedUnit {
    pub id: UnitId,
    pub title: String,
    pub text: String,
}

impl From<&UnitRecord> for CitedUnit {
    fn from(u: &UnitRecord) -> Self {
        Self { id: u.id, title: u.title.clone(), text: u.text.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MessageReply {
    pub record_id: String,
    pub session_id: String,
    pub turn_index: usize,
    pub answer: String,
    pub kind: OutcomeKind,
    pub refused: bool,
    pub agent: Intent,
    pub query_type: QueryType,
    pub citations: Vec<CitedUnit>,
    pub usage: TokenUsage,
    pub first_token_ms: f64,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub model: String,
    pub records: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub usd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub report: CleaningReport,
    pub units: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub units: usize,
    pub embedder: String,
    pub model: String,
    pub records: usize,
    pub ingest_running: bool,
}

/// Cleans, chunks and indexes a corpus with the configured settings.
pub fn build_index(cfg: &AppConfig, corpus: &Path, faq: &Path) -> Result<(CleaningReport, IndexSet), ServiceError> {
    let docs = read_documents(corpus).map_err(ingest_err)?;
    let faqs = read_faqs(faq).map_err(ingest_err)?;
    let tokenizer = Arc::new(SimpleTokenizer);
    let out = Ingestor::new(cfg.ingest.clone(), tokenizer.clone()).map_err(ingest_err)?.run(docs, faqs).map_err(ingest_err)?;
    let index = IndexSet::build(&out.chunks, &out.faqs, cfg.embedder().as_ref(), tokenizer.as_ref(), cfg.bm25)
        .map_err(|e: BuildError| ServiceError::Ingest(e.to_string()))?;
    Ok((out.report, index))
}

fn ingest_err(e: IngestError) -> ServiceError {
    ServiceError::Ingest(e.to_string())
}

/// Shared state for every request.
///
/// The engine sits behind a lock only so that re-ingest can swap it; each
/// request takes a cheap clone and keeps it for the whole turn.
pub struct ChatService {
    engine: RwLock<Arc<Engine>>,
    sessions: SessionStore,
    records: RecordLog,
    prices: PriceSheet,
    clock: Arc<dyn Clock>,
    mode: PipelineMode,
    ingest: Mutex<()>,
}

impl ChatService {
    pub fn new(engine: Engine, sessions: SessionStore, records: RecordLog, prices: PriceSheet, clock: Arc<dyn Clock>) -> Self {
        Self {
            engine: RwLock::new(Arc::new(engine)),
            sessions,
            records,
            prices,
            clock,
            mode: PipelineMode::Hybrid,
            ingest: Mutex::new(()),
        }
    }

    /// Persistent state under `cfg.service.data_dir`: `sessions/` and
    /// `records.jsonl`.
    pub fn open(cfg: &AppConfig, engine: Engine) -> Result<Self, ServiceError> {
        let dir = &cfg.service.data_dir;
        let clock: Arc<dyn Clock> = Arc::new(SystemClock);
        let sessions = SessionStore::open(dir.join("sessions"), clock.clone())?
            .with_idle_expiry(chrono::Duration::hours(cfg.service.session_idle_hours));
        let records = RecordLog::open(dir.join("records.jsonl"))?;
        Ok(Self::new(engine, sessions, records, cfg.prices.clone(), clock))
    }

    /// Everything in memory, for tests and demos.
    pub fn in_memory(engine: Engine, prices: PriceSheet, clock: Arc<dyn Clock>) -> Self {
        Self::new(engine, SessionStore::in_memory(clock.clone()), RecordLog::in_memory(), prices, clock)
    }

    pub fn with_mode(mut self, mode: PipelineMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn engine(&self) -> Arc<Engine> {
        self.engine.read().expect("engine lock poisoned").clone()
    }

    pub fn sessions(&self) -> &SessionStore {
        &self.sessions
    }

    pub fn records(&self) -> &RecordLog {
        &self.records
    }

    pub fn create_session(&self) -> Result<String, ServiceError> {
        Ok(self.sessions.create()?)
    }

    /// Runs one user message end to end. Validated answer text is streamed
    /// into `sink`; the interaction record is persisted before this returns.
    /// A failed turn leaves the session and the record log untouched.
    pub fn post_message(
        &self,
        session_id: &str,
        text: &str,
        sink: &mut dyn FnMut(&str),
    ) -> Result<MessageReply, ServiceError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(ServiceError::BadRequest("message text is empty".into()));
        }
        if text.chars().count() > MAX_MESSAGE_CHARS {
            return Err(ServiceError::BadRequest(format!("message longer than {MAX_MESSAGE_CHARS} characters")));
        }
        let handle = self.sessions.get(session_id)?;
        // Held for the whole turn: one message at a time per session.
        let mut session = handle.lock().expect("session poisoned");
        let engine = self.engine();
        let ctx = TurnContext {
            profile: session.profile.clone(),
            history: context_window(&session.turns, engine.config().context_budget).messages(),
        };
        let started = Instant::now();
        let outcome = engine.answer(text, &ctx, self.mode, sink)?;
        let latency_ms = started.elapsed().as_secs_f64() * 1e3;

        let turn_index = session.user_turns();
        let user = Turn { profile: Some(outcome.profile.clone()), ..Turn::user(text) };
        let asked = self.sessions.append(&mut session, user)?;
        self.sessions
            .append(&mut session, Turn::assistant(outcome.text.clone(), outcome.agent, outcome.citations.clone()))?;

        let record = record_of(&outcome, session_id, turn_index, text, engine.provider().model(), asked.timestamp, latency_ms);
        self.records.append(record.clone())?;
        let index = engine.index();
        Ok(MessageReply {
            record_id: record.record_id,
            session_id: session_id.to_string(),
            turn_index,
            answer: outcome.text.clone(),
            kind: outcome.kind,
            refused: outcome.is_refusal(),
            agent: outcome.agent,
            query_type: outcome.classification.query_type,
            citations: outcome.citations.iter().filter_map(|id| index.unit(*id)).map(CitedUnit::from).collect(),
            usage: TokenUsage { input_tokens: record.input_tokens, output_tokens: record.output_tokens },
            first_token_ms: record.first_token_ms,
            latency_ms,
        })
    }

    /// Marks a record. Re-marking replaces the earlier verdict.
    pub fn set_verdict(&self, record_id: &str, verdict: Verdict, rater: Option<String>) -> Result<InteractionRecord, ServiceError> {
        Ok(self.records.set_verdict(record_id, verdict, rater, self.clock.now())?)
    }

    pub fn daily(&self, from: NaiveDate, to: NaiveDate) -> Result<Vec<DailyMetrics>, ServiceError> {
        if to < from {
            return Err(ServiceError::BadRequest("`to` is before `from`".into()));
        }
        if (to - from).num_days() > 366 {
            return Err(ServiceError::BadRequest("range longer than a year".into()));
        }
        Ok(daily_range(&self.records.records(), from, to))
    }

    /// Cost of every logged record, priced as `model`.
    pub fn cost(&self, model: &str) -> Result<CostReport, ServiceError> {
        let records = self.records.records();
        let usd = estimate_cost_as(&records, &self.prices, model)?;
        Ok(CostReport {
            model: model.to_string(),
            records: records.len(),
            input_tokens: records.iter().map(|r| r.input_tokens).sum(),
            output_tokens: records.iter().map(|r| r.output_tokens).sum(),
            usd,
        })
    }

    pub fn unit(&self, id: UnitId) -> Option<CitedUnit> {
        self.engine().index().unit(id).map(CitedUnit::from)
    }

    pub fn ingest_running(&self) -> bool {
        self.ingest.try_lock().is_err()
    }

    /// Builds a new index with `build` and swaps it in. Only one ingest runs
    /// at a time; a second call fails with [`ServiceError::IngestRunning`]
    /// instead of waiting. Requests in flight finish on the old index.
    pub fn reingest(
        &self,
        build: impl FnOnce() -> Result<(CleaningReport, IndexSet), ServiceError>,
    ) -> Result<IngestSummary, ServiceError> {
        let _exclusive = self.ingest.try_lock().map_err(|_| ServiceError::IngestRunning)?;
        let (report, index) = build()?;
        let current = self.engine();
        if index.embedder_name() != current.index().embedder_name() {
            return Err(ServiceError::Ingest(format!(
                "new index uses embedder {:?}, engine expects {:?}",
                index.embedder_name(),
                current.index().embedder_name()
            )));
        }
        let units = index.len();
        let next = current.with_index(Arc::new(index));
        *self.engine.write().expect("engine lock poisoned") = Arc::new(next);
        Ok(IngestSummary { report, units })
    }

    /// Writes the live index to `dir`.
    pub fn save_index(&self, dir: &Path) -> Result<(), IndexError> {
        self.engine().index().save_snapshot(dir).map(|_| ())
    }

    pub fn health(&self) -> Health {
        let engine = self.engine();
        Health {
            status: "ok".into(),
            units: engine.index().len(),
            embedder: engine.index().embedder_name().to_string(),
            model: engine.provider().model().to_string(),
            records: self.records.len(),
            ingest_running: self.ingest_running(),
        }
    }
}

fn record_of(
    outcome: &AgentOutcome,
    session_id: &str,
    turn_index: usize,
    question: &str,
    model: &str,
    timestamp: chrono::DateTime<chrono::Utc>,
    total_ms: f64,
) -> InteractionRecord {
    InteractionRecord {
        record_id: format!("{session_id}-{turn_index:04}"),
        session_id: session_id.to_string(),
        turn_index,
        timestamp,
        question: question.to_string(),
        answer: outcome.text.clone(),
        agent: outcome.agent,
        query_type: outcome.classification.query_type,
        citations: outcome.citations.clone(),
        refused: outcome.is_refusal(),
        model: model.to_string(),
        input_tokens: u64::from(outcome.input_tokens()),
        output_tokens: u64::from(outcome.output_tokens()),
        first_token_ms: outcome.generation.as_ref().map_or(0.0, |g| g.first_token_ms + outcome.retrieval_ms),
        total_ms,
        verdict: Verdict::Unrated,
        rater: None,
    }
}
