//! Conversation state: turns, the applicant profile, persistence and the
//! history window fed to the prompt.

mod profile;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use profile::{update_profile, UserProfile};

use crate::agents::Intent;
use crate::generate::{estimate_tokens, Message};
use crate::ids::UnitId;

pub const DEFAULT_CONTEXT_BUDGET: usize = 1200;
pub const DEFAULT_IDLE_HOURS: i64 = 24;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    NotFound(String),
    #[error("session {0} expired")]
    Expired(String),
    #[error("malformed session id {0:?}")]
    BadId(String),
    #[error("session log: {0}")]
    Io(#[from] std::io::Error),
    #[error("session log {path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

impl SessionError {
    /// Both unknown and expired sessions are reported to clients as missing.
    pub fn is_not_found(&self) -> bool {
        matches!(self, SessionError::NotFound(_) | SessionError::Expired(_) | SessionError::BadId(_))
    }
}

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// A clock that moves only when told to.
#[derive(Debug)]
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(start: DateTime<Utc>) -> Self {
        Self(Mutex::new(start))
    }

    pub fn advance(&self, by: Duration) {
        *self.0.lock().expect("clock poisoned") += by;
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().expect("clock poisoned")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnRole {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub role: TurnRole,
    pub text: String,
    pub timestamp: DateTime<Utc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<Intent>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub citations: Vec<UnitId>,
    /// Profile after this turn was applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<UserProfile>,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: TurnRole::User, text: text.into(), timestamp: DateTime::UNIX_EPOCH, agent: None, citations: vec![], profile: None }
    }

    pub fn assistant(text: impl Into<String>, agent: Intent, citations: Vec<UnitId>) -> Self {
        Self { role: TurnRole::Assistant, agent: Some(agent), citations, ..Self::user(text) }
    }

    pub fn as_message(&self) -> Message {
        match self.role {
            TurnRole::User => Message::user(self.text.clone()),
            TurnRole::Assistant => Message::assistant(self.text.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Open { session_id: String, created_at: DateTime<Utc> },
    Turn(Turn),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatSession {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub turns: Vec<Turn>,
    pub profile: UserProfile,
}

impl ChatSession {
    pub fn new(session_id: String, created_at: DateTime<Utc>) -> Self {
        Self { session_id, created_at, turns: Vec::new(), profile: UserProfile::default() }
    }

    pub fn last_active(&self) -> DateTime<Utc> {
        self.turns.last().map_or(self.created_at, |t| t.timestamp)
    }

    /// Number of user turns so far.
    pub fn user_turns(&self) -> usize {
        self.turns.iter().filter(|t| t.role == TurnRole::User).count()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContextWindow {
    pub turns: Vec<Turn>,
    /// The newest turn alone exceeded the budget and was cut.
    pub truncated: bool,
    pub tokens: usize,
}

impl ContextWindow {
    pub fn messages(&self) -> Vec<Message> {
        self.turns.iter().map(Turn::as_message).collect()
    }
}

/// The most recent turns that fit in `budget` tokens, oldest dropped first.
///
/// When even the newest turn does not fit, its tail is kept and the window is
/// flagged as truncated. The profile summary is not part of the budget.
pub fn context_window(turns: &[Turn], budget: usize) -> ContextWindow {
    assert!(budget > 0, "context budget must be positive");
    let mut kept = Vec::new();
    let mut used = 0;
    for t in turns.iter().rev() {
        let n = estimate_tokens(&t.text) as usize;
        if used + n > budget {
            if kept.is_empty() {
                let chars: Vec<char> = t.text.chars().collect();
                let tail: String = chars[chars.len().saturating_sub(budget * 4)..].iter().collect();
                let tokens = estimate_tokens(&tail) as usize;
                return ContextWindow { turns: vec![Turn { text: tail, ..t.clone() }], truncated: true, tokens };
            }
            break;
        }
        used += n;
        kept.push(t.clone());
    }
    kept.reverse();
    ContextWindow { turns: kept, truncated: false, tokens: used }
}

pub type SessionHandle = Arc<Mutex<ChatSession>>;

/// In-memory sessions backed by one append-only log file per session.
///
/// Each session sits behind its own mutex, so holding a session's guard
/// serializes requests for it while other sessions proceed.
pub struct SessionStore {
    dir: Option<PathBuf>,
    clock: Arc<dyn Clock>,
    idle: Duration,
    sessions: Mutex<HashMap<String, SessionHandle>>,
}

impl SessionStore {
    /// Sessions persisted under `dir`.
    pub fn open(dir: impl Into<PathBuf>, clock: Arc<dyn Clock>) -> Result<Self, SessionError> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir: Some(dir), clock, idle: Duration::hours(DEFAULT_IDLE_HOURS), sessions: Mutex::default() })
    }

    /// Sessions that live only as long as the store.
    pub fn in_memory(clock: Arc<dyn Clock>) -> Self {
        Self { dir: None, clock, idle: Duration::hours(DEFAULT_IDLE_HOURS), sessions: Mutex::default() }
    }

    pub fn with_idle_expiry(mut self, idle: Duration) -> Self {
        self.idle = idle;
        self
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn table(&self) -> MutexGuard<'_, HashMap<String, SessionHandle>> {
        self.sessions.lock().expect("session table poisoned")
    }

    fn log_path(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join(format!("{id}.jsonl")))
    }

    pub fn create(&self) -> Result<String, SessionError> {
        let id = format!("{:032x}", rand::random::<u128>());
        let session = ChatSession::new(id.clone(), self.clock.now());
        if let Some(path) = self.log_path(&id) {
            append_line(&path, &LogLine::Open { session_id: id.clone(), created_at: session.created_at })?;
        }
        self.table().insert(id.clone(), Arc::new(Mutex::new(session)));
        Ok(id)
    }

    /// Looks a session up, reloading it from disk after a restart.
    pub fn get(&self, id: &str) -> Result<SessionHandle, SessionError> {
        if id.len() != 32 || !id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(SessionError::BadId(id.to_string()));
        }
        let handle = {
            let mut table = self.table();
            match table.get(id) {
                Some(h) => h.clone(),
                None => {
                    let path = self.log_path(id).filter(|p| p.exists()).ok_or_else(|| SessionError::NotFound(id.into()))?;
                    let h = Arc::new(Mutex::new(load_log(&path)?));
                    table.insert(id.to_string(), h.clone());
                    h
                }
            }
        };
        let last = handle.lock().expect("session poisoned").last_active();
        if self.clock.now() - last > self.idle {
            self.table().remove(id);
            return Err(SessionError::Expired(id.to_string()));
        }
        Ok(handle)
    }

    /// Appends a turn, stamping it with a time strictly after the previous one.
    pub fn append(&self, session: &mut ChatSession, mut turn: Turn) -> Result<Turn, SessionError> {
        let mut ts = self.clock.now();
        let last = session.last_active();
        if ts <= last {
            ts = last + Duration::microseconds(1);
        }
        turn.timestamp = ts;
        if let Some(p) = &turn.profile {
            session.profile = p.clone();
        }
        if let Some(path) = self.log_path(&session.session_id) {
            append_line(&path, &LogLine::Turn(turn.clone()))?;
        }
        session.turns.push(turn.clone());
        Ok(turn)
    }

    /// Drops expired sessions from memory; their logs stay on disk.
    pub fn evict_expired(&self) -> usize {
        let now = self.clock.now();
        let mut table = self.table();
        let before = table.len();
        table.retain(|_, h| h.lock().map(|s| now - s.last_active() <= self.idle).unwrap_or(false));
        before - table.len()
    }
}

fn append_line(path: &Path, line: &LogLine) -> Result<(), SessionError> {
    let mut text = serde_json::to_string(line).expect("log lines serialize");
    text.push('\n');
    // one write per line keeps appends atomic at record granularity
    OpenOptions::new().create(true).append(true).open(path)?.write_all(text.as_bytes())?;
    Ok(())
}

fn load_log(path: &Path) -> Result<ChatSession, SessionError> {
    let corrupt = |message: String| SessionError::Corrupt { path: path.to_path_buf(), message };
    let mut session: Option<ChatSession> = None;
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| corrupt(format!("line {}: {e}", n + 1)))?;
        match (parsed, session.as_mut()) {
            (LogLine::Open { session_id, created_at }, None) => session = Some(ChatSession::new(session_id, created_at)),
            (LogLine::Turn(t), Some(s)) => {
                if let Some(p) = &t.profile {
                    s.profile = p.clone();
                }
                s.turns.push(t);
            }
            _ => return Err(corrupt(format!("line {}: out of order", n + 1))),
        }
    }
    session.ok_or_else(|| corrupt("empty log".into()))
}
