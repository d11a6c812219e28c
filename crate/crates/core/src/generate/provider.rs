use std::collections::HashSet;
use std::io::BufRead;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{estimate_tokens, GenerationParams};
use crate::ids::UnitId;
use crate::ingest::{normalize_text, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// Token counts as reported by the provider, when it reports them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: Option<u32>,
    pub output_tokens: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    pub first_token_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProviderError {
    #[error("provider transport error: {0}")]
    Transport(String),
    #[error("provider protocol error: {0}")]
    Protocol(String),
    #[error("scripted transcript exhausted after {0} replies")]
    ScriptExhausted(usize),
}

impl ProviderError {
    /// Whether a fresh attempt could succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, ProviderError::Transport(_))
    }
}

/// Chat-completion backend. Tokens are pushed into `sink` in emission order.
pub trait LlmProvider: Send + Sync {
    /// Model name, used for pricing and logs.
    fn model(&self) -> &str;

    fn chat(
        &self,
        messages: &[Message],
        params: &GenerationParams,
        sink: &mut dyn FnMut(&str),
    ) -> Result<Completion, ProviderError>;
}

impl<T: LlmProvider + ?Sized> LlmProvider for std::sync::Arc<T> {
    fn model(&self) -> &str {
        (**self).model()
    }

    fn chat(
        &self,
        messages: &[Message],
        params: &GenerationParams,
        sink: &mut dyn FnMut(&str),
    ) -> Result<Completion, ProviderError> {
        (**self).chat(messages, params, sink)
    }
}

/// Synthetic timing used by the mock providers so reports stay deterministic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockTiming {
    pub first_token_ms: f64,
    pub per_token_ms: f64,
}

impl Default for MockTiming {
    fn default() -> Self {
        Self { first_token_ms: 180.0, per_token_ms: 12.0 }
    }
}

/// Splits `text` into word-sized pieces that concatenate back to `text`. A
/// piece is a run of whitespace followed by the next word.
pub fn stream_pieces(text: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut prev_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() && prev_word {
            pieces.push(&text[start..i]);
            start = i;
        }
        prev_word = !c.is_whitespace();
    }
    if start < text.len() {
        pieces.push(&text[start..]);
    }
    pieces
}

fn emit(text: &str, timing: MockTiming, prompt_chars: usize, sink: &mut dyn FnMut(&str)) -> Completion {
    let pieces = stream_pieces(text);
    for p in &pieces {
        sink(p);
    }
    let output = estimate_tokens(text);
    Completion {
        text: text.to_string(),
        usage: Usage { input_tokens: Some(prompt_chars.div_ceil(4) as u32), output_tokens: Some(output) },
        first_token_ms: timing.first_token_ms,
        total_ms: timing.first_token_ms + timing.per_token_ms * pieces.len().saturating_sub(1) as f64,
    }
}

fn prompt_chars(messages: &[Message]) -> usize {
    messages.iter().map(|m| m.content.chars().count()).sum()
}

/// One entry of a mock transcript: a reply, or an injected failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Reply(String),
    Error { error: String },
}

/// Replays a fixed list of replies in call order, across all callers.
pub struct ScriptedProvider {
    steps: Vec<ScriptStep>,
    next: AtomicUsize,
    timing: MockTiming,
    calls: Mutex<Vec<Vec<Message>>>,
}

impl ScriptedProvider {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        Self { steps, next: AtomicUsize::new(0), timing: MockTiming::default(), calls: Mutex::new(Vec::new()) }
    }

    pub fn replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|r| ScriptStep::Reply(r.into())).collect())
    }

    /// Reads a JSON list whose items are strings or `{"error": "..."}`.
    pub fn from_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let steps = serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(steps))
    }

    pub fn with_timing(mut self, timing: MockTiming) -> Self {
        self.timing = timing;
        self
    }

    pub fn calls_made(&self) -> usize {
        self.next.load(Ordering::SeqCst).min(self.steps.len() + 1)
    }

    /// Prompts received so far, in call order.
    pub fn requests(&self) -> Vec<Vec<Message>> {
        self.calls.lock().expect("request log").clone()
    }
}

impl LlmProvider for ScriptedProvider {
    fn model(&self) -> &str {
        "scripted-mock"
    }

    fn chat(
        &self,
        messages: &[Message],
        _params: &GenerationParams,
        sink: &mut dyn FnMut(&str),
    ) -> Result<Completion, ProviderError> {
        self.calls.lock().expect("request log").push(messages.to_vec());
        let i = self.next.fetch_add(1, Ordering::SeqCst);
        match self.steps.get(i) {
            None => Err(ProviderError::ScriptExhausted(self.steps.len())),
            Some(ScriptStep::Error { error }) => Err(ProviderError::Transport(error.clone())),
            Some(ScriptStep::Reply(text)) => Ok(emit(text, self.timing, prompt_chars(messages), sink)),
        }
    }
}

/// Deterministic stand-in for a grounded LLM.
///
/// It reads the passages out of the prompt, answers with the passage sentence
/// that best overlaps the question and cites that passage. Lines under
/// `Computed facts:` are repeated verbatim, cited to the top passage. With no
/// passages in the prompt it produces a plausible but uncited reply, which is
/// how an ungrounded model behaves under the citation guard.
pub struct GroundedMockProvider {
    timing: MockTiming,
}

impl Default for GroundedMockProvider {
    fn default() -> Self {
        Self { timing: MockTiming::default() }
    }
}

impl GroundedMockProvider {
    pub fn new(timing: MockTiming) -> Self {
        Self { timing }
    }

    fn compose(messages: &[Message]) -> String {
        let system = messages.iter().filter(|m| m.role == Role::System).map(|m| m.content.as_str());
        let passages: Vec<(UnitId, &str)> = system.flat_map(parse_passages).collect();
        let user = messages.iter().rev().find(|m| m.role == Role::User).map_or("", |m| m.content.as_str());
        let question = user.rsplit("Question:").next().unwrap_or(user).trim();
        let facts: Vec<&str> = user
            .split("Computed facts:")
            .nth(1)
            .map(|block| {
                block
                    .lines()
                    .map(str::trim)
                    .skip_while(|l| l.is_empty())
                    .take_while(|l| !l.is_empty() && !l.starts_with("Question:"))
                    .filter_map(|l| l.strip_prefix("- "))
                    .collect()
            })
            .unwrap_or_default();

        let Some(&(top_id, _)) = passages.first() else {
            return format!("Based on general knowledge about universities: {question} It depends on the programme and the year.");
        };
        let q_tokens: HashSet<String> = tokenize(&normalize_text(question)).into_iter().collect();
        let mut best: Option<(usize, UnitId, &str)> = None;
        for (id, text) in &passages {
            // Question sentences (FAQ prompts) restate rather than answer.
            for sentence in sentences(text).into_iter().filter(|s| !s.trim_end().ends_with('?')) {
                let overlap = tokenize(&normalize_text(sentence)).into_iter().filter(|t| q_tokens.contains(t)).count();
                if best.is_none_or(|(o, _, _)| overlap > o) {
                    best = Some((overlap, *id, sentence));
                }
            }
        }
        let mut out = String::new();
        for fact in &facts {
            out.push_str(&format!("{fact} [{top_id}]\n"));
        }
        if let Some((_, id, sentence)) = best {
            out.push_str(&format!("{} [{id}]", sentence.trim()));
        }
        out.trim_end().to_string()
    }
}

impl LlmProvider for GroundedMockProvider {
    fn model(&self) -> &str {
        "grounded-mock"
    }

    fn chat(
        &self,
        messages: &[Message],
        _params: &GenerationParams,
        sink: &mut dyn FnMut(&str),
    ) -> Result<Completion, ProviderError> {
        Ok(emit(&Self::compose(messages), self.timing, prompt_chars(messages), sink))
    }
}

/// Extracts `[ID] text` passage blocks from a rendered system prompt.
pub fn parse_passages(prompt: &str) -> Vec<(UnitId, &str)> {
    prompt
        .split("\n\n")
        .filter_map(|block| {
            let block = block.trim();
            let rest = block.strip_prefix('[')?;
            let (id, text) = rest.split_once(']')?;
            Some((id.parse().ok()?, text.trim()))
        })
        .collect()
}

/// Splits after `.`, `?`, `!` or a newline, but only when followed by
/// whitespace or the end, so "1.200" stays whole.
fn sentences(text: &str) -> impl Iterator<Item = &str> {
    let mut cuts = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let at_break = chars.peek().is_none_or(|(_, n)| n.is_whitespace());
        if c == '\n' || (matches!(c, '.' | '?' | '!') && at_break) {
            cuts.push(i + c.len_utf8());
        }
    }
    cuts.push(text.len());
    let mut start = 0;
    cuts.into_iter()
        .map(move |end| {
            let s = &text[start..end.max(start)];
            start = end.max(start);
            s
        })
        .map(str::trim)
        .filter(|s| !s.is_empty())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HttpLlmConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

impl HttpLlmConfig {
    /// Reads `LLM_BASE_URL`, `LLM_MODEL` and `LLM_API_KEY`.
    pub fn from_env() -> Option<Self> {
        Some(Self {
            base_url: std::env::var("LLM_BASE_URL").ok()?,
            model: std::env::var("LLM_MODEL").ok()?,
            api_key: std::env::var("LLM_API_KEY").ok(),
            timeout_secs: default_timeout_secs(),
        })
    }
}

/// Streaming client for a `POST {base}/chat/completions` endpoint.
pub struct HttpChatProvider {
    cfg: HttpLlmConfig,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct StreamChunk {
    #[serde(default)]
    choices: Vec<StreamChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct StreamChoice {
    #[serde(default)]
    delta: Delta,
}

#[derive(Deserialize, Default)]
struct Delta {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u32,
    completion_tokens: u32,
}

impl HttpChatProvider {
    pub fn new(cfg: HttpLlmConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_secs)))
            .http_status_as_error(true)
            .build()
            .into();
        Self { cfg, agent }
    }
}

/// Folds server-sent `data:` lines of a chat-completions stream.
pub(crate) fn read_event_stream(
    reader: impl BufRead,
    started: Instant,
    sink: &mut dyn FnMut(&str),
) -> Result<Completion, ProviderError> {
    let mut text = String::new();
    let mut usage = Usage::default();
    let mut first_token_ms = None;
    for line in reader.lines() {
        let line = line.map_err(|e| ProviderError::Transport(e.to_string()))?;
        let Some(data) = line.strip_prefix("data:") else { continue };
        let data = data.trim();
        if data == "[DONE]" {
            break;
        }
        let chunk: StreamChunk = serde_json::from_str(data).map_err(|e| ProviderError::Protocol(e.to_string()))?;
        if let Some(u) = chunk.usage {
            usage = Usage { input_tokens: Some(u.prompt_tokens), output_tokens: Some(u.completion_tokens) };
        }
        for choice in chunk.choices {
            if let Some(piece) = choice.delta.content.filter(|p| !p.is_empty()) {
                first_token_ms.get_or_insert_with(|| started.elapsed().as_secs_f64() * 1e3);
                sink(&piece);
                text.push_str(&piece);
            }
        }
    }
    let total_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(Completion { text, usage, first_token_ms: first_token_ms.unwrap_or(total_ms), total_ms })
}

impl LlmProvider for HttpChatProvider {
    fn model(&self) -> &str {
        &self.cfg.model
    }

    fn chat(
        &self,
        messages: &[Message],
        params: &GenerationParams,
        sink: &mut dyn FnMut(&str),
    ) -> Result<Completion, ProviderError> {
        let url = format!("{}/chat/completions", self.cfg.base_url.trim_end_matches('/'));
        let body = serde_json::json!({
            "model": self.cfg.model,
            "messages": messages,
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "stream": true,
            "stream_options": { "include_usage": true },
        });
        let mut req = self.agent.post(&url);
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let started = Instant::now();
        let mut resp = req.send_json(&body).map_err(|e| ProviderError::Transport(e.to_string()))?;
        let reader = std::io::BufReader::new(resp.body_mut().as_reader());
        read_event_stream(reader, started, sink)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pieces_concatenate_back() {
        for text in ["", "a", "Hello world [DOC-0001].", "  lead  and trail  ", "một hai\nba"] {
            assert_eq!(stream_pieces(text).concat(), text);
        }
        assert_eq!(stream_pieces("a b c"), ["a", " b", " c"]);
    }

    #[test]
    fn scripted_replays_then_exhausts() {
        let p = ScriptedProvider::replies(["one", "two"]);
        let params = GenerationParams::default();
        let mut seen = String::new();
        let c = p.chat(&[Message::user("q")], &params, &mut |t| seen.push_str(t)).unwrap();
        assert_eq!((c.text.as_str(), seen.as_str()), ("one", "one"));
        assert_eq!(p.chat(&[], &params, &mut |_| {}).unwrap().text, "two");
        assert_eq!(p.chat(&[], &params, &mut |_| {}), Err(ProviderError::ScriptExhausted(2)));
    }

    #[test]
    fn script_file_accepts_errors() {
        let steps: Vec<ScriptStep> = serde_json::from_str(r#"["ok", {"error": "timeout"}]"#).unwrap();
        assert_eq!(steps[1], ScriptStep::Error { error: "timeout".into() });
    }

    #[test]
    fn grounded_mock_cites_best_passage() {
        let system = "Answer only from the passages.\n\nPassages:\n\n[FAQ-0001] Học phí ngành kế toán là 14,9 triệu đồng.\n\n[DOC-0002] Ký túc xá có 1.200 chỗ.";
        let messages = [Message::system(system), Message::user("Question: ký túc xá có bao nhiêu chỗ?")];
        let out = GroundedMockProvider::compose(&messages);
        assert_eq!(out, "Ký túc xá có 1.200 chỗ. [DOC-0002]");
    }

    #[test]
    fn grounded_mock_without_passages_is_uncited() {
        let out = GroundedMockProvider::compose(&[Message::system("x"), Message::user("Question: học phí?")]);
        assert!(!out.contains('['));
    }

    #[test]
    fn event_stream_parsing() {
        let body = "data: {\"choices\":[{\"delta\":{\"content\":\"Hi\"}}]}\n\n\
                    data: {\"choices\":[{\"delta\":{\"content\":\" there\"}}]}\n\n\
                    data: {\"choices\":[],\"usage\":{\"prompt_tokens\":12,\"completion_tokens\":2}}\n\n\
                    data: [DONE]\n";
        let mut pieces = Vec::new();
        let c = read_event_stream(body.as_bytes(), Instant::now(), &mut |t| pieces.push(t.to_string())).unwrap();
        assert_eq!(c.text, "Hi there");
        assert_eq!(pieces, ["Hi", " there"]);
        assert_eq!(c.usage, Usage { input_tokens: Some(12), output_tokens: Some(2) });
        assert!(c.total_ms >= c.first_token_ms);
    }
}
