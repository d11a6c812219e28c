//! Grounded prompt assembly, the citation guard and the regenerate loop.
//!
//! [`generate_answer`] buffers each attempt. Only an answer that passes
//! [`enforce_citations`] is forwarded to the caller's token sink, so a client
//! never sees text that is later withdrawn.

mod provider;

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use provider::{
    parse_passages, stream_pieces, Completion, GroundedMockProvider, HttpChatProvider, HttpLlmConfig, LlmProvider,
    Message, MockTiming, ProviderError, Role, ScriptStep, ScriptedProvider, Usage,
};

use crate::ids::UnitId;
use crate::retrieve::RankedPassage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self { temperature: 0.7, top_p: 0.9, max_tokens: 350 }
    }
}

impl GenerationParams {
    pub const PENALIZED: GenerationParams = GenerationParams { temperature: 0.3, top_p: 0.8, max_tokens: 350 };

    pub fn validate(&self) -> Result<(), GenerateError> {
        let ok = (0.0..=2.0).contains(&self.temperature) && self.top_p > 0.0 && self.top_p <= 1.0 && self.max_tokens >= 1;
        if ok {
            Ok(())
        } else {
            Err(GenerateError::InvalidParams(*self))
        }
    }

    /// The stricter decoding used after a citation violation.
    pub fn penalized(&self) -> Self {
        Self { max_tokens: self.max_tokens, ..Self::PENALIZED }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GenerateError {
    #[error("no passages to ground an answer")]
    NoPassages,
    #[error("at most 2 passages fit the prompt, got {0}")]
    TooManyPassages(usize),
    #[error("prompt needs about {tokens} tokens, limit is {limit}")]
    PromptTooLong { tokens: u32, limit: u32 },
    #[error("invalid generation parameters {0:?}")]
    InvalidParams(GenerationParams),
    #[error("provider failed after {attempts} attempts: {source}")]
    Provider {
        attempts: u32,
        #[source]
        source: ProviderError,
    },
}

impl GenerateError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GenerateError::Provider { source, .. } if source.is_retryable())
    }
}

pub const MAX_PASSAGES: usize = 2;

pub const SYSTEM_INSTRUCTION: &str = "You are the admissions assistant of the university. \
Answer only from the passages below and do not speculate beyond them.\n\
Cite the ID of every passage you use in square brackets, for example [DOC-0001].\n\
If the passages do not support an answer, say: \"I don't know, please contact the admissions office.\"";

pub const CITE_REMINDER: &str = "You MUST cite passage IDs.";

/// A fully specified grounded prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub system_instruction: String,
    pub passages: Vec<RankedPassage>,
    pub user_query: String,
    pub profile_summary: Option<String>,
    /// Agent-computed statements the answer should relay (score breakdowns,
    /// eligibility rows).
    pub facts: Vec<String>,
    /// Extra system lines, e.g. a hedged-tone instruction.
    pub guidance: Vec<String>,
    pub history: Vec<Message>,
    pub params: GenerationParams,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptExtras {
    pub profile_summary: Option<String>,
    pub facts: Vec<String>,
    pub guidance: Vec<String>,
    pub history: Vec<Message>,
}

pub fn assemble_prompt(
    passages: &[RankedPassage],
    query: &str,
    extras: PromptExtras,
    params: GenerationParams,
) -> Result<PromptBundle, GenerateError> {
    if passages.is_empty() {
        return Err(GenerateError::NoPassages);
    }
    if passages.len() > MAX_PASSAGES {
        return Err(GenerateError::TooManyPassages(passages.len()));
    }
    params.validate()?;
    Ok(PromptBundle {
        system_instruction: SYSTEM_INSTRUCTION.to_string(),
        passages: passages.to_vec(),
        user_query: query.trim().to_string(),
        profile_summary: extras.profile_summary,
        facts: extras.facts,
        guidance: extras.guidance,
        history: extras.history,
        params,
    })
}

impl PromptBundle {
    pub fn passage_ids(&self) -> BTreeSet<UnitId> {
        self.passages.iter().map(|p| p.id).collect()
    }

    fn system_text(&self, penalized: bool) -> String {
        let mut s = self.system_instruction.clone();
        for g in &self.guidance {
            s.push('\n');
            s.push_str(g);
        }
        if penalized {
            s.push('\n');
            s.push_str(CITE_REMINDER);
        }
        s.push_str("\n\nPassages:");
        for p in &self.passages {
            s.push_str(&format!("\n\n[{}] {}", p.id, p.text.trim()));
        }
        s
    }

    fn user_text(&self) -> String {
        let mut s = String::new();
        if let Some(profile) = &self.profile_summary {
            s.push_str(&format!("Applicant profile: {profile}\n\n"));
        }
        if !self.facts.is_empty() {
            s.push_str("Computed facts:\n");
            for f in &self.facts {
                s.push_str(&format!("- {f}\n"));
            }
            s.push('\n');
        }
        s.push_str(&format!("Question: {}", self.user_query));
        s
    }

    /// Chat messages for an attempt. Deterministic for equal bundles.
    pub fn render(&self, penalized: bool) -> Vec<Message> {
        let mut messages = vec![Message::system(self.system_text(penalized))];
        messages.extend(self.history.iter().cloned());
        messages.push(Message::user(self.user_text()));
        messages
    }

    /// Plain-text form of the first-attempt prompt, for golden files and logs.
    pub fn render_text(&self) -> String {
        render_transcript(&self.render(false))
    }

    pub fn estimated_tokens(&self) -> u32 {
        self.render(true).iter().map(|m| estimate_tokens(&m.content)).sum()
    }
}

pub fn render_transcript(messages: &[Message]) -> String {
    let mut out = String::new();
    for m in messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        out.push_str(&format!("<{role}>\n{}\n</{role}>\n", m.content));
    }
    out
}

/// Prompt for the ungrounded baseline: no passages and no citation duty.
pub fn plain_prompt(query: &str) -> Vec<Message> {
    vec![
        Message::system("You are the admissions assistant of the university. Answer the question."),
        Message::user(format!("Question: {}", query.trim())),
    ]
}

static CITATION: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\[((?:FAQ|DOC)-[0-9]{4})\]").expect("valid pattern"));

/// Ids cited as `[FAQ-NNNN]` or `[DOC-NNNN]`, in first-appearance order.
pub fn extract_citations(answer: &str) -> Vec<UnitId> {
    let mut out = Vec::new();
    for cap in CITATION.captures_iter(answer) {
        let id: UnitId = cap[1].parse().expect("pattern admits only valid ids");
        if !out.contains(&id) {
            out.push(id);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "reason", rename_all = "snake_case")]
pub enum Violation {
    NoCitation,
    UnknownId { ids: Vec<UnitId> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CitationCheck {
    Valid(Vec<UnitId>),
    Violation(Violation),
}

impl CitationCheck {
    pub fn is_valid(&self) -> bool {
        matches!(self, CitationCheck::Valid(_))
    }
}

pub fn enforce_citations(answer: &str, allowed: &BTreeSet<UnitId>) -> CitationCheck {
    let cited = extract_citations(answer);
    if cited.is_empty() {
        return CitationCheck::Violation(Violation::NoCitation);
    }
    let unknown: Vec<UnitId> = cited.iter().filter(|id| !allowed.contains(id)).copied().collect();
    if unknown.is_empty() {
        CitationCheck::Valid(cited)
    } else {
        CitationCheck::Violation(Violation::UnknownId { ids: unknown })
    }
}

/// `ceil(chars / 4)`.
pub fn estimate_tokens(text: &str) -> u32 {
    text.chars().count().div_ceil(4) as u32
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCount {
    pub count: u32,
    pub estimated: bool,
}

/// Provider-reported usage wins; otherwise the character estimate.
pub fn count_tokens(text: &str, reported: Option<u32>) -> TokenCount {
    match reported {
        Some(count) => TokenCount { count, estimated: false },
        None => TokenCount { count: estimate_tokens(text), estimated: true },
    }
}

pub fn refusal_text(contact: &str) -> String {
    format!(
        "Xin lỗi, tôi chưa tìm thấy thông tin này trong nguồn dữ liệu tuyển sinh. Vui lòng liên hệ phòng tuyển sinh: {contact}.\n\
         I don't know, please contact the admissions office: {contact}."
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub params: GenerationParams,
    pub max_retries: u32,
    /// Transport retries per attempt.
    pub transport_retries: u32,
    pub context_limit: u32,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        Self { params: GenerationParams::default(), max_retries: 2, transport_retries: 2, context_limit: 8192 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub params: GenerationParams,
    pub text: String,
    pub violation: Option<Violation>,
    pub input_tokens: u32,
    pub output_tokens: u32,
    pub first_token_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub text: String,
    pub citations: Vec<UnitId>,
    pub attempts: u32,
    pub input_tokens: u32,
    pub output_tokens: u32,
    /// True when any count fell back to the character estimate.
    pub tokens_estimated: bool,
    /// Time to the first token of the delivered attempt, counted from the
    /// start of generation.
    pub first_token_ms: f64,
    pub total_ms: f64,
    pub refused: bool,
    pub attempt_log: Vec<AttemptRecord>,
}

impl GenerationResult {
    /// A refusal that never reached the provider.
    pub fn refusal(contact: &str) -> Self {
        let text = refusal_text(contact);
        Self {
            output_tokens: 0,
            text,
            citations: Vec::new(),
            attempts: 0,
            input_tokens: 0,
            tokens_estimated: false,
            first_token_ms: 0.0,
            total_ms: 0.0,
            refused: true,
            attempt_log: Vec::new(),
        }
    }
}

fn chat_with_retry(
    provider: &dyn LlmProvider,
    messages: &[Message],
    params: &GenerationParams,
    transport_retries: u32,
) -> Result<Completion, GenerateError> {
    let mut tries = 0;
    loop {
        tries += 1;
        match provider.chat(messages, params, &mut |_| {}) {
            Ok(c) => return Ok(c),
            Err(e) if e.is_retryable() && tries <= transport_retries => continue,
            Err(source) => return Err(GenerateError::Provider { attempts: tries, source }),
        }
    }
}

/// Runs the generate, check, regenerate loop.
///
/// Attempt one uses `bundle.params`; each retry uses penalized decoding and
/// the citation reminder. After `1 + max_retries` violations the localized
/// refusal is returned with `refused = true`. The delivered text is streamed
/// into `sink` once it has passed the guard.
pub fn generate_answer(
    bundle: &PromptBundle,
    provider: &dyn LlmProvider,
    cfg: &GenerateConfig,
    contact: &str,
    sink: &mut dyn FnMut(&str),
) -> Result<GenerationResult, GenerateError> {
    let tokens = bundle.estimated_tokens();
    if tokens > cfg.context_limit {
        return Err(GenerateError::PromptTooLong { tokens, limit: cfg.context_limit });
    }
    let allowed = bundle.passage_ids();
    let mut log = Vec::new();
    let mut elapsed = 0.0;
    let mut estimated = false;
    for attempt in 0..=cfg.max_retries {
        let penalized = attempt > 0;
        let params = if penalized { bundle.params.penalized() } else { bundle.params };
        let messages = bundle.render(penalized);
        let c = chat_with_retry(provider, &messages, &params, cfg.transport_retries)?;
        let prompt: String = messages.iter().map(|m| m.content.as_str()).collect();
        let input = count_tokens(&prompt, c.usage.input_tokens);
        let output = count_tokens(&c.text, c.usage.output_tokens);
        estimated |= input.estimated || output.estimated;
        let check = enforce_citations(&c.text, &allowed);
        let first_token_ms = elapsed + c.first_token_ms;
        elapsed += c.total_ms;
        log.push(AttemptRecord {
            params,
            text: c.text.clone(),
            violation: match &check {
                CitationCheck::Valid(_) => None,
                CitationCheck::Violation(v) => Some(v.clone()),
            },
            input_tokens: input.count,
            output_tokens: output.count,
            first_token_ms: c.first_token_ms,
            total_ms: c.total_ms,
        });
        if let CitationCheck::Valid(citations) = check {
            for piece in stream_pieces(&c.text) {
                sink(piece);
            }
            return Ok(finish(log, c.text, citations, false, first_token_ms, elapsed, estimated));
        }
    }
    let text = refusal_text(contact);
    for piece in stream_pieces(&text) {
        sink(piece);
    }
    Ok(finish(log, text, Vec::new(), true, elapsed, elapsed, estimated))
}

fn finish(
    log: Vec<AttemptRecord>,
    text: String,
    citations: Vec<UnitId>,
    refused: bool,
    first_token_ms: f64,
    total_ms: f64,
    tokens_estimated: bool,
) -> GenerationResult {
    GenerationResult {
        attempts: log.len() as u32,
        input_tokens: log.iter().map(|a| a.input_tokens).sum(),
        output_tokens: log.iter().map(|a| a.output_tokens).sum(),
        attempt_log: log,
        text,
        citations,
        tokens_estimated,
        first_token_ms,
        total_ms,
        refused,
    }
}

/// Ungrounded single call used by the LLM-only baseline. No guard runs.
pub fn generate_plain(
    query: &str,
    provider: &dyn LlmProvider,
    cfg: &GenerateConfig,
    sink: &mut dyn FnMut(&str),
) -> Result<GenerationResult, GenerateError> {
    let messages = plain_prompt(query);
    let c = chat_with_retry(provider, &messages, &cfg.params, cfg.transport_retries)?;
    for piece in stream_pieces(&c.text) {
        sink(piece);
    }
    let prompt: String = messages.iter().map(|m| m.content.as_str()).collect();
    let input = count_tokens(&prompt, c.usage.input_tokens);
    let output = count_tokens(&c.text, c.usage.output_tokens);
    let record = AttemptRecord {
        params: cfg.params,
        text: c.text.clone(),
        violation: None,
        input_tokens: input.count,
        output_tokens: output.count,
        first_token_ms: c.first_token_ms,
        total_ms: c.total_ms,
    };
    let citations = extract_citations(&c.text);
    Ok(finish(vec![record], c.text, citations, false, c.first_token_ms, c.total_ms, input.estimated || output.estimated))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn passage(id: &str, text: &str, rank: usize) -> RankedPassage {
        RankedPassage { id: id.parse().unwrap(), text: text.into(), relevance: 0.5, rank }
    }

    fn bundle() -> PromptBundle {
        let ps = [passage("DOC-0017", "Tuition is 54M VND per year.", 1), passage("FAQ-0002", "Fees are paid per term.", 2)];
        assemble_prompt(&ps, "how much is tuition?", PromptExtras::default(), GenerationParams::default()).unwrap()
    }

    fn allowed(ids: &[&str]) -> BTreeSet<UnitId> {
        ids.iter().map(|s| s.parse().unwrap()).collect()
    }

    #[test]
    fn prompt_lists_every_passage_id() {
        let text = bundle().render_text();
        assert!(text.contains("[DOC-0017] Tuition"));
        assert!(text.contains("[FAQ-0002] Fees"));
        assert_eq!(text, bundle().render_text());
    }

    #[test]
    fn zero_passages_short_circuit() {
        let r = assemble_prompt(&[], "q", PromptExtras::default(), GenerationParams::default());
        assert_eq!(r.unwrap_err(), GenerateError::NoPassages);
    }

    #[test]
    fn citation_guard_cases() {
        let a = allowed(&["DOC-0017"]);
        assert!(enforce_citations("Tuition is 54M VND [DOC-0017].", &a).is_valid());
        assert_eq!(enforce_citations("Tuition is 54M VND.", &a), CitationCheck::Violation(Violation::NoCitation));
        assert!(matches!(
            enforce_citations("Tuition [DOC-0017] [DOC-0099]", &a),
            CitationCheck::Violation(Violation::UnknownId { ids }) if ids == vec!["DOC-0099".parse().unwrap()]
        ));
        // malformed ids do not count as citations
        assert!(!enforce_citations("see [DOC-17]", &a).is_valid());
    }

    #[test]
    fn token_counting() {
        assert_eq!(count_tokens("anything", Some(120)), TokenCount { count: 120, estimated: false });
        assert_eq!(count_tokens("aaaa", None), TokenCount { count: 1, estimated: true });
        assert_eq!(count_tokens("", None).count, 0);
        assert_eq!(count_tokens("aaaaa", None).count, 2);
    }

    #[test]
    fn retry_then_valid() {
        let p = ScriptedProvider::replies(["Tuition is 54M VND.", "Tuition is 54M VND [DOC-0017]."]);
        let mut streamed = String::new();
        let r = generate_answer(&bundle(), &p, &GenerateConfig::default(), "x", &mut |t| streamed.push_str(t)).unwrap();
        assert_eq!(r.attempts, 2);
        assert!(!r.refused);
        assert_eq!(streamed, "Tuition is 54M VND [DOC-0017].");
        assert_eq!(r.attempt_log[1].params, GenerationParams::PENALIZED);
        let second = &p.requests()[1];
        assert!(second[0].content.contains(CITE_REMINDER));
        assert!(!p.requests()[0][0].content.contains(CITE_REMINDER));
        assert!(r.total_ms >= r.first_token_ms);
    }

    #[test]
    fn three_violations_refuse() {
        let p = ScriptedProvider::replies(["a", "b", "c [DOC-0099]"]);
        let r = generate_answer(&bundle(), &p, &GenerateConfig::default(), "0243 552 6713", &mut |_| {}).unwrap();
        assert!(r.refused);
        assert_eq!(r.attempts, 3);
        assert!(r.citations.is_empty());
        assert!(r.text.contains("0243 552 6713"));
    }

    #[test]
    fn transport_errors_retry_then_surface() {
        let steps = vec![ScriptStep::Error { error: "reset".into() }, ScriptStep::Reply("ok [DOC-0017]".into())];
        let r = generate_answer(&bundle(), &ScriptedProvider::new(steps), &GenerateConfig::default(), "x", &mut |_| {});
        assert_eq!(r.unwrap().attempts, 1);

        let steps = vec![ScriptStep::Error { error: "down".into() }; 3];
        let err = generate_answer(&bundle(), &ScriptedProvider::new(steps), &GenerateConfig::default(), "x", &mut |_| {})
            .unwrap_err();
        assert!(err.is_retryable());
        assert!(matches!(err, GenerateError::Provider { attempts: 3, .. }));
    }

    #[test]
    fn params_validation() {
        assert!(GenerationParams::default().validate().is_ok());
        assert!(GenerationParams { top_p: 0.0, ..Default::default() }.validate().is_err());
        assert!(GenerationParams { temperature: 2.5, ..Default::default() }.validate().is_err());
    }
}
