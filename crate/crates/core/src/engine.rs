//! The coordinator: one entry point that classifies a message, runs the
//! matching agent and returns the answer with the evidence behind it.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{
    classify_query, compute_admission_score, extract_entities, recommend_programs, AgentError, CutoffTable,
    EligibilityQuery, ExtractedEntities, Intent, IntentClassification, Method, PriorityGroup, Recommendation, Region,
    ScoreBreakdown, ScoreRuleTable, Slot, Verdict,
};
use crate::generate::{
    assemble_prompt, generate_answer, generate_plain, refusal_text, stream_pieces, GenerateConfig, GenerateError,
    GenerationResult, LlmProvider, Message, PromptExtras,
};
use crate::ids::UnitId;
use crate::index::IndexSet;
use crate::ingest::Tokenizer;
use crate::retrieve::{FaqMatch, RankedPassage, RerankScorer, RetrievalMode, RetrieveConfig, RetrieveError, Retriever};
use crate::session::{update_profile, UserProfile};

/// Which stages run. The service always uses `Hybrid`; the other two exist
/// for the evaluation baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    /// The bare model, no retrieval and no citation guard.
    LlmOnly,
    /// Dense retrieval and re-ranking.
    RagRerank,
    /// Dense and keyword retrieval, merged, then re-ranked.
    Hybrid,
}

impl PipelineMode {
    pub const ALL: [PipelineMode; 3] = [PipelineMode::LlmOnly, PipelineMode::RagRerank, PipelineMode::Hybrid];

    pub fn as_str(self) -> &'static str {
        match self {
            PipelineMode::LlmOnly => "llm_only",
            PipelineMode::RagRerank => "rag_rerank",
            PipelineMode::Hybrid => "hybrid",
        }
    }

    fn retrieval(self) -> RetrievalMode {
        match self {
            PipelineMode::Hybrid => RetrievalMode::Hybrid,
            _ => RetrievalMode::Dense,
        }
    }
}

impl fmt::Display for PipelineMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PipelineMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| format!("unknown pipeline {s:?}; expected llm_only, rag_rerank or hybrid"))
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Retrieve(#[from] RetrieveError),
    #[error(transparent)]
    Generate(#[from] GenerateError),
}

impl EngineError {
    /// Worth retrying later: the model or embedding endpoint was unreachable.
    pub fn is_retryable(&self) -> bool {
        match self {
            EngineError::Generate(e) => e.is_retryable(),
            EngineError::Retrieve(RetrieveError::Embed(_)) => true,
            EngineError::Retrieve(_) => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub retrieve: RetrieveConfig,
    pub generate: GenerateConfig,
    pub context_budget: usize,
    /// Shown in refusals.
    pub contact: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            retrieve: RetrieveConfig::default(),
            generate: GenerateConfig::default(),
            context_budget: crate::session::DEFAULT_CONTEXT_BUDGET,
            contact: "hotline 0243 552 6713, tuyensinh@utt.example.vn".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    Answer,
    Refusal,
    Clarification,
}

/// What an agent looked at to produce its answer.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Evidence {
    pub faq_match: Option<FaqMatch>,
    pub passages: Vec<RankedPassage>,
    pub breakdowns: Vec<ScoreBreakdown>,
    pub recommendations: Vec<Recommendation>,
    /// The re-ranker failed on every candidate and retrieval scores were used.
    pub rerank_degraded: bool,
    /// Slots the user must supply, for clarifications.
    pub missing: Vec<Slot>,
    /// Defaults the agent assumed, e.g. region KV3.
    pub assumptions: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentOutcome {
    pub agent: Intent,
    pub classification: IntentClassification,
    pub entities: ExtractedEntities,
    /// The profile after this message.
    pub profile: UserProfile,
    pub kind: OutcomeKind,
    pub text: String,
    pub citations: Vec<UnitId>,
    /// `None` when no model call was made.
    pub generation: Option<GenerationResult>,
    pub evidence: Evidence,
    pub retrieval_ms: f64,
}

impl AgentOutcome {
    pub fn input_tokens(&self) -> u32 {
        self.generation.as_ref().map_or(0, |g| g.input_tokens)
    }

    pub fn output_tokens(&self) -> u32 {
        self.generation.as_ref().map_or(0, |g| g.output_tokens)
    }

    pub fn is_refusal(&self) -> bool {
        self.kind != OutcomeKind::Answer
    }
}

/// Prior conversation visible to the agents.
#[derive(Debug, Clone, Default)]
pub struct TurnContext {
    pub profile: UserProfile,
    pub history: Vec<Message>,
}

pub const CUTOFF_DISCLAIMER: &str = "Lưu ý: điểm chuẩn các năm trước chỉ mang tính tham khảo. \
Note: prior-year cut-offs are indicative only and change every year.";

const HEDGED_TONE: &str = "The question asks for an opinion. Do not give a verdict; present the relevant facts \
from the passages and suggest the applicant weigh them against their own interests.";

const RELAY_FACTS: &str = "The computed facts in the user message are authoritative; restate them exactly.";

/// Immutable once built; clone it freely and swap the index with
/// [`Engine::with_index`].
#[derive(Clone)]
pub struct Engine {
    retriever: Retriever,
    scorer: Arc<dyn RerankScorer>,
    provider: Arc<dyn LlmProvider>,
    rules: Arc<ScoreRuleTable>,
    cutoffs: Arc<CutoffTable>,
    cfg: EngineConfig,
}

struct Run<'a> {
    q: &'a str,
    ctx: &'a TurnContext,
    mode: PipelineMode,
    entities: ExtractedEntities,
    classification: IntentClassification,
    profile: UserProfile,
    evidence: Evidence,
    retrieval_ms: f64,
}

impl Engine {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        index: Arc<IndexSet>,
        embedder: Arc<dyn crate::index::EmbeddingProvider>,
        tokenizer: Arc<dyn Tokenizer>,
        scorer: Arc<dyn RerankScorer>,
        provider: Arc<dyn LlmProvider>,
        rules: Arc<ScoreRuleTable>,
        cutoffs: Arc<CutoffTable>,
        cfg: EngineConfig,
    ) -> Self {
        let retriever = Retriever::new(index, embedder, tokenizer, cfg.retrieve.clone());
        Self { retriever, scorer, provider, rules, cutoffs, cfg }
    }

    pub fn with_index(&self, index: Arc<IndexSet>) -> Self {
        let scorer = self.scorer.rebind(&index).unwrap_or_else(|| self.scorer.clone());
        Self { retriever: self.retriever.with_index(index), scorer, ..self.clone() }
    }

    pub fn with_provider(&self, provider: Arc<dyn LlmProvider>) -> Self {
        Self { provider, ..self.clone() }
    }

    pub fn index(&self) -> &Arc<IndexSet> {
        self.retriever.index()
    }

    pub fn retriever(&self) -> &Retriever {
        &self.retriever
    }

    pub fn scorer(&self) -> &Arc<dyn RerankScorer> {
        &self.scorer
    }

    pub fn provider(&self) -> &Arc<dyn LlmProvider> {
        &self.provider
    }

    pub fn rules(&self) -> &ScoreRuleTable {
        &self.rules
    }

    pub fn cutoffs(&self) -> &CutoffTable {
        &self.cutoffs
    }

    pub fn config(&self) -> &EngineConfig {
        &self.cfg
    }

    /// Classification alone, without running an agent.
    pub fn classify(&self, q: &str, profile: &UserProfile) -> (IntentClassification, ExtractedEntities) {
        let e = extract_entities(q, profile, &self.rules, &self.cutoffs);
        (classify_query(q, &e), e)
    }

    /// Answers one message. Validated answer text is streamed into `sink`.
    pub fn answer(
        &self,
        q: &str,
        ctx: &TurnContext,
        mode: PipelineMode,
        sink: &mut dyn FnMut(&str),
    ) -> Result<AgentOutcome, EngineError> {
        let (classification, entities) = self.classify(q, &ctx.profile);
        let profile = update_profile(&ctx.profile, &entities, &self.rules);
        let mut run = Run {
            q,
            ctx,
            mode,
            entities,
            classification,
            profile,
            evidence: Evidence::default(),
            retrieval_ms: 0.0,
        };
        if mode == PipelineMode::LlmOnly {
            let g = generate_plain(q, self.provider.as_ref(), &self.cfg.generate, sink)?;
            return Ok(self.finish(run, OutcomeKind::Answer, g.text.clone(), Some(g)));
        }
        if !run.entities.conflicts.is_empty() && run.classification.intent != Intent::InfoSearch {
            let slots = run.entities.conflicts.clone();
            return Ok(self.clarify(run, AgentError::Ambiguous(slots), sink));
        }
        match run.classification.intent {
            Intent::InfoSearch => self.info_search(&mut run, sink),
            Intent::ScoreCalc => self.score_calc(&mut run, sink),
            Intent::Recommend => self.recommend(&mut run, sink),
            Intent::General => self.general(&mut run, sink),
        }
        .map(|(kind, text, g)| self.finish(run, kind, text, g))
    }

    fn finish(&self, run: Run<'_>, kind: OutcomeKind, text: String, generation: Option<GenerationResult>) -> AgentOutcome {
        let citations = match kind {
            OutcomeKind::Answer => match (&generation, &run.evidence.faq_match) {
                (Some(g), _) => g.citations.clone(),
                (None, Some(m)) => vec![m.id],
                (None, None) => Vec::new(),
            },
            _ => Vec::new(),
        };
        let kind = match &generation {
            Some(g) if g.refused => OutcomeKind::Refusal,
            _ => kind,
        };
        AgentOutcome {
            agent: run.classification.intent,
            classification: run.classification,
            entities: run.entities,
            profile: run.profile,
            kind,
            text,
            citations,
            generation,
            evidence: run.evidence,
            retrieval_ms: run.retrieval_ms,
        }
    }

    fn clarify(&self, mut run: Run<'_>, err: AgentError, sink: &mut dyn FnMut(&str)) -> AgentOutcome {
        let text = self.clarify_in(&mut run, err, sink);
        self.finish(run, OutcomeKind::Clarification, text, None)
    }

    fn retrieve(&self, run: &mut Run<'_>, query: &str) -> Result<Vec<RankedPassage>, EngineError> {
        let started = Instant::now();
        let out = self.retriever.retrieve(query, run.mode.retrieval(), self.scorer.as_ref())?;
        run.retrieval_ms += started.elapsed().as_secs_f64() * 1e3;
        run.evidence.rerank_degraded = out.degraded;
        run.evidence.passages = out.passages.clone();
        Ok(out.passages)
    }

    /// Retrieves, then generates under the guard. No passages means refusal.
    fn grounded(
        &self,
        run: &mut Run<'_>,
        retrieval_query: &str,
        user_query: &str,
        facts: Vec<String>,
        guidance: Vec<String>,
        sink: &mut dyn FnMut(&str),
    ) -> Result<(OutcomeKind, String, Option<GenerationResult>), EngineError> {
        let passages = self.retrieve(run, retrieval_query)?;
        if passages.is_empty() {
            let text = refusal_text(&self.cfg.contact);
            emit(&text, sink);
            return Ok((OutcomeKind::Refusal, text, None));
        }
        let extras = PromptExtras {
            profile_summary: run.profile.summary(),
            facts,
            guidance,
            history: run.ctx.history.clone(),
        };
        let bundle = assemble_prompt(&passages, user_query, extras, self.cfg.generate.params)?;
        let g = generate_answer(&bundle, self.provider.as_ref(), &self.cfg.generate, &self.cfg.contact, sink)?;
        let kind = if g.refused { OutcomeKind::Refusal } else { OutcomeKind::Answer };
        Ok((kind, g.text.clone(), Some(g)))
    }

    fn info_search(
        &self,
        run: &mut Run<'_>,
        sink: &mut dyn FnMut(&str),
    ) -> Result<(OutcomeKind, String, Option<GenerationResult>), EngineError> {
        let started = Instant::now();
        let direct = self.retriever.faq_direct_match(run.q)?;
        run.retrieval_ms += started.elapsed().as_secs_f64() * 1e3;
        if let Some(m) = direct {
            let text = format!("{} [{}]", m.answer.trim(), m.id);
            emit(&text, sink);
            run.evidence.faq_match = Some(m);
            return Ok((OutcomeKind::Answer, text, None));
        }
        // a program known only from the profile is spelled out for retrieval
        let query = match (&run.entities.program, run.entities.from_profile(Slot::Program)) {
            (Some(id), true) => match self.cutoffs.program(id) {
                Some(p) => {
                    let local = p.aliases.first().map(String::as_str).unwrap_or_default();
                    format!("{} ({} {} {})", run.q.trim(), local, p.name, p.id)
                }
                None => run.q.to_string(),
            },
            _ => run.q.to_string(),
        };
        self.grounded(run, &query, &query, Vec::new(), Vec::new(), sink)
    }

    fn score_calc(
        &self,
        run: &mut Run<'_>,
        sink: &mut dyn FnMut(&str),
    ) -> Result<(OutcomeKind, String, Option<GenerationResult>), EngineError> {
        let e = run.entities.clone();
        if let Some(v) = e.out_of_range.first() {
            return Ok(clarified(self.clarify_in(run, AgentError::PointsOutOfRange(*v), sink)));
        }
        let Some(region) = e.region else {
            let mut missing = vec![Slot::Region];
            if !e.has_points() && !asks_bonus_only(run.q) {
                missing.insert(0, Slot::Points);
            }
            return Ok(clarified(self.clarify_in(run, AgentError::NeedsClarification(missing), sink)));
        };
        let group = e.priority_group.unwrap_or(PriorityGroup::None);
        if e.priority_group.is_none() {
            run.evidence.assumptions.push("priority group not stated; none assumed".into());
        }
        let mut facts = Vec::new();
        let scores = e.scores();
        if scores.is_empty() {
            if !asks_bonus_only(run.q) {
                return Ok(clarified(self.clarify_in(run, AgentError::NeedsClarification(vec![Slot::Points]), sink)));
            }
            let rb = self.rules.region_bonus(region);
            let gb = self.rules.group_bonus(group);
            facts.push(format!(
                "Priority bonus: region {region} {rb:.2} + priority group {group} {gb:.2} = {:.2} points \
                 (added in full below {:.2} base points, reduced linearly above)",
                rb + gb,
                self.rules.scaling_threshold
            ));
        }
        for (method, base) in scores {
            let b = compute_admission_score(base, region, group, &self.rules).expect("range checked during extraction");
            let label = method.map_or("stated".to_string(), |m| m.as_str().to_string());
            facts.push(format!(
                "Total admission score ({label} points): {:.2} = base {:.2} + bonus {:.2} \
                 (region {region} {:.2} + priority group {group} {:.2}, scaling factor {:.4})",
                b.total, b.base, b.applied_bonus, b.region_bonus, b.group_bonus, b.scaling_factor
            ));
            run.evidence.breakdowns.push(b);
        }
        facts.extend(run.evidence.assumptions.iter().map(|a| format!("Assumption: {a}")));
        let query = format!("{} điểm ưu tiên khu vực đối tượng priority bonus", run.q.trim());
        let q = run.q;
        self.grounded(run, &query, q, facts, vec![RELAY_FACTS.into()], sink)
    }

    fn recommend(
        &self,
        run: &mut Run<'_>,
        sink: &mut dyn FnMut(&str),
    ) -> Result<(OutcomeKind, String, Option<GenerationResult>), EngineError> {
        let e = run.entities.clone();
        if let Some(v) = e.out_of_range.first() {
            return Ok(clarified(self.clarify_in(run, AgentError::PointsOutOfRange(*v), sink)));
        }
        let mut scores = Vec::new();
        for (m, v) in e.scores() {
            match m {
                Some(m) => scores.push((m, v)),
                None => scores.extend([(Method::Exam, v), (Method::Transcript, v)]),
            }
        }
        let region = e.region.unwrap_or_else(|| {
            run.evidence.assumptions.push("region not stated; KV3 (no regional bonus) assumed".into());
            Region::Kv3
        });
        let group = e.priority_group.unwrap_or(PriorityGroup::None);
        let query = EligibilityQuery { scores, region, group, program: e.program.clone(), year: e.year };
        let recs = match recommend_programs(&query, &self.cutoffs, &self.rules) {
            Ok(r) => r,
            Err(AgentError::DataGap(what)) => {
                let text = format!(
                    "Hiện chưa có dữ liệu điểm chuẩn phù hợp ({what}). Vui lòng liên hệ phòng tuyển sinh: {c}.\n\
                     There is no cut-off data for this request ({what}). Please contact the admissions office: {c}.",
                    c = self.cfg.contact
                );
                emit(&text, sink);
                return Ok((OutcomeKind::Refusal, text, None));
            }
            Err(err) => return Ok(clarified(self.clarify_in(run, err, sink))),
        };
        let mut facts: Vec<String> = recs.iter().map(recommendation_line).collect();
        if recs.is_empty() {
            facts.push(format!("No program's {} cut-off is within reach of the stated score", query_year(&self.cutoffs, &e)));
        }
        facts.extend(run.evidence.assumptions.iter().map(|a| format!("Assumption: {a}")));
        // Programme codes are the rarest terms in the cut-off tables, so they
        // steer retrieval towards the rows the facts came from.
        let programs: String = match &e.program {
            Some(id) => self.cutoffs.program(id).map(|p| format!(" {} {}", p.name, p.id)).unwrap_or_default(),
            None => recs.iter().take(3).map(|r| format!(" {}", r.program_id)).collect(),
        };
        let retrieval_query = format!("{}{programs} điểm chuẩn {} cutoff", run.q.trim(), query_year(&self.cutoffs, &e));
        run.evidence.recommendations = recs;
        let q = run.q;
        let (kind, mut text, g) = self.grounded(run, &retrieval_query, q, facts, vec![RELAY_FACTS.into()], sink)?;
        if kind == OutcomeKind::Answer {
            let tail = format!("\n\n{CUTOFF_DISCLAIMER}");
            emit(&tail, sink);
            text.push_str(&tail);
        }
        Ok((kind, text, g))
    }

    fn general(
        &self,
        run: &mut Run<'_>,
        sink: &mut dyn FnMut(&str),
    ) -> Result<(OutcomeKind, String, Option<GenerationResult>), EngineError> {
        let q = run.q;
        self.grounded(run, q, q, Vec::new(), vec![HEDGED_TONE.into()], sink)
    }

    fn clarify_in(&self, run: &mut Run<'_>, err: AgentError, sink: &mut dyn FnMut(&str)) -> String {
        if let AgentError::NeedsClarification(s) | AgentError::Ambiguous(s) = &err {
            run.evidence.missing = s.clone();
        }
        let text = clarification_text(&err);
        emit(&text, sink);
        text
    }
}

fn clarified(text: String) -> (OutcomeKind, String, Option<GenerationResult>) {
    (OutcomeKind::Clarification, text, None)
}

fn emit(text: &str, sink: &mut dyn FnMut(&str)) {
    for piece in stream_pieces(text) {
        sink(piece);
    }
}

fn query_year(table: &CutoffTable, e: &ExtractedEntities) -> i32 {
    e.year.or_else(|| table.latest_year()).unwrap_or_default()
}

/// "How many priority points": the bonus itself is wanted, not a total.
fn asks_bonus_only(q: &str) -> bool {
    let f = crate::ingest::fold_diacritics(q);
    ["uu tien", "priority points", "bonus", "duoc cong"].iter().any(|k| f.contains(k))
}

fn recommendation_line(r: &Recommendation) -> String {
    let verdict = match r.verdict {
        Verdict::Pass => "pass",
        Verdict::Borderline => "borderline",
        Verdict::Fail => "fail",
    };
    format!(
        "{} ({}), {} {} cut-off {:.2}: your score {:.2}, margin {:+.2}, verdict {verdict}",
        r.program_name,
        r.program_id,
        r.year,
        r.method.as_str(),
        r.cutoff,
        r.effective,
        r.margin
    )
}

fn slot_vi(s: Slot) -> &'static str {
    match s {
        Slot::TranscriptPoints => "điểm học bạ",
        Slot::ExamPoints => "điểm thi",
        Slot::Points => "điểm (thi hoặc học bạ)",
        Slot::Region => "khu vực ưu tiên (KV1, KV2-NT, KV2, KV3)",
        Slot::PriorityGroup => "đối tượng ưu tiên",
        Slot::Province => "tỉnh/thành",
        Slot::Program => "ngành",
        Slot::Year => "năm",
    }
}

/// The bilingual question put back to the user.
pub fn clarification_text(err: &AgentError) -> String {
    let list = |slots: &[Slot], f: fn(Slot) -> &'static str| slots.iter().map(|s| f(*s)).collect::<Vec<_>>().join(", ");
    match err {
        AgentError::NeedsClarification(slots) => format!(
            "Bạn vui lòng cho biết thêm: {}.\nPlease tell me your {}.",
            list(slots, slot_vi),
            list(slots, Slot::label)
        ),
        AgentError::Ambiguous(slots) => format!(
            "Tin nhắn có nhiều giá trị khác nhau cho: {}. Bạn muốn dùng giá trị nào?\n\
             Your message gives different values for {}. Which one should I use?",
            list(slots, slot_vi),
            list(slots, Slot::label)
        ),
        AgentError::PointsOutOfRange(v) => format!(
            "Điểm {v} nằm ngoài thang 0 đến 30. Bạn kiểm tra lại giúp mình nhé.\n\
             {v} points is outside the 0 to 30 scale. Could you check the number?"
        ),
        AgentError::UnknownProgram { name, suggestions } => format!(
            "Không tìm thấy ngành \"{name}\". Có phải bạn muốn hỏi: {}?\n\
             I could not find the program \"{name}\". Did you mean: {}?",
            suggestions.join(", "),
            suggestions.join(", ")
        ),
        AgentError::DataGap(what) | AgentError::InvalidTable(what) => format!(
            "Hiện chưa có dữ liệu: {what}.\nThere is no data for this request: {what}."
        ),
    }
}
