//! Offline comparison of pipeline configurations on labelled questions.
//!
//! Judging is automatic: an answer is grounded when it cites a gold unit and
//! correct when it is grounded and mentions every key fact. Reported response
//! time is the provider-reported generation time, so a run against a mock is
//! byte-for-byte reproducible; wall-clock timings go to a separate file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Intent, QueryType};
use crate::engine::{AgentOutcome, Engine, OutcomeKind, PipelineMode, TurnContext};
use crate::ids::UnitId;
use crate::index::IndexSet;
use crate::ingest::{fold_diacritics, parse_jsonl};
use crate::session::UserProfile;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no evaluation items")]
    NoItems,
    #[error("no configurations to run")]
    NoConfigs,
    #[error("no judgments to aggregate")]
    NoJudgments,
    #[error("duplicate item id {0}")]
    DuplicateItem(String),
    #[error("item {item}: gold unit {unit:?} is not in the corpus")]
    UnknownGold { item: String, unit: String },
    #[error("items: {0}")]
    Parse(String),
    #[error("report: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalItem {
    pub id: String,
    pub question: String,
    pub gold_answer: String,
    /// Unit ids, or document ids standing for all of that document's chunks.
    pub gold_unit_ids: Vec<String>,
    #[serde(default)]
    pub key_facts: Vec<String>,
    pub query_type: QueryType,
    pub intent: Intent,
    /// What earlier turns established, for multi-turn items.
    #[serde(default)]
    pub profile: Option<UserProfile>,
}

pub fn parse_items(text: &str) -> Result<Vec<EvalItem>, EvalError> {
    let items: Vec<EvalItem> = parse_jsonl(text.as_bytes(), "items").map_err(|e| EvalError::Parse(e.to_string()))?;
    let mut seen = BTreeSet::new();
    for it in &items {
        if !seen.insert(it.id.clone()) {
            return Err(EvalError::DuplicateItem(it.id.clone()));
        }
    }
    Ok(items)
}

pub fn read_items(path: &Path) -> Result<Vec<EvalItem>, EvalError> {
    parse_items(&std::fs::read_to_string(path)?)
}

/// Expands gold references into unit ids present in `index`.
pub fn resolve_gold(item: &EvalItem, index: &IndexSet) -> Result<BTreeSet<UnitId>, EvalError> {
    let mut out = BTreeSet::new();
    for g in &item.gold_unit_ids {
        let unknown = || EvalError::UnknownGold { item: item.id.clone(), unit: g.clone() };
        match g.parse::<UnitId>() {
            Ok(id) if index.contains(id) => {
                out.insert(id);
            }
            Ok(_) => return Err(unknown()),
            Err(_) => {
                let chunks = index.chunks_of(g);
                if chunks.is_empty() {
                    return Err(unknown());
                }
                out.extend(chunks);
            }
        }
    }
    Ok(out)
}

/// The parts of an answer the judge looks at.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnswerView {
    pub text: String,
    pub citations: Vec<UnitId>,
    pub refused: bool,
    /// Units the pipeline put in front of the model.
    pub retrieved: Vec<UnitId>,
}

impl AnswerView {
    pub fn of(o: &AgentOutcome) -> Self {
        let mut retrieved: Vec<UnitId> = o.evidence.passages.iter().map(|p| p.id).collect();
        retrieved.extend(o.evidence.faq_match.as_ref().map(|m| m.id));
        Self { text: o.text.clone(), citations: o.citations.clone(), refused: o.kind != OutcomeKind::Answer, retrieved }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Judgment {
    pub relevant_retrieved: bool,
    pub grounded: bool,
    pub hallucinated: bool,
    pub correct: bool,
    pub refused: bool,
}

/// All key facts appear in the answer, ignoring case and diacritics.
pub fn key_facts_present(answer: &str, facts: &[String]) -> bool {
    let hay = fold_diacritics(answer);
    facts.iter().all(|f| hay.contains(&fold_diacritics(f)))
}

pub fn judge_answer(
    answer: &AnswerView,
    gold: &BTreeSet<UnitId>,
    key_facts: &[String],
    in_corpus: impl Fn(UnitId) -> bool,
) -> Judgment {
    let grounded = answer.citations.iter().any(|c| gold.contains(c));
    let hallucinated = !answer.refused
        && (answer.citations.is_empty() || !answer.citations.iter().all(|c| in_corpus(*c)) || !grounded);
    Judgment {
        relevant_retrieved: answer.retrieved.iter().any(|r| gold.contains(r)),
        grounded,
        hallucinated,
        correct: !answer.refused && grounded && key_facts_present(&answer.text, key_facts),
        refused: answer.refused,
    }
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub total: usize,
    pub attempted: usize,
    pub correct: usize,
    pub hallucinated: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mean_response_s: f64,
    pub hallucination_rate: f64,
}

/// Aggregates judgments with their response times in milliseconds.
pub fn compute_metrics(judgments: &[(Judgment, f64)]) -> Result<MetricsRow, EvalError> {
    if judgments.is_empty() {
        return Err(EvalError::NoJudgments);
    }
    let total = judgments.len();
    let attempted = judgments.iter().filter(|(j, _)| !j.refused).count();
    let correct = judgments.iter().filter(|(j, _)| j.correct).count();
    let hallucinated = judgments.iter().filter(|(j, _)| j.hallucinated).count();
    let precision = if attempted == 0 { 0.0 } else { correct as f64 / attempted as f64 };
    let recall = correct as f64 / total as f64;
    let mean_ms = judgments.iter().map(|(_, ms)| ms).sum::<f64>() / total as f64;
    Ok(MetricsRow {
        total,
        attempted,
        correct,
        hallucinated,
        precision,
        recall,
        f1: f1(precision, recall),
        mean_response_s: mean_ms / 1000.0,
        hallucination_rate: hallucinated as f64 / total as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemResult {
    pub item_id: String,
    pub mode: PipelineMode,
    pub intent: Intent,
    pub predicted_intent: Intent,
    pub query_type: QueryType,
    pub predicted_query_type: QueryType,
    pub kind: OutcomeKind,
    pub citations: Vec<UnitId>,
    pub judgment: Judgment,
    pub attempts: u32,
    pub response_ms: f64,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub item_id: String,
    pub mode: PipelineMode,
    pub error: String,
    pub retryable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingAccuracy {
    pub intent: f64,
    pub query_type: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub model: String,
    pub items: usize,
    pub configs: Vec<PipelineMode>,
    pub metrics: BTreeMap<PipelineMode, MetricsRow>,
    pub routing: RoutingAccuracy,
    pub results: Vec<ItemResult>,
    pub failures: Vec<Failure>,
}

/// Wall-clock measurements, kept out of the reproducible report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub item_id: String,
    pub mode: PipelineMode,
    pub retrieval_ms: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalOptions {
    pub seed: u64,
    /// Items evaluated concurrently. Use 1 with stateful scripted providers.
    pub workers: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { seed: 7, workers: 4 }
    }
}

/// Runs every item through every configuration.
pub fn run_eval(
    items: &[EvalItem],
    configs: &[PipelineMode],
    engine: &Engine,
    opts: EvalOptions,
) -> Result<(EvalReport, Vec<Timing>), EvalError> {
    if items.is_empty() {
        return Err(EvalError::NoItems);
    }
    if configs.is_empty() {
        return Err(EvalError::NoConfigs);
    }
    let index = engine.index();
    let gold: BTreeMap<&str, BTreeSet<UnitId>> =
        items.iter().map(|it| Ok((it.id.as_str(), resolve_gold(it, index)?))).collect::<Result<_, EvalError>>()?;

    // a seeded order exercises order independence without changing results
    let mut jobs: Vec<(&EvalItem, PipelineMode)> =
        configs.iter().flat_map(|m| items.iter().map(move |it| (it, *m))).collect();
    jobs.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));

    fn run_one<'a>(engine: &Engine, item: &'a EvalItem, mode: PipelineMode) -> (&'a EvalItem, PipelineMode, Result<AgentOutcome, crate::engine::EngineError>, f64) {
        let ctx = TurnContext { profile: item.profile.clone().unwrap_or_default(), history: Vec::new() };
        let started = Instant::now();
        let outcome = engine.answer(&item.question, &ctx, mode, &mut |_| {});
        let wall_ms = started.elapsed().as_secs_f64() * 1e3;
        (item, mode, outcome, wall_ms)
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(opts.workers.max(1)).build().expect("thread pool");
    let runs: Vec<_> = pool.install(|| jobs.into_par_iter().map(|(it, m)| run_one(engine, it, m)).collect());

    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut timings = Vec::new();
    for (item, mode, outcome, wall_ms) in runs {
        match outcome {
            Ok(o) => {
                let view = AnswerView::of(&o);
                let judgment = judge_answer(&view, &gold[item.id.as_str()], &item.key_facts, |id| index.contains(id));
                timings.push(Timing { item_id: item.id.clone(), mode, retrieval_ms: o.retrieval_ms, wall_ms });
                results.push(ItemResult {
                    item_id: item.id.clone(),
                    mode,
                    intent: item.intent,
                    predicted_intent: o.classification.intent,
                    query_type: item.query_type,
                    predicted_query_type: o.classification.query_type,
                    kind: o.kind,
                    citations: o.citations.clone(),
                    judgment,
                    attempts: o.generation.as_ref().map_or(0, |g| g.attempts),
                    response_ms: o.generation.as_ref().map_or(0.0, |g| g.total_ms),
                    answer: o.text,
                });
            }
            Err(e) => failures.push(Failure {
                item_id: item.id.clone(),
                mode,
                error: e.to_string(),
                retryable: e.is_retryable(),
            }),
        }
    }
    results.sort_by(|a, b| a.mode.cmp(&b.mode).then_with(|| a.item_id.cmp(&b.item_id)));
    failures.sort_by(|a, b| a.mode.cmp(&b.mode).then_with(|| a.item_id.cmp(&b.item_id)));
    timings.sort_by(|a, b| a.mode.cmp(&b.mode).then_with(|| a.item_id.cmp(&b.item_id)));

    let mut metrics = BTreeMap::new();
    for mode in configs {
        let js: Vec<(Judgment, f64)> =
            results.iter().filter(|r| r.mode == *mode).map(|r| (r.judgment, r.response_ms)).collect();
        if !js.is_empty() {
            metrics.insert(*mode, compute_metrics(&js)?);
        }
    }
    let routing = routing_accuracy(items, engine);
    let report = EvalReport {
        seed: opts.seed,
        model: engine.provider().model().to_string(),
        items: items.len(),
        configs: configs.to_vec(),
        metrics,
        routing,
        results,
        failures,
    };
    Ok((report, timings))
}

/// Share of items whose predicted intent and query type match the labels.
pub fn routing_accuracy(items: &[EvalItem], engine: &Engine) -> RoutingAccuracy {
    let mut intent = 0;
    let mut qtype = 0;
    for it in items {
        let (c, _) = engine.classify(&it.question, &it.profile.clone().unwrap_or_default());
        intent += usize::from(c.intent == it.intent);
        qtype += usize::from(c.query_type == it.query_type);
    }
    let n = items.len().max(1) as f64;
    RoutingAccuracy { intent: intent as f64 / n, query_type: qtype as f64 / n }
}

impl EvalReport {
    /// Metrics as rows and configurations as columns.
    pub fn to_table(&self) -> String {
        let cols: Vec<PipelineMode> = self.configs.iter().copied().filter(|m| self.metrics.contains_key(m)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<20}", "Metric");
        for c in &cols {
            let _ = write!(out, "{:>12}", c.as_str());
        }
        out.push('\n');
        type Getter = fn(&MetricsRow) -> f64;
        let rows: [(&str, Getter, usize); 5] = [
            ("Precision", |m| m.precision, 3),
            ("Recall", |m| m.recall, 3),
            ("F1-Score", |m| m.f1, 3),
            ("Response Time (s)", |m| m.mean_response_s, 2),
            ("Hallucination Rate", |m| m.hallucination_rate, 3),
        ];
        for (label, get, digits) in rows {
            let _ = write!(out, "{:<20}", label);
            for c in &cols {
                let _ = write!(out, "{:>12.*}", digits, get(&self.metrics[c]));
            }
            out.push('\n');
        }
        let _ = writeln!(out, "\nitems {}  seed {}  model {}", self.items, self.seed, self.model);
        let _ = writeln!(out, "routing accuracy: intent {:.3}  query type {:.3}", self.routing.intent, self.routing.query_type);
        if !self.failures.is_empty() {
            let _ = writeln!(out, "failures: {}", self.failures.len());
            for f in &self.failures {
                let _ = writeln!(out, "  {} {} {}", f.mode, f.item_id, f.error);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Writes `report.txt`, `report.json` and the `timings.json` sidecar.
    pub fn write(&self, timings: &[Timing], dir: &Path) -> Result<(), EvalError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.txt"), self.to_table())?;
        std::fs::write(dir.join("report.json"), self.to_json())?;
        let t = serde_json::to_string_pretty(timings).expect("timings serialize");
        std::fs::write(dir.join("timings.json"), t + "\n")?;
        Ok(())
    }
}
