//! Interaction records, rater verdicts, daily rollups and cost estimates.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::Mutex;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{Intent, QueryType};
use crate::ids::UnitId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Correct,
    Incorrect,
    #[default]
    Unrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub record_id: String,
    pub session_id: String,
    pub turn_index: usize,
    pub timestamp: DateTime<Utc>,
    pub question: String,
    pub answer: String,
    pub agent: Intent,
    pub query_type: QueryType,
    pub citations: Vec<UnitId>,
    pub refused: bool,
    pub model: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub first_token_ms: f64,
    pub total_ms: f64,
    #[serde(default)]
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rater: Option<String>,
}

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("unknown record {0}")]
    UnknownRecord(String),
    #[error("a rated record cannot return to unrated")]
    InvalidTransition,
    #[error("duplicate record {0}")]
    Duplicate(String),
    #[error("no price for model {0:?}")]
    MissingPrice(String),
    #[error("negative price for model {0:?}")]
    NegativePrice(String),
    #[error("record log: {0}")]
    Io(#[from] std::io::Error),
    #[error("record log {path} line {line}: {message}")]
    Corrupt { path: PathBuf, line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine {
    Record(InteractionRecord),
    Verdict { record_id: String, verdict: Verdict, rater: Option<String>, at: DateTime<Utc> },
}

/// Append-only record log. Verdicts are appended as their own lines and
/// folded into the records on load.
pub struct RecordLog {
    path: Option<PathBuf>,
    inner: Mutex<Vec<InteractionRecord>>,
}

impl RecordLog {
    pub fn in_memory() -> Self {
        Self { path: None, inner: Mutex::default() }
    }

    /// Opens or creates the log at `path`, replaying existing lines.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, TelemetryError> {
        let path = path.into();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut records: Vec<InteractionRecord> = Vec::new();
        if path.exists() {
            for (n, line) in BufReader::new(File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let corrupt = |message: String| TelemetryError::Corrupt { path: path.clone(), line: n + 1, message };
                match serde_json::from_str::<LogLine>(&line).map_err(|e| corrupt(e.to_string()))? {
                    LogLine::Record(r) => records.push(r),
                    LogLine::Verdict { record_id, verdict, rater, .. } => {
                        let r = records
                            .iter_mut()
                            .find(|r| r.record_id == record_id)
                            .ok_or_else(|| corrupt(format!("verdict for unknown record {record_id}")))?;
                        r.verdict = verdict;
                        r.rater = rater;
                    }
                }
            }
        }
        Ok(Self { path: Some(path), inner: Mutex::new(records) })
    }

    fn write(&self, line: &LogLine) -> Result<(), TelemetryError> {
        if let Some(path) = &self.path {
            let mut text = serde_json::to_string(line).expect("log lines serialize");
            text.push('\n');
            OpenOptions::new().create(true).append(true).open(path)?.write_all(text.as_bytes())?;
        }
        Ok(())
    }

    /// Persists a record before it is visible to readers.
    pub fn append(&self, record: InteractionRecord) -> Result<(), TelemetryError> {
        let mut inner = self.inner.lock().expect("record log poisoned");
        if inner.iter().any(|r| r.record_id == record.record_id) {
            return Err(TelemetryError::Duplicate(record.record_id));
        }
        self.write(&LogLine::Record(record.clone()))?;
        inner.push(record);
        Ok(())
    }

    pub fn set_verdict(
        &self,
        record_id: &str,
        verdict: Verdict,
        rater: Option<String>,
        at: DateTime<Utc>,
    ) -> Result<InteractionRecord, TelemetryError> {
        let mut inner = self.inner.lock().expect("record log poisoned");
        let r = inner
            .iter_mut()
            .find(|r| r.record_id == record_id)
            .ok_or_else(|| TelemetryError::UnknownRecord(record_id.into()))?;
        if verdict == Verdict::Unrated && r.verdict != Verdict::Unrated {
            return Err(TelemetryError::InvalidTransition);
        }
        let line = LogLine::Verdict { record_id: record_id.into(), verdict, rater: rater.clone(), at };
        self.write(&line)?;
        r.verdict = verdict;
        r.rater = rater;
        Ok(r.clone())
    }

    pub fn records(&self) -> Vec<InteractionRecord> {
        self.inner.lock().expect("record log poisoned").clone()
    }

    pub fn get(&self, record_id: &str) -> Option<InteractionRecord> {
        self.inner.lock().expect("record log poisoned").iter().find(|r| r.record_id == record_id).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().expect("record log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailyMetrics {
    pub date: NaiveDate,
    pub questions: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Correct over rated; `None` when nothing that day was rated.
    pub accuracy: Option<f64>,
    pub p50_ms: Option<f64>,
    pub p95_ms: Option<f64>,
}

/// Nearest-rank percentile of an ascending slice.
pub fn nearest_rank(sorted: &[f64], pct: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((pct / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Aggregates the records whose timestamp falls on `date` (UTC).
pub fn daily_rollup(records: &[InteractionRecord], date: NaiveDate) -> DailyMetrics {
    let day: Vec<&InteractionRecord> = records.iter().filter(|r| r.timestamp.date_naive() == date).collect();
    let rated: Vec<&&InteractionRecord> = day.iter().filter(|r| r.verdict != Verdict::Unrated).collect();
    let correct = rated.iter().filter(|r| r.verdict == Verdict::Correct).count();
    let mut latencies: Vec<f64> = day.iter().map(|r| r.total_ms).collect();
    latencies.sort_by(f64::total_cmp);
    DailyMetrics {
        date,
        questions: day.len(),
        input_tokens: day.iter().map(|r| r.input_tokens).sum(),
        output_tokens: day.iter().map(|r| r.output_tokens).sum(),
        accuracy: (!rated.is_empty()).then(|| correct as f64 / rated.len() as f64),
        p50_ms: nearest_rank(&latencies, 50.0),
        p95_ms: nearest_rank(&latencies, 95.0),
    }
}

/// One rollup per day in `[from, to]`.
pub fn daily_range(records: &[InteractionRecord], from: NaiveDate, to: NaiveDate) -> Vec<DailyMetrics> {
    from.iter_days().take_while(|d| *d <= to).map(|d| daily_rollup(records, d)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    /// Currency units per million input tokens.
    pub input: f64,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceSheet(pub BTreeMap<String, ModelPrice>);

impl PriceSheet {
    pub fn with(mut self, model: &str, input: f64, output: f64) -> Self {
        self.0.insert(model.into(), ModelPrice { input, output });
        self
    }

    pub fn price(&self, model: &str) -> Result<ModelPrice, TelemetryError> {
        let p = *self.0.get(model).ok_or_else(|| TelemetryError::MissingPrice(model.into()))?;
        if p.input < 0.0 || p.output < 0.0 {
            return Err(TelemetryError::NegativePrice(model.into()));
        }
        Ok(p)
    }
}

pub fn round_cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Cost of raw token totals at one model's prices, rounded to cents.
pub fn token_cost(input_tokens: u64, output_tokens: u64, price: ModelPrice) -> f64 {
    round_cents(input_tokens as f64 * price.input / 1e6 + output_tokens as f64 * price.output / 1e6)
}

/// Sum of each record priced at its own model, rounded to cents once.
pub fn estimate_cost(records: &[InteractionRecord], prices: &PriceSheet) -> Result<f64, TelemetryError> {
    let mut total = 0.0;
    for r in records {
        let p = prices.price(&r.model)?;
        total += r.input_tokens as f64 * p.input / 1e6 + r.output_tokens as f64 * p.output / 1e6;
    }
    Ok(round_cents(total))
}

/// What the same traffic would cost on `model`.
pub fn estimate_cost_as(records: &[InteractionRecord], prices: &PriceSheet, model: &str) -> Result<f64, TelemetryError> {
    let p = prices.price(model)?;
    let input = records.iter().map(|r| r.input_tokens).sum();
    let output = records.iter().map(|r| r.output_tokens).sum();
    Ok(token_cost(input, output, p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    pub(crate) fn record(id: &str, day: u32, ms: f64, verdict: Verdict) -> InteractionRecord {
        InteractionRecord {
            record_id: id.into(),
            session_id: "s".into(),
            turn_index: 0,
            timestamp: Utc.with_ymd_and_hms(2025, 7, day, 10, 0, 0).unwrap(),
            question: "q".into(),
            answer: "a [DOC-0001]".into(),
            agent: Intent::InfoSearch,
            query_type: QueryType::KeywordLookup,
            citations: vec![UnitId::doc(1).unwrap()],
            refused: false,
            model: "m".into(),
            input_tokens: 100,
            output_tokens: 10,
            first_token_ms: 50.0,
            total_ms: ms,
            verdict,
            rater: None,
        }
    }

    fn d(day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(2025, 7, day).unwrap()
    }

    #[test]
    fn empty_day() {
        let m = daily_rollup(&[], d(1));
        assert_eq!((m.questions, m.accuracy, m.p50_ms), (0, None, None));
    }

    #[test]
    fn accuracy_over_rated() {
        let mut rs: Vec<_> = (0..9).map(|i| record(&i.to_string(), 1, 100.0, Verdict::Correct)).collect();
        rs.push(record("x", 1, 100.0, Verdict::Incorrect));
        rs.push(record("u", 1, 100.0, Verdict::Unrated));
        assert_eq!(daily_rollup(&rs, d(1)).accuracy, Some(0.9));
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 50.0), Some(10.0));
        assert_eq!(nearest_rank(&v, 95.0), Some(19.0));
        assert_eq!(nearest_rank(&[7.0], 95.0), Some(7.0));
    }

    #[test]
    fn three_day_counts() {
        let rs = vec![
            record("a", 1, 1.0, Verdict::Unrated),
            record("b", 1, 1.0, Verdict::Unrated),
            record("c", 2, 1.0, Verdict::Unrated),
            record("d", 3, 1.0, Verdict::Unrated),
            record("e", 3, 1.0, Verdict::Unrated),
            record("f", 3, 1.0, Verdict::Unrated),
        ];
        let counts: Vec<usize> = daily_range(&rs, d(1), d(3)).iter().map(|m| m.questions).collect();
        assert_eq!(counts, vec![2, 1, 3]);
    }

    #[test]
    fn cost_examples() {
        let sheet = PriceSheet::default().with("gpt-4o-mini", 0.15, 0.60);
        let p = sheet.price("gpt-4o-mini").unwrap();
        assert_eq!(token_cost(1_000_000, 0, p), 0.15);
        assert_eq!(token_cost(0, 0, p), 0.0);
        // 1748 in and 60 out per message across 6079 messages
        assert_eq!(token_cost(1748 * 6079, 60 * 6079, p), 1.81);
        assert!(matches!(sheet.price("other"), Err(TelemetryError::MissingPrice(_))));
    }

    #[test]
    fn verdict_transitions_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("records.jsonl");
        let at = Utc.with_ymd_and_hms(2025, 7, 2, 0, 0, 0).unwrap();
        {
            let log = RecordLog::open(&path).unwrap();
            log.append(record("r1", 1, 5.0, Verdict::Unrated)).unwrap();
            assert!(log.append(record("r1", 1, 5.0, Verdict::Unrated)).is_err());
            log.set_verdict("r1", Verdict::Correct, Some("officer".into()), at).unwrap();
            log.set_verdict("r1", Verdict::Incorrect, Some("officer".into()), at).unwrap();
            assert!(matches!(log.set_verdict("r1", Verdict::Unrated, None, at), Err(TelemetryError::InvalidTransition)));
            assert!(matches!(log.set_verdict("nope", Verdict::Correct, None, at), Err(TelemetryError::UnknownRecord(_))));
        }
        let log = RecordLog::open(&path).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.get("r1").unwrap().verdict, Verdict::Incorrect);
    }
}
