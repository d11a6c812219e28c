use std::collections::BTreeMap;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use super::entities::ExtractedEntities;
use super::{Intent, QueryType};
use crate::ingest::{normalize_text, tokenize};

/// Below this the router falls back to the general agent.
pub const MIN_CONFIDENCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentClassification {
    pub intent: Intent,
    pub query_type: QueryType,
    pub confidence: f64,
    /// Raw score per intent before the fallback rule.
    pub scores: BTreeMap<Intent, f64>,
}

/// A list of phrases matched as whole token sequences. Vietnamese phrases
/// keep their diacritics, so "học phí" does not match "hoc phi".
struct Phrases(Vec<Vec<String>>);

impl Phrases {
    fn new(list: &[&str]) -> Self {
        Self(list.iter().map(|p| tokenize(&normalize_text(p))).collect())
    }

    fn any(&self, words: &[String]) -> bool {
        self.0.iter().any(|p| words.windows(p.len()).any(|w| w == p.as_slice()))
    }

    fn leads(&self, words: &[String]) -> bool {
        self.0.iter().any(|p| words.starts_with(p))
    }
}

macro_rules! phrases {
    ($name:ident, [$($p:literal),* $(,)?]) => {
        static $name: LazyLock<Phrases> = LazyLock::new(|| Phrases::new(&[$($p),*]));
    };
}

phrases!(SUBJECTIVE, [
    "nên", "should", "better", "suitable", "phù hợp", "vui", "nicer", "prestigious", "advice",
    "nervous", "feel", "tốt hơn", "worth",
]);
phrases!(CALC, [
    "tổng điểm", "total", "calculate", "điểm xét tuyển", "how many points", "in total", "tính tổng", "tính điểm",
]);
phrases!(PRIORITY, ["điểm ưu tiên", "ưu tiên", "priority points", "được cộng", "cộng bao nhiêu", "bonus"]);
phrases!(ELIGIBILITY, [
    "đậu", "đỗ", "trúng tuyển", "đủ điểm", "can i pass", "can i get into", "get into", "enough", "pass",
    "eligible", "chance",
]);
phrases!(LIST, ["ngành nào", "những ngành", "which programs", "what programs", "which majors", "what majors"]);
phrases!(TOPIC, [
    "học phí", "tuition", "fee", "fees", "phí", "lệ phí", "mã ngành", "mã", "code", "chỉ tiêu", "quota",
    "deadline", "hạn", "lịch", "ký túc xá", "dormitory", "học bổng", "scholarship", "scholarships",
    "điện thoại", "phone", "hotline", "liên hệ", "contact", "thành lập", "founded", "cơ sở", "campus",
    "câu lạc bộ", "clubs", "laboratories", "library", "tiếng anh", "english", "exchange", "hồ sơ",
    "documents", "ngành", "program", "programs", "programme", "programmes", "major", "trường", "university",
    "điểm chuẩn", "cutoff", "medical", "offer", "tín chỉ", "credits", "admission", "tuyển sinh", "xét tuyển",
]);
phrases!(INTRO, ["giới thiệu", "tell me", "describe", "explain", "overview", "introduction", "mô tả"]);
phrases!(INTERROGATIVE, [
    "?", "what", "which", "when", "where", "how", "who", "does", "gì", "nào", "bao nhiêu", "không", "ở đâu",
]);
phrases!(ANAPHORA_LEAD, ["vậy", "so"]);
phrases!(ANAPHORA, ["điểm đó", "with my", "my score", "em quan tâm"]);
phrases!(SELF_DISCLOSURE, ["mình ở", "em ở", "tôi ở", "i am from", "i'm from", "i live in"]);

/// Rule-based router over the message and the entities found in it.
///
/// Each intent accumulates weighted evidence capped at 1; the best one wins
/// when it reaches [`MIN_CONFIDENCE`]. Subjective questions go straight to
/// the general agent.
pub fn classify_query(q: &str, e: &ExtractedEntities) -> IntentClassification {
    let words = tokenize(&normalize_text(q));
    let personal = e.uses_profile()
        || ANAPHORA_LEAD.leads(&words)
        || ANAPHORA.any(&words)
        || SELF_DISCLOSURE.any(&words);
    let query_type = |intent: Intent, intro: bool| {
        if personal && intent != Intent::General {
            return QueryType::MultiturnPersonal;
        }
        match intent {
            Intent::ScoreCalc => QueryType::LogicCalculation,
            Intent::Recommend => QueryType::EntityEligibility,
            Intent::InfoSearch if intro => QueryType::AnswerGeneration,
            Intent::InfoSearch => QueryType::KeywordLookup,
            Intent::General => QueryType::AmbiguousSubjective,
        }
    };

    let mut scores: BTreeMap<Intent, f64> = Intent::ALL.iter().map(|i| (*i, 0.0)).collect();
    if SUBJECTIVE.any(&words) {
        scores.insert(Intent::General, 0.8);
        return IntentClassification {
            intent: Intent::General,
            query_type: QueryType::AmbiguousSubjective,
            confidence: 0.8,
            scores,
        };
    }

    let w = |hit: bool, weight: f64| if hit { weight } else { 0.0 };
    let points = e.has_points();
    let program = e.program.is_some();
    let has_code = words.iter().any(|t| t.len() == 7 && t.bytes().all(|b| b.is_ascii_digit()));
    let intro = INTRO.any(&words);

    let score_calc = w(CALC.any(&words), 0.5)
        + w(PRIORITY.any(&words), 0.6)
        + w(points, 0.3)
        + w(e.region.is_some() || e.priority_group.is_some(), 0.3);
    let recommend =
        w(ELIGIBILITY.any(&words), 0.6) + w(program, 0.2) + w(points, 0.2) + w(points && LIST.any(&words), 0.3);
    let info = w(TOPIC.any(&words) || has_code, 0.4) + w(INTERROGATIVE.any(&words), 0.2) + w(intro, 0.6) + w(program, 0.2);

    // ties resolve in this order
    let ranked = [(Intent::ScoreCalc, score_calc), (Intent::Recommend, recommend), (Intent::InfoSearch, info)];
    let mut best = (Intent::General, 0.0);
    for (intent, s) in ranked {
        let s = s.min(1.0);
        scores.insert(intent, s);
        if s > best.1 + 1e-12 {
            best = (intent, s);
        }
    }
    let (intent, confidence) = best;
    let intent = if confidence < MIN_CONFIDENCE { Intent::General } else { intent };
    IntentClassification { intent, query_type: query_type(intent, intro), confidence, scores }
}
