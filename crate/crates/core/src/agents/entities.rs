use std::collections::BTreeMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::cutoffs::{CutoffTable, Method};
use super::rules::{PriorityGroup, Region, ScoreRuleTable};
use super::Slot;
use crate::ingest::{fold_diacritics, normalize_text, tokenize};
use crate::session::UserProfile;

/// Where a populated field came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum Provenance {
    /// A substring of the message (in folded form).
    Query { text: String },
    /// The session profile.
    Profile,
    /// The region implied by a province, itself from the message or profile.
    Province { province: String },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExtractedEntities {
    pub transcript_points: Option<f64>,
    pub exam_points: Option<f64>,
    /// Points stated without an admission method.
    pub points: Option<f64>,
    pub region: Option<Region>,
    pub priority_group: Option<PriorityGroup>,
    pub province: Option<String>,
    pub program: Option<String>,
    pub year: Option<i32>,
    /// A method named without a number, e.g. "my transcript score".
    pub method_hint: Option<Method>,
    /// The message asks for a list of programs rather than one.
    pub wants_list: bool,
    /// Slots given two different values in the message.
    pub conflicts: Vec<Slot>,
    /// Claims outside `[0, 30]`.
    pub out_of_range: Vec<f64>,
    pub provenance: BTreeMap<Slot, Provenance>,
}

impl ExtractedEntities {
    pub fn has_points(&self) -> bool {
        self.transcript_points.is_some() || self.exam_points.is_some() || self.points.is_some()
    }

    pub fn from_profile(&self, slot: Slot) -> bool {
        matches!(self.provenance.get(&slot), Some(Provenance::Profile))
    }

    /// Any populated slot taken from the session rather than the message.
    pub fn uses_profile(&self) -> bool {
        self.provenance.values().any(|p| matches!(p, Provenance::Profile))
    }

    /// Scores by method that the agents should evaluate.
    pub fn scores(&self) -> Vec<(Option<Method>, f64)> {
        let mut out = Vec::new();
        if let Some(v) = self.exam_points {
            out.push((Some(Method::Exam), v));
        }
        if let Some(v) = self.transcript_points {
            out.push((Some(Method::Transcript), v));
        }
        if let Some(v) = self.points {
            out.push((None, v));
        }
        out
    }
}

static POINTS: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?x)
        \b(?P<num>\d{1,2}(?:[.,]\d{1,2})?)
        \s*(?P<pre>exam|transcript|thi)?
        \s*(?:diem|points?|score)\b
        (?:\s*(?P<post>thi|hoc\s+ba|exam|transcript|from\s+(?:my\s+)?(?:high\s+school\s+record|transcript)))?",
    )
    .expect("valid pattern")
});

static REGION: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:kv|khu\s+vuc|region|area)\s*-?\s*([123])(\s*-?\s*(?:nt|nong\s+thon)\b)?").expect("valid pattern")
});

static GROUP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:doi\s+tuong(?:\s+uu\s+tien)?|priority\s+group|group|nhom\s+uu\s+tien|pg)\s*-?\s*([12])\b")
        .expect("valid pattern")
});

static NO_GROUP: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\bno\s+priority\s+group\b|\bnot\s+in\s+(?:a|any)\s+priority\s+group\b|\bkhong\s+(?:thuoc|co)\s+doi\s+tuong\b")
        .expect("valid pattern")
});

static YEAR: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(20[0-9]{2})\b").expect("valid pattern"));

static TRANSCRIPT_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:hoc\s+ba|transcript|high\s+school\s+record)\b").expect("valid pattern"));

static EXAM_WORD: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:diem\s+thi|thi\s+thpt|exam)\b").expect("valid pattern"));

static LIST_REQUEST: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:nhung\s+nganh\s+nao|nganh\s+nao|which\s+(?:programs?|programmes?|majors?)|what\s+(?:programs?|programmes?|majors?))\b")
        .expect("valid pattern")
});

fn method_of(word: Option<&str>) -> Option<Method> {
    let w = word?;
    if w.contains("thi") || w.contains("exam") {
        Some(Method::Exam)
    } else {
        Some(Method::Transcript)
    }
}

/// Sets a slot once; a second, different value records a conflict.
fn put<T: PartialEq + Clone>(slot: Slot, field: &mut Option<T>, value: T, text: &str, e: &mut Vec<(Slot, Provenance)>, conflicts: &mut Vec<Slot>) {
    match field {
        Some(old) if *old != value => {
            if !conflicts.contains(&slot) {
                conflicts.push(slot);
            }
        }
        Some(_) => {}
        None => {
            *field = Some(value);
            e.push((slot, Provenance::Query { text: text.to_string() }));
        }
    }
}

/// Pulls admission attributes out of one message, then fills the gaps from
/// the session profile.
pub fn extract_entities(
    q: &str,
    profile: &UserProfile,
    rules: &ScoreRuleTable,
    table: &CutoffTable,
) -> ExtractedEntities {
    let folded = fold_diacritics(&normalize_text(q));
    let mut e = ExtractedEntities::default();
    let mut prov = Vec::new();
    let mut conflicts = Vec::new();

    let has_transcript_word = TRANSCRIPT_WORD.is_match(&folded);
    let has_exam_word = EXAM_WORD.is_match(&folded);
    let sentence_method = match (has_transcript_word, has_exam_word) {
        (true, false) => Some(Method::Transcript),
        (false, true) => Some(Method::Exam),
        _ => None,
    };

    for cap in POINTS.captures_iter(&folded) {
        let text = cap.get(0).expect("whole match").as_str();
        let value: f64 = cap["num"].replace(',', ".").parse().expect("pattern admits only numbers");
        if !(0.0..=30.0).contains(&value) {
            e.out_of_range.push(value);
            continue;
        }
        let method = method_of(cap.name("pre").or(cap.name("post")).map(|m| m.as_str())).or(sentence_method);
        match method {
            Some(Method::Exam) => put(Slot::ExamPoints, &mut e.exam_points, value, text, &mut prov, &mut conflicts),
            Some(Method::Transcript) => {
                put(Slot::TranscriptPoints, &mut e.transcript_points, value, text, &mut prov, &mut conflicts)
            }
            None => put(Slot::Points, &mut e.points, value, text, &mut prov, &mut conflicts),
        }
    }
    if let Some(p) = e.points {
        // an unqualified number that differs from a qualified one is a second claim
        if e.exam_points.is_some_and(|v| v != p) || e.transcript_points.is_some_and(|v| v != p) {
            conflicts.push(Slot::Points);
        }
    }
    if !e.has_points() {
        e.method_hint = sentence_method;
    }

    for cap in REGION.captures_iter(&folded) {
        let region = match (&cap[1], cap.get(2).is_some()) {
            ("1", _) => Region::Kv1,
            ("2", true) => Region::Kv2Nt,
            ("2", false) => Region::Kv2,
            _ => Region::Kv3,
        };
        put(Slot::Region, &mut e.region, region, cap.get(0).expect("whole match").as_str(), &mut prov, &mut conflicts);
    }

    if let Some(m) = NO_GROUP.find(&folded) {
        put(Slot::PriorityGroup, &mut e.priority_group, PriorityGroup::None, m.as_str(), &mut prov, &mut conflicts);
    }
    for cap in GROUP.captures_iter(&folded) {
        let g = if &cap[1] == "1" { PriorityGroup::Pg1 } else { PriorityGroup::Pg2 };
        put(Slot::PriorityGroup, &mut e.priority_group, g, cap.get(0).expect("whole match").as_str(), &mut prov, &mut conflicts);
    }

    let words: Vec<String> = tokenize(&folded);
    for province in rules.province_region.keys() {
        let needle = tokenize(&fold_diacritics(&normalize_text(province)));
        if !needle.is_empty() && words.windows(needle.len()).any(|w| w == needle.as_slice()) {
            put(Slot::Province, &mut e.province, province.clone(), &needle.join(" "), &mut prov, &mut conflicts);
        }
    }
    if e.region.is_none() {
        if let Some(p) = &e.province {
            if let Some(r) = rules.province_region(p) {
                e.region = Some(r);
                prov.push((Slot::Region, Provenance::Province { province: p.clone() }));
            }
        }
    }

    if let Some(m) = table.find_program(q) {
        e.program = Some(m.program_id);
        prov.push((Slot::Program, Provenance::Query { text: m.matched }));
    }
    if let Some(cap) = YEAR.captures(&folded) {
        e.year = cap[1].parse().ok();
        prov.push((Slot::Year, Provenance::Query { text: cap[1].to_string() }));
    }
    e.wants_list = LIST_REQUEST.is_match(&folded);

    e.provenance = prov.into_iter().collect();
    e.conflicts = conflicts;
    fill_from_profile(&mut e, profile, rules);
    e
}

fn fill_from_profile(e: &mut ExtractedEntities, profile: &UserProfile, rules: &ScoreRuleTable) {
    let mut fill = |slot: Slot, present: bool| -> bool {
        if present {
            return false;
        }
        e.provenance.insert(slot, Provenance::Profile);
        true
    };
    if profile.province.is_some() && fill(Slot::Province, e.province.is_some()) {
        e.province = profile.province.clone();
    }
    if e.region.is_none() {
        if let Some(r) = profile.region {
            e.region = Some(r);
            e.provenance.insert(Slot::Region, Provenance::Profile);
        } else if let Some(r) = e.province.as_deref().and_then(|p| rules.province_region(p)) {
            e.region = Some(r);
            e.provenance.insert(Slot::Region, Provenance::Province { province: e.province.clone().expect("checked") });
        }
    }
    if e.priority_group.is_none() {
        if let Some(g) = profile.priority_group {
            e.priority_group = Some(g);
            e.provenance.insert(Slot::PriorityGroup, Provenance::Profile);
        }
    }
    if !e.has_points() {
        let wanted = |m: Method| e.method_hint.is_none_or(|h| h == m);
        if wanted(Method::Exam) {
            if let Some(v) = profile.scores.get(&Method::Exam) {
                e.exam_points = Some(*v);
                e.provenance.insert(Slot::ExamPoints, Provenance::Profile);
            }
        }
        if wanted(Method::Transcript) {
            if let Some(v) = profile.scores.get(&Method::Transcript) {
                e.transcript_points = Some(*v);
                e.provenance.insert(Slot::TranscriptPoints, Provenance::Profile);
            }
        }
    }
    if e.program.is_none() && !e.wants_list {
        if let Some(p) = profile.interested_programs.last() {
            e.program = Some(p.clone());
            e.provenance.insert(Slot::Program, Provenance::Profile);
        }
    }
}
