use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::rules::{compute_admission_score, PriorityGroup, Region, ScoreRuleTable};
use super::AgentError;
use crate::ingest::{fold_diacritics, normalize_text, tokenize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Exam,
    Transcript,
}

impl Method {
    pub const ALL: [Method; 2] = [Method::Exam, Method::Transcript];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exam => "exam",
            Method::Transcript => "transcript",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffRow {
    pub program_id: String,
    pub program_name: String,
    #[serde(default)]
    pub aliases: Vec<String>,
    pub year: i32,
    pub method: Method,
    pub cutoff: f64,
    #[serde(default)]
    pub quota: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Program {
    pub id: String,
    pub name: String,
    pub aliases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutoffTable {
    rows: Vec<CutoffRow>,
}

#[derive(Deserialize)]
struct CutoffFile {
    rows: Vec<CutoffRow>,
}

/// Folded token sequence used for name matching.
fn fold_tokens(text: &str) -> Vec<String> {
    tokenize(&fold_diacritics(&normalize_text(text)))
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric))
        .collect()
}

fn contains_seq(hay: &[String], needle: &[String]) -> Option<usize> {
    if needle.is_empty() || needle.len() > hay.len() {
        return None;
    }
    hay.windows(needle.len()).position(|w| w == needle)
}

/// A program found in free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgramMention {
    pub program_id: String,
    /// The matched words, as they were folded.
    pub matched: String,
    pub fuzzy: bool,
}

impl CutoffTable {
    pub fn new(rows: Vec<CutoffRow>) -> Result<Self, AgentError> {
        let mut seen = HashSet::new();
        for r in &rows {
            if !(r.cutoff > 0.0 && r.cutoff <= 30.0) {
                return Err(AgentError::InvalidTable(format!("cutoff {} for {} out of (0, 30]", r.cutoff, r.program_id)));
            }
            if !seen.insert((r.program_id.clone(), r.year, r.method)) {
                return Err(AgentError::InvalidTable(format!("duplicate row {} {} {}", r.program_id, r.year, r.method)));
            }
        }
        Ok(Self { rows })
    }

    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let f: CutoffFile = serde_json::from_str(text).map_err(|e| AgentError::InvalidTable(e.to_string()))?;
        Self::new(f.rows)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AgentError::InvalidTable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn rows(&self) -> &[CutoffRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn programs(&self) -> Vec<Program> {
        let mut by_id: BTreeMap<&str, Program> = BTreeMap::new();
        for r in &self.rows {
            let p = by_id.entry(&r.program_id).or_insert_with(|| Program {
                id: r.program_id.clone(),
                name: r.program_name.clone(),
                aliases: Vec::new(),
            });
            for a in &r.aliases {
                if !p.aliases.contains(a) {
                    p.aliases.push(a.clone());
                }
            }
        }
        by_id.into_values().collect()
    }

    pub fn program(&self, id: &str) -> Option<Program> {
        self.programs().into_iter().find(|p| p.id == id)
    }

    pub fn latest_year(&self) -> Option<i32> {
        self.rows.iter().map(|r| r.year).max()
    }

    /// Finds a program named in `text`: by code, then by the longest name or
    /// alias contained as a word sequence, then by edit distance at most 2.
    pub fn find_program(&self, text: &str) -> Option<ProgramMention> {
        let hay = fold_tokens(text);
        let programs = self.programs();
        if let Some(p) = programs.iter().find(|p| hay.contains(&p.id)) {
            return Some(ProgramMention { program_id: p.id.clone(), matched: p.id.clone(), fuzzy: false });
        }
        // two-letter aliases collide with ordinary words ("it", "ai")
        let names = |p: &Program| -> Vec<Vec<String>> {
            std::iter::once(&p.name)
                .chain(&p.aliases)
                .map(|n| fold_tokens(n))
                .filter(|t| t.concat().chars().count() >= 3)
                .collect()
        };
        let mut best: Option<(usize, &Program, String)> = None;
        for p in &programs {
            for name in names(p) {
                if contains_seq(&hay, &name).is_some() {
                    let len = name.concat().chars().count();
                    if best.as_ref().is_none_or(|(l, _, _)| len > *l) {
                        best = Some((len, p, name.join(" ")));
                    }
                }
            }
        }
        if let Some((_, p, matched)) = best {
            return Some(ProgramMention { program_id: p.id.clone(), matched, fuzzy: false });
        }
        let mut fuzzy: Option<(usize, usize, &Program, String)> = None;
        for p in &programs {
            for name in names(p) {
                let joined = name.join(" ");
                if joined.chars().count() < 6 {
                    continue;
                }
                for w in hay.windows(name.len()) {
                    let cand = w.join(" ");
                    let d = strsim::levenshtein(&cand, &joined);
                    if d <= 2 && fuzzy.as_ref().is_none_or(|(bd, bl, _, _)| d < *bd || (d == *bd && joined.len() > *bl)) {
                        fuzzy = Some((d, joined.len(), p, cand));
                    }
                }
            }
        }
        fuzzy.map(|(_, _, p, matched)| ProgramMention { program_id: p.id.clone(), matched, fuzzy: true })
    }

    /// Program names closest to `name`, best first.
    pub fn suggest(&self, name: &str, n: usize) -> Vec<String> {
        let target = fold_tokens(name).join(" ");
        let mut scored: Vec<(usize, String)> = self
            .programs()
            .into_iter()
            .map(|p| {
                let d = std::iter::once(&p.name)
                    .chain(&p.aliases)
                    .map(|a| strsim::levenshtein(&fold_tokens(a).join(" "), &target))
                    .min()
                    .unwrap_or(usize::MAX);
                (d, p.name)
            })
            .collect();
        scored.sort();
        scored.into_iter().take(n).map(|(_, name)| name).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Borderline,
    Fail,
}

/// Half-width of the borderline band, in points.
pub const BORDERLINE_BAND: f64 = 0.5;

pub fn verdict_for(margin: f64) -> Verdict {
    if margin >= BORDERLINE_BAND {
        Verdict::Pass
    } else if margin.abs() < BORDERLINE_BAND {
        Verdict::Borderline
    } else {
        Verdict::Fail
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recommendation {
    pub program_id: String,
    pub program_name: String,
    pub year: i32,
    pub method: Method,
    pub cutoff: f64,
    pub effective: f64,
    pub margin: f64,
    pub verdict: Verdict,
}

/// What to compare: a score per admission method, plus the program filter.
#[derive(Debug, Clone, PartialEq)]
pub struct EligibilityQuery {
    pub scores: Vec<(Method, f64)>,
    pub region: Region,
    pub group: PriorityGroup,
    pub program: Option<String>,
    pub year: Option<i32>,
}

/// Compares effective scores against cutoffs.
///
/// A named program yields its rows for the requested (else latest) year.
/// Without a program, every non-failing row is listed by margin descending,
/// ties by program id then method.
pub fn recommend_programs(
    q: &EligibilityQuery,
    table: &CutoffTable,
    rules: &ScoreRuleTable,
) -> Result<Vec<Recommendation>, AgentError> {
    if q.scores.is_empty() {
        return Err(AgentError::NeedsClarification(vec![super::Slot::Points]));
    }
    if table.is_empty() {
        return Err(AgentError::DataGap("the cut-off table is empty".into()));
    }
    if let Some(p) = &q.program {
        if table.program(p).is_none() {
            return Err(AgentError::UnknownProgram { name: p.clone(), suggestions: table.suggest(p, 3) });
        }
    }
    let year = q.year.or_else(|| {
        table.rows().iter().filter(|r| q.program.as_ref().is_none_or(|p| &r.program_id == p)).map(|r| r.year).max()
    });
    let mut out = Vec::new();
    for &(method, points) in &q.scores {
        let effective = compute_admission_score(points, q.region, q.group, rules)?.total;
        for r in table.rows() {
            if Some(r.year) != year || r.method != method || q.program.as_ref().is_some_and(|p| &r.program_id != p) {
                continue;
            }
            let margin = effective - r.cutoff;
            out.push(Recommendation {
                program_id: r.program_id.clone(),
                program_name: r.program_name.clone(),
                year: r.year,
                method,
                cutoff: r.cutoff,
                effective,
                margin,
                verdict: verdict_for(margin),
            });
        }
    }
    if out.is_empty() {
        let methods: Vec<&str> = q.scores.iter().map(|(m, _)| m.as_str()).collect();
        return Err(AgentError::DataGap(format!(
            "no cut-off rows for {} in {}",
            methods.join("/"),
            year.map_or("any year".to_string(), |y| y.to_string())
        )));
    }
    if q.program.is_none() {
        out.retain(|r| r.verdict != Verdict::Fail);
        out.sort_by(|a, b| {
            b.margin.total_cmp(&a.margin).then_with(|| a.program_id.cmp(&b.program_id)).then(a.method.cmp(&b.method))
        });
    }
    Ok(out)
}
