//! Intent routing, entity extraction and the domain logic behind the score
//! and recommendation agents.

mod classify;
mod cutoffs;
mod entities;
mod rules;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classify::{classify_query, IntentClassification, MIN_CONFIDENCE};
pub use cutoffs::{
    recommend_programs, verdict_for, CutoffRow, CutoffTable, EligibilityQuery, Method, Program, ProgramMention,
    Recommendation, Verdict, BORDERLINE_BAND,
};
pub use entities::{extract_entities, ExtractedEntities, Provenance};
pub use rules::{compute_admission_score, PriorityGroup, Region, ScoreBreakdown, ScoreRuleTable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    InfoSearch,
    ScoreCalc,
    Recommend,
    General,
}

impl Intent {
    pub const ALL: [Intent; 4] = [Intent::InfoSearch, Intent::ScoreCalc, Intent::Recommend, Intent::General];

    pub fn as_str(self) -> &'static str {
        match self {
            Intent::InfoSearch => "info_search",
            Intent::ScoreCalc => "score_calc",
            Intent::Recommend => "recommend",
            Intent::General => "general",
        }
    }
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryType {
    KeywordLookup,
    EntityEligibility,
    AnswerGeneration,
    LogicCalculation,
    MultiturnPersonal,
    AmbiguousSubjective,
}

impl QueryType {
    pub const ALL: [QueryType; 6] = [
        QueryType::KeywordLookup,
        QueryType::EntityEligibility,
        QueryType::AnswerGeneration,
        QueryType::LogicCalculation,
        QueryType::MultiturnPersonal,
        QueryType::AmbiguousSubjective,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryType::KeywordLookup => "keyword_lookup",
            QueryType::EntityEligibility => "entity_eligibility",
            QueryType::AnswerGeneration => "answer_generation",
            QueryType::LogicCalculation => "logic_calculation",
            QueryType::MultiturnPersonal => "multiturn_personal",
            QueryType::AmbiguousSubjective => "ambiguous_subjective",
        }
    }
}

impl fmt::Display for QueryType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A value the user may have to supply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    TranscriptPoints,
    ExamPoints,
    Points,
    Region,
    PriorityGroup,
    Province,
    Program,
    Year,
}

impl Slot {
    pub fn label(self) -> &'static str {
        match self {
            Slot::TranscriptPoints => "transcript points",
            Slot::ExamPoints => "exam points",
            Slot::Points => "points",
            Slot::Region => "region",
            Slot::PriorityGroup => "priority group",
            Slot::Province => "province",
            Slot::Program => "program",
            Slot::Year => "year",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error("missing {}", .0.iter().map(|s| s.label()).collect::<Vec<_>>().join(", "))]
    NeedsClarification(Vec<Slot>),
    #[error("conflicting values for {}", .0.iter().map(|s| s.label()).collect::<Vec<_>>().join(", "))]
    Ambiguous(Vec<Slot>),
    #[error("points {0} outside [0, 30]")]
    PointsOutOfRange(f64),
    #[error("unknown program {name:?}")]
    UnknownProgram { name: String, suggestions: Vec<String> },
    #[error("no data: {0}")]
    DataGap(String),
    #[error("invalid table: {0}")]
    InvalidTable(String),
}
