use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agents::{ExtractedEntities, Method, PriorityGroup, Provenance, Region, ScoreRuleTable, Slot};

/// What the conversation has established about the applicant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub province: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<Region>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_group: Option<PriorityGroup>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub scores: BTreeMap<Method, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interested_programs: Vec<String>,
}

impl UserProfile {
    pub fn is_empty(&self) -> bool {
        self == &Self::default()
    }

    /// One-line description for the prompt; `None` when nothing is known.
    pub fn summary(&self) -> Option<String> {
        let mut parts = Vec::new();
        if let Some(p) = &self.province {
            parts.push(format!("province {p}"));
        }
        if let Some(r) = self.region {
            parts.push(format!("region {r}"));
        }
        if let Some(g) = self.priority_group {
            parts.push(format!("priority group {g}"));
        }
        for (m, v) in &self.scores {
            parts.push(format!("{m} points {v}"));
        }
        if !self.interested_programs.is_empty() {
            parts.push(format!("interested in {}", self.interested_programs.join(", ")));
        }
        (!parts.is_empty()).then(|| parts.join("; "))
    }
}

/// Applies what the user stated in this message. Only values that came from
/// the message itself overwrite slots; a province also sets the region unless
/// the message named a region explicitly.
pub fn update_profile(profile: &UserProfile, e: &ExtractedEntities, rules: &ScoreRuleTable) -> UserProfile {
    let mut next = profile.clone();
    let stated = |slot: Slot| matches!(e.provenance.get(&slot), Some(Provenance::Query { .. }));
    if stated(Slot::Province) {
        if let Some(p) = &e.province {
            next.province = Some(p.clone());
            if let Some(r) = rules.province_region(p) {
                next.region = Some(r);
            }
        }
    }
    if stated(Slot::Region) {
        next.region = e.region.or(next.region);
    }
    if stated(Slot::PriorityGroup) {
        next.priority_group = e.priority_group.or(next.priority_group);
    }
    if stated(Slot::TranscriptPoints) {
        if let Some(v) = e.transcript_points {
            next.scores.insert(Method::Transcript, v);
        }
    }
    if stated(Slot::ExamPoints) {
        if let Some(v) = e.exam_points {
            next.scores.insert(Method::Exam, v);
        }
    }
    if stated(Slot::Program) {
        if let Some(p) = &e.program {
            next.interested_programs.retain(|x| x != p);
            next.interested_programs.push(p.clone());
        }
    }
    next
}
