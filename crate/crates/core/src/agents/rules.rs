use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::ingest::fold_diacritics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Region {
    #[serde(rename = "KV1")]
    Kv1,
    #[serde(rename = "KV2-NT")]
    Kv2Nt,
    #[serde(rename = "KV2")]
    Kv2,
    #[serde(rename = "KV3")]
    Kv3,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::Kv1, Region::Kv2Nt, Region::Kv2, Region::Kv3];

    pub fn code(self) -> &'static str {
        match self {
            Region::Kv1 => "KV1",
            Region::Kv2Nt => "KV2-NT",
            Region::Kv2 => "KV2",
            Region::Kv3 => "KV3",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Region {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Region::ALL
            .into_iter()
            .find(|r| r.code().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown region {s:?}"))
    }
}

/// Priority group. `None` is an explicit "no group", distinct from unknown.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PriorityGroup {
    #[serde(rename = "PG1")]
    Pg1,
    #[serde(rename = "PG2")]
    Pg2,
    #[serde(rename = "none")]
    None,
}

impl PriorityGroup {
    pub fn code(self) -> &'static str {
        match self {
            PriorityGroup::Pg1 => "PG1",
            PriorityGroup::Pg2 => "PG2",
            PriorityGroup::None => "none",
        }
    }
}

impl fmt::Display for PriorityGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// Admission bonus policy for one year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRuleTable {
    pub max_total: f64,
    pub scaling_threshold: f64,
    pub region_bonus: BTreeMap<Region, f64>,
    /// Bonuses for `PG1` and `PG2`; no group earns nothing.
    pub group_bonus: BTreeMap<PriorityGroup, f64>,
    pub province_region: BTreeMap<String, Region>,
}

impl Default for ScoreRuleTable {
    fn default() -> Self {
        Self {
            max_total: 30.0,
            scaling_threshold: 22.5,
            region_bonus: [(Region::Kv1, 0.75), (Region::Kv2Nt, 0.5), (Region::Kv2, 0.25), (Region::Kv3, 0.0)].into(),
            group_bonus: [(PriorityGroup::Pg1, 2.0), (PriorityGroup::Pg2, 1.0)].into(),
            province_region: BTreeMap::new(),
        }
    }
}

impl ScoreRuleTable {
    pub fn from_json(text: &str) -> Result<Self, AgentError> {
        let t: Self = serde_json::from_str(text).map_err(|e| AgentError::InvalidTable(e.to_string()))?;
        t.validate()?;
        Ok(t)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(|e| AgentError::InvalidTable(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::InvalidTable(m));
        if !(self.scaling_threshold < self.max_total) || self.max_total <= 0.0 {
            return bad(format!("threshold {} must be below max {}", self.scaling_threshold, self.max_total));
        }
        if self.region_bonus.values().chain(self.group_bonus.values()).any(|b| !(*b >= 0.0)) {
            return bad("bonuses must be non-negative".into());
        }
        if self.group_bonus.get(&PriorityGroup::None).is_some_and(|b| *b != 0.0) {
            return bad("no-group bonus must be zero".into());
        }
        Ok(())
    }

    pub fn region_bonus(&self, r: Region) -> f64 {
        self.region_bonus.get(&r).copied().unwrap_or(0.0)
    }

    pub fn group_bonus(&self, g: PriorityGroup) -> f64 {
        self.group_bonus.get(&g).copied().unwrap_or(0.0)
    }

    /// Region of a province, matched without diacritics or case.
    pub fn province_region(&self, province: &str) -> Option<Region> {
        let key = fold_diacritics(&province.to_lowercase());
        self.province_region.iter().find(|(p, _)| fold_diacritics(&p.to_lowercase()) == key).map(|(_, r)| *r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreBreakdown {
    pub base: f64,
    pub region: Region,
    pub group: PriorityGroup,
    pub region_bonus: f64,
    pub group_bonus: f64,
    pub scaling_factor: f64,
    /// `(region_bonus + group_bonus) * scaling_factor`.
    pub applied_bonus: f64,
    pub total: f64,
}

/// Total admission score with the near-ceiling bonus scaling rule.
///
/// Below the threshold the bonus is added in full. From the threshold up it
/// shrinks linearly, reaching zero at the maximum, and the total never
/// exceeds the maximum.
pub fn compute_admission_score(
    base: f64,
    region: Region,
    group: PriorityGroup,
    rules: &ScoreRuleTable,
) -> Result<ScoreBreakdown, AgentError> {
    if !(0.0..=rules.max_total).contains(&base) {
        return Err(AgentError::PointsOutOfRange(base));
    }
    let region_bonus = rules.region_bonus(region);
    let group_bonus = rules.group_bonus(group);
    let scaling_factor = if base < rules.scaling_threshold {
        1.0
    } else {
        (rules.max_total - base) / (rules.max_total - rules.scaling_threshold)
    };
    let applied_bonus = (region_bonus + group_bonus) * scaling_factor;
    let total = (base + applied_bonus).min(rules.max_total);
    Ok(ScoreBreakdown { base, region, group, region_bonus, group_bonus, scaling_factor, applied_bonus, total })
}
