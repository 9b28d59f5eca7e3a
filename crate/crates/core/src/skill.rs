//! Skill documents: an ordered body of prescriptive rules plus an appendix of
//! reminders anchored to body rules.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::vocab::{RulePredicate, TOMBSTONE};

/// Name of the body hashing scheme, recorded in every skill document header.
pub const DIGEST_ALGORITHM: &str = "sha256/rule-records-v1";

const PREDICATE_TAG_PREFIXES: [&str; 3] = ["kind=", "at=", "prep="];

/// Stable identifier of a body rule. Never reused within one run.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub String);

impl RuleId {
    pub fn from_seq(n: u64) -> Self {
        RuleId(format!("r{n}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for RuleId {
    fn from(s: &str) -> Self {
        RuleId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OriginKind {
    Initial,
    Discovery,
    Optimization,
    DefectFix,
    /// Produced by a whole-document rewrite (skill-unaware mode).
    Rewrite,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SkillRule {
    pub rule_id: RuleId,
    pub text: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    pub origin: OriginKind,
    /// Reflection ids that produced or last edited this rule.
    #[serde(default)]
    pub provenance: Vec<String>,
}

impl SkillRule {
    pub fn new(rule_id: RuleId, text: impl Into<String>, labels: impl IntoIterator<Item = String>) -> Self {
        let mut rule = SkillRule {
            rule_id,
            text: text.into(),
            tags: labels.into_iter().collect(),
            origin: OriginKind::Initial,
            provenance: Vec::new(),
        };
        rule.refresh_predicate_tags();
        rule
    }

    pub fn is_tombstone(&self) -> bool {
        self.text.trim() == TOMBSTONE
    }

    pub fn predicate(&self) -> Option<RulePredicate> {
        if self.is_tombstone() {
            None
        } else {
            RulePredicate::parse(&self.text)
        }
    }

    /// Replaces text and re-derives the predicate tags; free-form labels are kept.
    pub fn set_text(&mut self, text: impl Into<String>) {
        self.text = text.into();
        self.refresh_predicate_tags();
    }

    fn refresh_predicate_tags(&mut self) {
        self.tags
            .retain(|t| !PREDICATE_TAG_PREFIXES.iter().any(|p| t.starts_with(p)));
        if let Some(p) = self.predicate() {
            self.tags.extend(p.to_tags());
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppendixItem {
    pub anchor_rule_id: RuleId,
    pub reminder: String,
    pub lapse_count: u32,
    pub last_updated_version: u64,
}

/// Rule text and labels supplied when building an initial skill.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleSeed {
    pub text: String,
    pub labels: Vec<String>,
}

impl RuleSeed {
    pub fn new(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            labels: Vec::new(),
        }
    }

    pub fn labelled(text: impl Into<String>, labels: &[&str]) -> Self {
        Self {
            text: text.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SkillError {
    #[error("rule text must be non-empty (rule #{0})")]
    EmptyRuleText(usize),
    #[error("invalid skill: {0}")]
    InvalidSkill(ValidationReport),
}

/// Immutable skill snapshot `(body, appendix)` at one version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skill {
    pub version: u64,
    pub body: Vec<SkillRule>,
    pub appendix: Vec<AppendixItem>,
    pub body_digest: String,
    /// Next value of the run-wide rule id counter.
    pub next_rule_id: u64,
}

impl Skill {
    /// Version-0 skill with ids `r1, r2, ...`.
    pub fn initial(rules: impl IntoIterator<Item = RuleSeed>) -> Result<Self, SkillError> {
        Self::initial_with_first_id(rules, 1)
    }

    pub fn initial_with_first_id(
        rules: impl IntoIterator<Item = RuleSeed>,
        first_id: u64,
    ) -> Result<Self, SkillError> {
        let mut next = first_id;
        let mut body = Vec::new();
        for (i, seed) in rules.into_iter().enumerate() {
            if seed.text.trim().is_empty() {
                return Err(SkillError::EmptyRuleText(i));
            }
            body.push(SkillRule::new(RuleId::from_seq(next), seed.text, seed.labels));
            next += 1;
        }
        Ok(Self::from_parts(0, body, Vec::new(), next))
    }

    /// Assembles a snapshot and computes its body digest.
    pub fn from_parts(
        version: u64,
        body: Vec<SkillRule>,
        appendix: Vec<AppendixItem>,
        next_rule_id: u64,
    ) -> Self {
        let body_digest = body_digest(&body);
        Skill {
            version,
            body,
            appendix,
            body_digest,
            next_rule_id,
        }
    }

    pub fn empty() -> Self {
        Self::from_parts(0, Vec::new(), Vec::new(), 1)
    }

    pub fn rule(&self, id: &RuleId) -> Option<&SkillRule> {
        self.body.iter().find(|r| &r.rule_id == id)
    }

    /// A rule that exists and has not been tombstoned.
    pub fn live_rule(&self, id: &RuleId) -> Option<&SkillRule> {
        self.rule(id).filter(|r| !r.is_tombstone())
    }

    pub fn live_rules(&self) -> impl Iterator<Item = &SkillRule> {
        self.body.iter().filter(|r| !r.is_tombstone())
    }

    pub fn appendix_for(&self, id: &RuleId) -> Option<&AppendixItem> {
        self.appendix.iter().find(|a| &a.anchor_rule_id == id)
    }

    pub fn validate(&self) -> ValidationReport {
        validate_skill(self)
    }
}

/// Content hash over `(rule_id, text, tags)` records in body order.
pub fn body_digest(body: &[SkillRule]) -> String {
    let mut hasher = Sha256::new();
    for rule in body {
        for field in [rule.rule_id.as_str(), rule.text.as_str()] {
            hasher.update((field.len() as u64).to_le_bytes());
            hasher.update(field.as_bytes());
        }
        hasher.update((rule.tags.len() as u64).to_le_bytes());
        for tag in &rule.tags {
            hasher.update((tag.len() as u64).to_le_bytes());
            hasher.update(tag.as_bytes());
        }
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum Violation {
    DanglingAnchor { anchor: RuleId },
    DuplicateId { rule_id: RuleId },
    EmptyText { rule_id: RuleId },
    DigestMismatch { recorded: String, computed: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DanglingAnchor { anchor } => write!(f, "dangling anchor {anchor}"),
            Violation::DuplicateId { rule_id } => write!(f, "duplicate id {rule_id}"),
            Violation::EmptyText { rule_id } => write!(f, "empty text in {rule_id}"),
            Violation::DigestMismatch { recorded, computed } => {
                write!(f, "digest mismatch: recorded {recorded}, computed {computed}")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return f.write_str("ok");
        }
        let parts: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        f.write_str(&parts.join("; "))
    }
}

/// Lists every structural violation; never fails.
pub fn validate_skill(skill: &Skill) -> ValidationReport {
    let mut violations = Vec::new();
    let mut seen = HashSet::new();
    for rule in &skill.body {
        if !seen.insert(&rule.rule_id) {
            violations.push(Violation::DuplicateId {
                rule_id: rule.rule_id.clone(),
            });
        }
        if rule.text.trim().is_empty() {
            violations.push(Violation::EmptyText {
                rule_id: rule.rule_id.clone(),
            });
        }
    }
    for item in &skill.appendix {
        if skill.live_rule(&item.anchor_rule_id).is_none() {
            violations.push(Violation::DanglingAnchor {
                anchor: item.anchor_rule_id.clone(),
            });
        }
    }
    let computed = body_digest(&skill.body);
    if computed != skill.body_digest {
        violations.push(Violation::DigestMismatch {
            recorded: skill.body_digest.clone(),
            computed,
        });
    }
    ValidationReport { violations }
}

/// Prompt-facing rendering. Tombstoned rules are omitted.
pub fn render_skill_text(skill: &Skill) -> Result<String, SkillError> {
    let report = validate_skill(skill);
    if !report.is_ok() {
        return Err(SkillError::InvalidSkill(report));
    }
    let mut out = format!("SKILL version {}\n\nBODY\n", skill.version);
    for rule in skill.live_rules() {
        out.push_str(&format!("[{}] {}\n", rule.rule_id, rule.text));
    }
    out.push_str("\nAPPENDIX\n");
    for item in &skill.appendix {
        out.push_str(&format!("- (see {}) {}\n", item.anchor_rule_id, item.reminder));
    }
    Ok(out)
}
