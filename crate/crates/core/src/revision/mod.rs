//! Turns a full reflection buffer into the next skill version.
//!
//! Order is fixed: partition, consolidate, revise the body, then update the
//! appendix against the already revised body. Lapse records only ever reach
//! the appendix.

mod appendix;
mod body;
mod consolidate;
mod remote;
mod unaware;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Gateway, GatewayError};
use crate::reflection::{validate_reflection, ReflectionRecord, ReflectionType, ReflectionViolation};
use crate::skill::{body_digest, RuleId, Skill, SkillRule};
use crate::trajectory::Trajectory;

pub use appendix::{reminder_for, update_appendix};
pub use body::revise_body;
pub use consolidate::consolidate;
pub use remote::{parse_appendix_reply, parse_body_reply, parse_consolidation_reply};
pub use unaware::{rewrite_skill, summarize, TrajectorySummary};

pub const DEFAULT_INTERVAL: usize = 8;

/// Reflections waiting for the next revision, in arrival order.
#[derive(Debug, Clone)]
pub struct ReflectionBuffer {
    records: Vec<ReflectionRecord>,
    capacity: usize,
}

impl ReflectionBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "revision interval must be at least 1");
        Self {
            records: Vec::new(),
            capacity,
        }
    }

    /// Validates `record` against its source and the current skill before storing it.
    pub fn push(
        &mut self,
        record: ReflectionRecord,
        traj: &Trajectory,
        skill: &Skill,
    ) -> Result<(), Vec<ReflectionViolation>> {
        let violations = validate_reflection(&record, traj, skill);
        if !violations.is_empty() {
            return Err(violations);
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[ReflectionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn ready(&self) -> bool {
        self.records.len() >= self.capacity
    }

    pub fn drain(&mut self) -> Vec<ReflectionRecord> {
        std::mem::take(&mut self.records)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Partition {
    pub discovery: Vec<ReflectionRecord>,
    pub optimization: Vec<ReflectionRecord>,
    pub defect: Vec<ReflectionRecord>,
    pub lapse: Vec<ReflectionRecord>,
}

impl Partition {
    pub fn of(&self, kind: ReflectionType) -> &[ReflectionRecord] {
        match kind {
            ReflectionType::Discovery => &self.discovery,
            ReflectionType::Optimization => &self.optimization,
            ReflectionType::SkillDefect => &self.defect,
            ReflectionType::ExecutionLapse => &self.lapse,
        }
    }
}

pub fn partition_by_type(records: &[ReflectionRecord]) -> Partition {
    let mut p = Partition::default();
    for r in records {
        let list = match r.kind {
            ReflectionType::Discovery => &mut p.discovery,
            ReflectionType::Optimization => &mut p.optimization,
            ReflectionType::SkillDefect => &mut p.defect,
            ReflectionType::ExecutionLapse => &mut p.lapse,
        };
        list.push(r.clone());
    }
    p
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Optimize,
    Fix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Addition {
    pub text: String,
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Edit {
    pub target: RuleId,
    pub text: String,
    pub kind: EditKind,
    pub provenance: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsolidatedRevisionSet {
    pub additions: Vec<Addition>,
    pub edits: Vec<Edit>,
}

impl ConsolidatedRevisionSet {
    pub fn is_empty(&self) -> bool {
        self.additions.is_empty() && self.edits.is_empty()
    }

    pub fn targets(&self) -> impl Iterator<Item = &RuleId> {
        self.edits.iter().map(|e| &e.target)
    }
}

/// A record (or group) dropped during revision, kept for the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Discard {
    pub record_ids: Vec<String>,
    pub reason: String,
}

impl Discard {
    fn new(ids: impl IntoIterator<Item = impl Into<String>>, reason: impl Into<String>) -> Self {
        let discard = Discard {
            record_ids: ids.into_iter().map(Into::into).collect(),
            reason: reason.into(),
        };
        log::info!("discarded {:?}: {}", discard.record_ids, discard.reason);
        discard
    }
}

/// Per-rule comparison of two bodies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "change", rename_all = "snake_case")]
pub enum RuleDiff {
    Added { rule_id: RuleId, text: String },
    Edited { rule_id: RuleId, before: String, after: String },
    Removed { rule_id: RuleId, text: String },
}

/// Rules whose record differs between `old` and `new`, matched by id.
pub fn diff_bodies(old: &[SkillRule], new: &[SkillRule]) -> Vec<RuleDiff> {
    let mut out = Vec::new();
    for rule in old {
        match new.iter().find(|r| r.rule_id == rule.rule_id) {
            None => out.push(RuleDiff::Removed {
                rule_id: rule.rule_id.clone(),
                text: rule.text.clone(),
            }),
            Some(n) if n != rule => out.push(RuleDiff::Edited {
                rule_id: rule.rule_id.clone(),
                before: rule.text.clone(),
                after: n.text.clone(),
            }),
            Some(_) => {}
        }
    }
    for rule in new {
        if !old.iter().any(|r| r.rule_id == rule.rule_id) {
            out.push(RuleDiff::Added {
                rule_id: rule.rule_id.clone(),
                text: rule.text.clone(),
            });
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum RevisionError {
    #[error("remote editor broke the revision contract: {0}")]
    ContractViolation(String),
    #[error("revision provider: {0}")]
    Provider(#[from] GatewayError),
}

pub enum RevisionProvider {
    Scripted,
    Remote(Arc<Gateway>),
}

#[derive(Debug, Clone)]
pub struct RevisionOutcome {
    pub skill: Skill,
    pub consolidated: ConsolidatedRevisionSet,
    pub discards: Vec<Discard>,
    pub diff: Vec<RuleDiff>,
    pub digest_before_appendix: String,
    pub digest_after_appendix: String,
}

/// One full revision of `skill` from the drained buffer contents.
pub fn revise(
    provider: &RevisionProvider,
    skill: &Skill,
    records: &[ReflectionRecord],
) -> Result<RevisionOutcome, RevisionError> {
    let parts = partition_by_type(records);
    let version = skill.version + 1;
    let (consolidated, mut discards) = match provider {
        RevisionProvider::Scripted => consolidate(skill, &parts.discovery, &parts.optimization, &parts.defect),
        RevisionProvider::Remote(g) => remote::consolidate(g, skill, &parts)?,
    };
    let (body, next_rule_id) = match provider {
        RevisionProvider::Scripted => revise_body(skill, &consolidated),
        RevisionProvider::Remote(g) => remote::revise_body(g, skill, &consolidated)?,
    };
    let digest_before_appendix = body_digest(&body);
    let (appendix, lapse_discards) = match provider {
        RevisionProvider::Scripted => update_appendix(&body, &skill.appendix, &parts.lapse, version),
        RevisionProvider::Remote(g) => remote::update_appendix(g, &body, &skill.appendix, &parts.lapse, version)?,
    };
    discards.extend(lapse_discards);
    let digest_after_appendix = body_digest(&body);
    assert_eq!(
        digest_before_appendix, digest_after_appendix,
        "appendix update touched the body"
    );
    let diff = diff_bodies(&skill.body, &body);
    let next = Skill::from_parts(version, body, appendix, next_rule_id);
    let report = next.validate();
    if !report.is_ok() {
        return Err(RevisionError::ContractViolation(report.to_string()));
    }
    Ok(RevisionOutcome {
        skill: next,
        consolidated,
        discards,
        diff,
        digest_before_appendix,
        digest_after_appendix,
    })
}
