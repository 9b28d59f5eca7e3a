use std::fmt;

use serde::{Deserialize, Serialize};

use crate::skill::{RuleId, Skill};
use crate::trajectory::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ReflectionType {
    Discovery,
    Optimization,
    SkillDefect,
    ExecutionLapse,
}

impl ReflectionType {
    pub const ALL: [ReflectionType; 4] = [
        ReflectionType::Discovery,
        ReflectionType::Optimization,
        ReflectionType::SkillDefect,
        ReflectionType::ExecutionLapse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ReflectionType::Discovery => "DISCOVERY",
            ReflectionType::Optimization => "OPTIMIZATION",
            ReflectionType::SkillDefect => "SKILL_DEFECT",
            ReflectionType::ExecutionLapse => "EXECUTION_LAPSE",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    /// Outcome `r` the type requires.
    pub fn requires_success(self) -> bool {
        matches!(self, ReflectionType::Discovery | ReflectionType::Optimization)
    }

    pub fn needs_target(self) -> bool {
        self != ReflectionType::Discovery
    }
}

impl fmt::Display for ReflectionType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    /// Inclusive 1-based step range.
    pub start: usize,
    pub end: usize,
    pub excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReflectionRecord {
    pub record_id: String,
    #[serde(rename = "type")]
    pub kind: ReflectionType,
    pub evidence: Evidence,
    pub directive: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<RuleId>,
    pub source_trajectory: String,
    pub skill_version_seen: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum ReflectionViolation {
    TypeOutcomeMismatch { kind: ReflectionType, success: bool },
    UnexpectedTarget { target: RuleId },
    MissingTarget,
    DanglingTarget { target: RuleId },
    EvidenceOutOfRange { start: usize, end: usize, len: usize },
    EmptyDirective,
    WrongSource { expected: String, got: String },
    WrongSkillVersion { expected: u64, got: u64 },
}

impl fmt::Display for ReflectionViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::TypeOutcomeMismatch { kind, success } => {
                write!(f, "type/outcome mismatch: {kind} on r={}", u8::from(*success))
            }
            Self::UnexpectedTarget { target } => write!(f, "unexpected target {target}"),
            Self::MissingTarget => f.write_str("missing target"),
            Self::DanglingTarget { target } => write!(f, "dangling target {target}"),
            Self::EvidenceOutOfRange { start, end, len } => {
                write!(f, "evidence range {start}..={end} outside 1..={len}")
            }
            Self::EmptyDirective => f.write_str("empty directive"),
            Self::WrongSource { expected, got } => {
                write!(f, "record cites trajectory {got}, expected {expected}")
            }
            Self::WrongSkillVersion { expected, got } => {
                write!(f, "record cites skill version {got}, expected {expected}")
            }
        }
    }
}

/// Every violation of the typing, targeting and evidence constraints.
/// Empty means the record is valid.
pub fn validate_reflection(record: &ReflectionRecord, traj: &Trajectory, skill: &Skill) -> Vec<ReflectionViolation> {
    let mut out = Vec::new();
    if record.kind.requires_success() != traj.success {
        out.push(ReflectionViolation::TypeOutcomeMismatch {
            kind: record.kind,
            success: traj.success,
        });
    }
    match (&record.target, record.kind.needs_target()) {
        (Some(t), false) => out.push(ReflectionViolation::UnexpectedTarget { target: t.clone() }),
        (None, true) => out.push(ReflectionViolation::MissingTarget),
        (Some(t), true) if skill.live_rule(t).is_none() => {
            out.push(ReflectionViolation::DanglingTarget { target: t.clone() })
        }
        _ => {}
    }
    let ev = &record.evidence;
    if ev.start < 1 || ev.start > ev.end || ev.end > traj.len() {
        out.push(ReflectionViolation::EvidenceOutOfRange {
            start: ev.start,
            end: ev.end,
            len: traj.len(),
        });
    }
    if record.directive.trim().is_empty() {
        out.push(ReflectionViolation::EmptyDirective);
    }
    if record.source_trajectory != traj.trajectory_id {
        out.push(ReflectionViolation::WrongSource {
            expected: traj.trajectory_id.clone(),
            got: record.source_trajectory.clone(),
        });
    }
    if record.skill_version_seen != skill.version {
        out.push(ReflectionViolation::WrongSkillVersion {
            expected: skill.version,
            got: record.skill_version_seen,
        });
    }
    out
}
