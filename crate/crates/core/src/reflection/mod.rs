//! Typed reflection: up to `K` records per finished trajectory.
//!
//! Successful episodes may only yield DISCOVERY or OPTIMIZATION records,
//! failed ones only SKILL_DEFECT or EXECUTION_LAPSE. Every record except a
//! DISCOVERY names a live body rule.

mod oracle;
mod record;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Deserialize;
use thiserror::Error;

use crate::gateway::{excerpt, strip_fence, templates, CallSite, Gateway, GatewayError};
use crate::microworld::sample_task;
use crate::skill::{render_skill_text, RuleId, Skill};
use crate::trajectory::Trajectory;

pub use oracle::{achieved_kinds, oracle_findings, without_look_first};
pub use record::{validate_reflection, Evidence, ReflectionRecord, ReflectionType, ReflectionViolation};

#[derive(Debug, Error)]
pub enum ReflectionError {
    #[error("trajectory {0} has no execution trace sidecar")]
    MissingSidecar(String),
    #[error("trajectory {0} was not produced by the built-in micro-world")]
    NoGroundTruth(String),
    #[error("reflection provider: {0}")]
    Provider(#[from] GatewayError),
}

pub enum ReflectionProvider {
    Oracle,
    Remote(Arc<Gateway>),
}

/// Scripted oracle over trajectory + sidecar + reference solution.
pub fn oracle_reflect(traj: &Trajectory, skill: &Skill, k: usize) -> Result<Vec<ReflectionRecord>, ReflectionError> {
    if !traj.has_sidecar() {
        return Err(ReflectionError::MissingSidecar(traj.trajectory_id.clone()));
    }
    if traj.task.env_spec.environment != "microworld" {
        return Err(ReflectionError::NoGroundTruth(traj.trajectory_id.clone()));
    }
    let spec = &traj.task.env_spec;
    let (_, _, gt) = sample_task(spec.family, spec.seed);
    Ok(oracle_findings(traj, skill, &gt, k))
}

pub fn reflect(
    provider: &ReflectionProvider,
    traj: &Trajectory,
    skill: &Skill,
    k: usize,
) -> Result<Vec<ReflectionRecord>, ReflectionError> {
    let records = match provider {
        ReflectionProvider::Oracle => oracle_reflect(traj, skill, k)?,
        ReflectionProvider::Remote(gateway) => match remote_reflect(gateway, traj, skill, k) {
            Ok(records) => records,
            Err(GatewayError::ExhaustedRetries { attempts, last_problem }) => {
                log::warn!(
                    "{}: no valid reflection after {attempts} attempts ({last_problem}); m=0",
                    traj.trajectory_id
                );
                Vec::new()
            }
            Err(e) => return Err(e.into()),
        },
    };
    // Belt and braces: nothing invalid leaves this function.
    Ok(records
        .into_iter()
        .take(k)
        .filter(|r| {
            let v = validate_reflection(r, traj, skill);
            if !v.is_empty() {
                log::warn!("dropping invalid reflection {}: {:?}", r.record_id, v);
            }
            v.is_empty()
        })
        .collect())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvidence {
    start: usize,
    end: usize,
    #[serde(default)]
    excerpt: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    target: Option<String>,
    evidence: RawEvidence,
    directive: String,
}

/// Parses and fully validates a model reply; any problem rejects the whole reply.
pub fn parse_reflection_reply(
    raw: &str,
    traj: &Trajectory,
    skill: &Skill,
    k: usize,
) -> Result<Vec<ReflectionRecord>, String> {
    let items: Vec<RawRecord> = serde_json::from_str(strip_fence(raw)).map_err(|e| format!("not a reflection array: {e}"))?;
    if items.len() > k {
        return Err(format!("{} reflections returned, at most {k} allowed", items.len()));
    }
    let mut out = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        let kind = ReflectionType::parse(&item.kind).ok_or_else(|| format!("unknown reflection type {:?}", item.kind))?;
        let record = ReflectionRecord {
            record_id: format!("{}/rf{}", traj.trajectory_id, i + 1),
            kind,
            evidence: Evidence {
                start: item.evidence.start,
                end: item.evidence.end,
                excerpt: item.evidence.excerpt,
            },
            directive: item.directive.trim().to_string(),
            target: item.target.filter(|t| !t.trim().is_empty()).map(|t| RuleId(t.trim().to_string())),
            source_trajectory: traj.trajectory_id.clone(),
            skill_version_seen: skill.version,
        };
        let violations = validate_reflection(&record, traj, skill);
        if let Some(v) = violations.first() {
            return Err(format!("reflection {}: {v}", i + 1));
        }
        out.push(record);
    }
    Ok(out)
}

fn remote_reflect(
    gateway: &Gateway,
    traj: &Trajectory,
    skill: &Skill,
    k: usize,
) -> Result<Vec<ReflectionRecord>, GatewayError> {
    let vars = BTreeMap::from([
        ("skill", render_skill_text(skill).unwrap_or_default()),
        ("trajectory_id", traj.trajectory_id.clone()),
        ("skill_version", skill.version.to_string()),
        ("outcome", if traj.success { "success (r=1)" } else { "failure (r=0)" }.to_string()),
        ("instruction", traj.task.instruction.clone()),
        ("excerpt", excerpt(traj)),
        ("max_records", k.to_string()),
    ]);
    gateway.complete_structured(CallSite::Reflection, templates::REFLECT, &vars, |raw| {
        parse_reflection_reply(raw, traj, skill, k)
    })
}
