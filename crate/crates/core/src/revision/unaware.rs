//! Skill-unaware revision: untyped trajectory summaries and a whole-skill
//! rewrite that does not know which rules the evidence implicates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RevisionError;
use crate::catalog::{family_kinds, reference_text};
use crate::gateway::{strip_fence, templates, CallSite, Gateway, GatewayError};
use crate::microworld::TaskFamily;
use crate::skill::{render_skill_text, OriginKind, RuleId, Skill, SkillRule};
use crate::trajectory::Trajectory;
use crate::vocab::normalize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub trajectory_id: String,
    pub family: TaskFamily,
    pub success: bool,
    pub text: String,
}

pub fn summarize(traj: &Trajectory) -> TrajectorySummary {
    let actions: Vec<&str> = traj
        .steps
        .iter()
        .map(|s| s.action.as_str())
        .filter(|a| !a.is_empty())
        .collect();
    TrajectorySummary {
        trajectory_id: traj.trajectory_id.clone(),
        family: traj.task.env_spec.family,
        success: traj.success,
        text: format!(
            "{} ({}, {} steps): {}",
            traj.task.instruction,
            if traj.success { "succeeded" } else { "failed" },
            traj.len(),
            actions.join("; ")
        ),
    }
}

fn rewritten(version: u64, texts: Vec<String>, first_id: u64, provenance: &[String]) -> Skill {
    let mut next = first_id;
    let body = texts
        .into_iter()
        .map(|text| {
            let mut rule = SkillRule::new(RuleId::from_seq(next), text, []);
            rule.origin = OriginKind::Rewrite;
            rule.provenance = provenance.to_vec();
            next += 1;
            rule
        })
        .collect();
    Skill::from_parts(version, body, Vec::new(), next)
}

/// Scripted rewrite: every live rule re-emitted under a fresh id, then the
/// reference rules of the summarized families that are not already present.
fn scripted(skill: &Skill, summaries: &[TrajectorySummary]) -> Vec<String> {
    let mut texts: Vec<String> = skill.live_rules().map(|r| normalize(&r.text)).collect();
    for s in summaries {
        for kind in family_kinds(s.family) {
            let text = reference_text(kind).to_string();
            if !texts.contains(&text) {
                texts.push(text);
            }
        }
    }
    texts
}

fn parse_rewrite_reply(raw: &str) -> Result<Vec<String>, String> {
    let texts: Vec<String> = serde_json::from_str(strip_fence(raw)).map_err(|e| format!("not a list of rules: {e}"))?;
    let texts: Vec<String> = texts.into_iter().map(|t| t.trim().to_string()).collect();
    if texts.is_empty() || texts.iter().any(|t| t.is_empty()) {
        return Err("rules must be non-empty strings".into());
    }
    Ok(texts)
}

pub fn rewrite_skill(
    gateway: Option<&Gateway>,
    skill: &Skill,
    summaries: &[TrajectorySummary],
) -> Result<Skill, RevisionError> {
    let texts = match gateway {
        None => scripted(skill, summaries),
        Some(g) => {
            let lines: Vec<String> = summaries.iter().map(|s| format!("- {}", s.text)).collect();
            let vars = BTreeMap::from([
                ("skill", render_skill_text(skill).unwrap_or_default()),
                ("summaries", lines.join("\n")),
            ]);
            g.complete_structured(CallSite::Rewrite, templates::REWRITE, &vars, parse_rewrite_reply)
                .map_err(|e| match e {
                    GatewayError::ExhaustedRetries { last_problem, .. } => {
                        RevisionError::ContractViolation(last_problem)
                    }
                    other => RevisionError::Provider(other),
                })?
        }
    };
    let provenance: Vec<String> = summaries.iter().map(|s| s.trajectory_id.clone()).collect();
    Ok(rewritten(skill.version + 1, texts, skill.next_rule_id, &provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{InitialSkill, DEFECT_TEXT};
    use crate::vocab::RuleKind;

    fn summary(family: TaskFamily) -> TrajectorySummary {
        TrajectorySummary {
            trajectory_id: format!("t-{}", family.as_str()),
            family,
            success: false,
            text: String::new(),
        }
    }

    #[test]
    fn rewrite_renews_every_id_and_keeps_the_defect_first() {
        let skill = Skill::initial(InitialSkill::Seeded.rules()).unwrap();
        let next = rewrite_skill(None, &skill, &[summary(TaskFamily::HeatPut), summary(TaskFamily::CoolPut)]).unwrap();
        assert_eq!(next.version, 1);
        assert!(next.appendix.is_empty());
        assert!(next.body.iter().all(|r| skill.rule(&r.rule_id).is_none()));
        let heat: Vec<&str> = next
            .live_rules()
            .filter(|r| r.predicate().map(|p| p.kind()) == Some(RuleKind::Heat))
            .map(|r| r.text.as_str())
            .collect();
        assert_eq!(heat, vec![DEFECT_TEXT, reference_text(RuleKind::Heat)]);
        assert!(next.live_rules().any(|r| r.text == reference_text(RuleKind::Cool)));
        assert!(next.validate().is_ok());
    }

    #[test]
    fn rewrite_reply_parsing() {
        assert_eq!(parse_rewrite_reply("[\"a\", \" b \"]"), Ok(vec!["a".to_string(), "b".to_string()]));
        assert!(parse_rewrite_reply("[]").is_err());
        assert!(parse_rewrite_reply("[\"\"]").is_err());
        assert!(parse_rewrite_reply("rules: a").is_err());
    }
}
