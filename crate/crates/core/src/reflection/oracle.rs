//! Scripted reflection from the trajectory, its execution trace and the
//! task's reference solution. Checks run in priority order
//! defect > lapse > discovery > optimization; the first `k` findings are kept.

use std::collections::BTreeSet;

use super::record::{Evidence, ReflectionRecord, ReflectionType};
use crate::catalog::{family_kinds, reference_text};
use crate::executor::{kind_of, treatment_of, Belief, GoalView};
use crate::microworld::{appliance_for, GroundTruthProcedure, SubGoal, LAMP_LOCATION};
use crate::skill::{RuleId, Skill};
use crate::trajectory::{history_at, ActionStatus, Trajectory};
use crate::vocab::{RuleAction, RuleKind, RulePredicate};

const LOOK_FIRST_PHRASES: [&str; 4] = [
    ", looking around first",
    " looking around first",
    ", look around first",
    " look around first",
];

struct Finding {
    kind: ReflectionType,
    target: Option<RuleId>,
    step: usize,
    directive: String,
}

/// Location the reference solution uses for a located sub-goal class.
fn reference_location(kind: RuleKind, gt: &GroundTruthProcedure) -> Option<&'static str> {
    let used = gt.subgoals.iter().any(|s| match (s, kind) {
        (SubGoal::Treat { treatment, .. }, k) => k.treatment() == Some(*treatment),
        (SubGoal::Examine { .. }, RuleKind::Examine) => true,
        _ => false,
    });
    if !used {
        return None;
    }
    match kind {
        RuleKind::Examine => Some(LAMP_LOCATION),
        k => k.treatment().map(appliance_for),
    }
}

fn contradicts(pred: &RulePredicate, gt: &GroundTruthProcedure) -> bool {
    match (pred.location(), reference_location(pred.kind(), gt)) {
        (Some(at), Some(expected)) => at != expected,
        _ => false,
    }
}

/// Rule text with any look-around-first clause removed.
pub fn without_look_first(text: &str) -> String {
    let mut out = text.to_string();
    for phrase in LOOK_FIRST_PHRASES {
        out = out.replace(phrase, "");
    }
    out.trim().to_string()
}

/// Sub-goal classes accomplished by accepted actions, with the achieving step.
pub fn achieved_kinds(traj: &Trajectory) -> Vec<(RuleKind, usize)> {
    let Some(goal) = GoalView::parse(&traj.task.instruction) else {
        return Vec::new();
    };
    let mut out: Vec<(RuleKind, usize)> = Vec::new();
    let mut delivered = BTreeSet::new();
    let note = |k: RuleKind, step: usize, out: &mut Vec<(RuleKind, usize)>| {
        if !out.iter().any(|(seen, _)| *seen == k) {
            out.push((k, step));
        }
    };
    for step in &traj.steps {
        if step.action_status != ActionStatus::Accepted {
            continue;
        }
        let a = step.action.as_str();
        let object_after = |verb: &str| a.strip_prefix(verb).map(str::trim);
        if a.starts_with("go to ") {
            note(RuleKind::Search, step.index, &mut out);
        } else if a.starts_with("open ") {
            note(RuleKind::Open, step.index, &mut out);
        } else if let Some(rest) = object_after("take ") {
            let object = rest.split(" from ").next().unwrap_or(rest);
            if goal.is_target(object) {
                note(RuleKind::Take, step.index, &mut out);
            }
        } else if let Some(rest) = object_after("put ") {
            let Some((object, to)) = rest.split_once(" in/on ") else { continue };
            if !goal.is_target(kind_of(object)) {
                note(RuleKind::Drop, step.index, &mut out);
            } else if goal.destination.as_deref() == Some(to.trim()) {
                note(RuleKind::Place, step.index, &mut out);
                delivered.insert(object.to_string());
                if delivered.len() == 2 {
                    note(RuleKind::Second, step.index, &mut out);
                }
            }
        } else if let Some(t) = treatment_of(a) {
            let kind = RuleKind::ALL.into_iter().find(|k| k.treatment() == Some(t)).unwrap();
            note(kind, step.index, &mut out);
        } else if a.starts_with("examine ") {
            let at = history_at(traj, step.index)
                .ok()
                .and_then(|h| Belief::from_history(&h).at);
            if at.as_deref() == Some(LAMP_LOCATION) {
                note(RuleKind::Examine, step.index, &mut out);
            }
        }
    }
    out
}

fn excerpt(traj: &Trajectory, index: usize) -> String {
    let step = traj.step(index).expect("index within trajectory");
    let status = match step.action_status {
        ActionStatus::Accepted => "accepted",
        ActionStatus::RejectedByEnv => "rejected",
    };
    let result = traj
        .step(index + 1)
        .map(|s| s.observation.as_str())
        .unwrap_or(if traj.success { "task complete" } else { "episode over" });
    format!("step {index}: {} ({status}) -> {result}", step.action)
}

/// Deterministic findings in priority order; callers keep the first `k`.
fn findings(traj: &Trajectory, skill: &Skill, gt: &GroundTruthProcedure) -> Vec<Finding> {
    let traces = traj.seed_record.sidecar.as_deref().unwrap_or(&[]);
    let followed = || {
        traj.steps.iter().zip(traces).filter_map(|(step, trace)| {
            let id = trace.applied_rule_ids.first()?;
            let rule = skill.live_rule(id)?;
            Some((step, trace, rule))
        })
    };
    let mut out = Vec::new();
    if !traj.success {
        for (step, trace, rule) in followed() {
            if trace.lapse || out.iter().any(|f: &Finding| f.target.as_ref() == Some(&rule.rule_id)) {
                continue;
            }
            let Some(pred) = rule.predicate() else { continue };
            let rejected = step.action_status == ActionStatus::RejectedByEnv;
            if !(rejected || contradicts(&pred, gt)) {
                continue;
            }
            let fix = reference_text(pred.kind());
            if fix != rule.text {
                out.push(Finding {
                    kind: ReflectionType::SkillDefect,
                    target: Some(rule.rule_id.clone()),
                    step: step.index,
                    directive: fix.to_string(),
                });
            }
        }
        for (step, trace, rule) in followed() {
            let seen = out.iter().any(|f: &Finding| f.target.as_ref() == Some(&rule.rule_id));
            if trace.lapse && !seen {
                out.push(Finding {
                    kind: ReflectionType::ExecutionLapse,
                    target: Some(rule.rule_id.clone()),
                    step: step.index,
                    directive: format!("follow this rule exactly: {}", rule.text),
                });
            }
        }
        return out;
    }

    let achieved = achieved_kinds(traj);
    let covered: BTreeSet<RuleKind> = skill
        .live_rules()
        .filter_map(|r| r.predicate())
        .map(|p| p.kind())
        .collect();
    for kind in family_kinds(traj.task.env_spec.family) {
        if covered.contains(&kind) {
            continue;
        }
        if let Some((_, step)) = achieved.iter().find(|(k, _)| *k == kind) {
            out.push(Finding {
                kind: ReflectionType::Discovery,
                target: None,
                step: *step,
                directive: reference_text(kind).to_string(),
            });
        }
    }

    let used: BTreeSet<&RuleId> = followed()
        .filter(|(_, trace, _)| !trace.lapse)
        .map(|(_, _, rule)| &rule.rule_id)
        .collect();
    for rule in skill.live_rules().filter(|r| used.contains(&r.rule_id)) {
        let Some(pred) = rule.predicate() else { continue };
        if !pred.look_first {
            continue;
        }
        let shorter = achieved.iter().find(|(k, step)| {
            *k == pred.kind()
                && located_as(traj, *step, &pred)
                && traj.step(step - 1).is_none_or(|prev| prev.action != "look")
        });
        if let Some((_, step)) = shorter {
            let text = without_look_first(&rule.text);
            if RulePredicate::parse(&text).is_some_and(|p| p.same_method(&pred) && !p.look_first) {
                out.push(Finding {
                    kind: ReflectionType::Optimization,
                    target: Some(rule.rule_id.clone()),
                    step: *step,
                    directive: text,
                });
            }
        }
    }
    out
}

/// Whether step `index` happened at the location `pred` names.
fn located_as(traj: &Trajectory, index: usize, pred: &RulePredicate) -> bool {
    let at = history_at(traj, index).ok().and_then(|h| Belief::from_history(&h).at);
    match &pred.action {
        RuleAction::Treat { at: place, .. } | RuleAction::Examine { at: place } => at.as_deref() == Some(place),
        _ => true,
    }
}

pub fn oracle_findings(
    traj: &Trajectory,
    skill: &Skill,
    gt: &GroundTruthProcedure,
    k: usize,
) -> Vec<ReflectionRecord> {
    findings(traj, skill, gt)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, f)| ReflectionRecord {
            record_id: format!("{}/rf{}", traj.trajectory_id, i + 1),
            kind: f.kind,
            evidence: Evidence {
                start: f.step,
                end: f.step,
                excerpt: excerpt(traj, f.step),
            },
            directive: f.directive,
            target: f.target,
            source_trajectory: traj.trajectory_id.clone(),
            skill_version_seen: skill.version,
        })
        .collect()
}
