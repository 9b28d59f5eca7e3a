//! Model-backed revision steps. Every reply is checked against the same
//! constraints the scripted path satisfies by construction.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use serde_json::json;

use super::{
    appendix, body, consolidate as scripted, Addition, ConsolidatedRevisionSet, Discard, Edit, EditKind, Partition,
    RevisionError,
};
use crate::gateway::{strip_fence, templates, CallSite, Gateway, GatewayError};
use crate::reflection::ReflectionRecord;
use crate::skill::{AppendixItem, RuleId, Skill, SkillRule};
use crate::vocab::{normalize, RulePredicate};

fn contract(e: GatewayError) -> RevisionError {
    match e {
        GatewayError::ExhaustedRetries { last_problem, .. } => RevisionError::ContractViolation(last_problem),
        other => RevisionError::Provider(other),
    }
}

fn body_json(body: &[SkillRule]) -> String {
    let rules: Vec<_> = body
        .iter()
        .filter(|r| !r.is_tombstone())
        .map(|r| json!({"rule_id": r.rule_id, "text": r.text}))
        .collect();
    serde_json::to_string_pretty(&rules).expect("body serializes")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSet {
    #[serde(default)]
    additions: Vec<Addition>,
    #[serde(default)]
    edits: Vec<Edit>,
}

pub fn parse_consolidation_reply(raw: &str, skill: &Skill, parts: &Partition) -> Result<ConsolidatedRevisionSet, String> {
    let set: RawSet = serde_json::from_str(strip_fence(raw)).map_err(|e| format!("not a revision set: {e}"))?;
    let (reference, _) = scripted(skill, &parts.discovery, &parts.optimization, &parts.defect);
    let of = |records: &[ReflectionRecord]| -> BTreeMap<String, Option<RuleId>> {
        records.iter().map(|r| (r.record_id.clone(), r.target.clone())).collect()
    };
    let (disc, opt, def) = (of(&parts.discovery), of(&parts.optimization), of(&parts.defect));
    let mut used = BTreeSet::new();
    let mut claim = |ids: &[String], pool: &BTreeMap<String, Option<RuleId>>, target: Option<&RuleId>| {
        if ids.is_empty() {
            return Err("entry without provenance".to_string());
        }
        for id in ids {
            match pool.get(id) {
                Some(t) if t.as_ref() == target => {}
                _ => return Err(format!("provenance {id} does not support this entry")),
            }
            if !used.insert(id.clone()) {
                return Err(format!("record {id} used twice"));
            }
        }
        Ok(())
    };

    let existing: Vec<RulePredicate> = skill.live_rules().filter_map(|r| r.predicate()).collect();
    let mut texts = BTreeSet::new();
    for a in &set.additions {
        let text = a.text.trim();
        if text.is_empty() {
            return Err("empty addition".into());
        }
        if !texts.insert(text.to_string()) {
            return Err(format!("duplicate addition {text:?}"));
        }
        if RulePredicate::parse(text).is_some_and(|p| existing.contains(&p)) {
            return Err(format!("addition {text:?} repeats an existing rule"));
        }
        claim(&a.provenance, &disc, None)?;
    }
    let mut targets = BTreeSet::new();
    for e in &set.edits {
        let rule = skill
            .live_rule(&e.target)
            .ok_or_else(|| format!("edit target {} is not a live rule", e.target))?;
        if !targets.insert(e.target.clone()) {
            return Err(format!("more than one edit on {}", e.target));
        }
        if e.text.trim().is_empty() || e.text.trim() == rule.text {
            return Err(format!("edit on {} changes nothing", e.target));
        }
        let expected = reference.edits.iter().find(|r| r.target == e.target);
        match expected {
            None => return Err(format!("{} has no consistent revision signal", e.target)),
            Some(r) if r.kind != e.kind => {
                return Err(format!("edit on {} must be of kind {:?}", e.target, r.kind));
            }
            Some(_) => {}
        }
        let pool = if e.kind == EditKind::Fix { &def } else { &opt };
        claim(&e.provenance, pool, Some(&e.target))?;
    }
    Ok(ConsolidatedRevisionSet {
        additions: set
            .additions
            .into_iter()
            .map(|a| Addition {
                text: a.text.trim().to_string(),
                provenance: a.provenance,
            })
            .collect(),
        edits: set
            .edits
            .into_iter()
            .map(|e| Edit {
                text: e.text.trim().to_string(),
                ..e
            })
            .collect(),
    })
}

pub fn consolidate(
    gateway: &Gateway,
    skill: &Skill,
    parts: &Partition,
) -> Result<(ConsolidatedRevisionSet, Vec<Discard>), RevisionError> {
    let inputs: Vec<&ReflectionRecord> = parts
        .discovery
        .iter()
        .chain(&parts.optimization)
        .chain(&parts.defect)
        .collect();
    if inputs.is_empty() {
        return Ok(Default::default());
    }
    let records: Vec<_> = inputs
        .iter()
        .map(|r| json!({"record_id": r.record_id, "type": r.kind, "target": r.target, "directive": r.directive, "source": r.source_trajectory}))
        .collect();
    let vars = BTreeMap::from([
        ("body", body_json(&skill.body)),
        ("records", serde_json::to_string_pretty(&records).expect("records serialize")),
    ]);
    let set = gateway
        .complete_structured(CallSite::Consolidation, templates::CONSOLIDATE, &vars, |raw| {
            parse_consolidation_reply(raw, skill, parts)
        })
        .map_err(contract)?;
    let used: BTreeSet<&String> = set
        .additions
        .iter()
        .flat_map(|a| &a.provenance)
        .chain(set.edits.iter().flat_map(|e| &e.provenance))
        .collect();
    let discards = inputs
        .iter()
        .filter(|r| !used.contains(&r.record_id))
        .map(|r| Discard::new([&r.record_id], "left out by consolidation"))
        .collect();
    Ok((set, discards))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    rule_id: Option<String>,
    text: String,
}

/// Checks a full revised body against the edit contract and returns it.
pub fn parse_body_reply(raw: &str, skill: &Skill, set: &ConsolidatedRevisionSet) -> Result<(Vec<SkillRule>, u64), String> {
    let rules: Vec<RawRule> = serde_json::from_str(strip_fence(raw)).map_err(|e| format!("not a rule list: {e}"))?;
    let live: Vec<&SkillRule> = skill.live_rules().collect();
    if rules.len() != live.len() + set.additions.len() {
        return Err(format!(
            "expected {} rules, got {}",
            live.len() + set.additions.len(),
            rules.len()
        ));
    }
    let mut texts = BTreeMap::new();
    for (old, new) in live.iter().zip(&rules) {
        if new.rule_id.as_deref() != Some(old.rule_id.as_str()) {
            return Err(format!("rule {} missing or moved", old.rule_id));
        }
        match set.edits.iter().find(|e| e.target == old.rule_id) {
            None if new.text != old.text => {
                return Err(format!("rule {} was not to be changed", old.rule_id));
            }
            None => {}
            Some(e) if normalize(&new.text) != normalize(&e.text) => {
                return Err(format!("rule {} does not carry the consolidated edit", old.rule_id));
            }
            Some(_) => {
                texts.insert(old.rule_id.clone(), new.text.trim().to_string());
            }
        }
    }
    let mut revised = set.clone();
    for (addition, new) in revised.additions.iter_mut().zip(&rules[live.len()..]) {
        if new.rule_id.is_some() {
            return Err("new rules must have a null rule_id".into());
        }
        if normalize(&new.text) != normalize(&addition.text) {
            return Err(format!("addition {:?} missing", addition.text));
        }
        addition.text = new.text.trim().to_string();
    }
    for edit in &mut revised.edits {
        edit.text = texts.remove(&edit.target).expect("checked above");
    }
    Ok(body::revise_body(skill, &revised))
}

pub fn revise_body(
    gateway: &Gateway,
    skill: &Skill,
    set: &ConsolidatedRevisionSet,
) -> Result<(Vec<SkillRule>, u64), RevisionError> {
    if set.is_empty() {
        return Ok((skill.body.clone(), skill.next_rule_id));
    }
    let vars = BTreeMap::from([
        ("body", body_json(&skill.body)),
        ("revisions", serde_json::to_string_pretty(set).expect("set serializes")),
    ]);
    gateway
        .complete_structured(CallSite::BodyRevision, templates::REVISE_BODY, &vars, |raw| {
            parse_body_reply(raw, skill, set)
        })
        .map_err(contract)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawItem {
    anchor_rule_id: RuleId,
    reminder: String,
    lapse_count: u32,
    /// Echoed from the prompt by some models; the version is always recomputed.
    #[serde(default, rename = "last_updated_version")]
    _last_updated_version: Option<u64>,
}

/// Anchors and counts must match the mechanical update; only reminder wording is the model's.
pub fn parse_appendix_reply(
    raw: &str,
    body: &[SkillRule],
    old: &[AppendixItem],
    lapses: &[ReflectionRecord],
    version: u64,
) -> Result<Vec<AppendixItem>, String> {
    let items: Vec<RawItem> = serde_json::from_str(strip_fence(raw)).map_err(|e| format!("not an appendix: {e}"))?;
    let (expected, _) = appendix::update_appendix(body, old, lapses, version);
    if items.len() != expected.len() {
        return Err(format!("expected {} appendix items, got {}", expected.len(), items.len()));
    }
    let mut out = Vec::new();
    for want in &expected {
        let got = items
            .iter()
            .find(|i| i.anchor_rule_id == want.anchor_rule_id)
            .ok_or_else(|| format!("no item anchored at {}", want.anchor_rule_id))?;
        if got.lapse_count != want.lapse_count {
            return Err(format!(
                "item at {} should count {} lapses",
                want.anchor_rule_id, want.lapse_count
            ));
        }
        if got.reminder.trim().is_empty() {
            return Err(format!("empty reminder at {}", want.anchor_rule_id));
        }
        let previous = old.iter().find(|o| o.anchor_rule_id == want.anchor_rule_id);
        let changed = previous.is_none_or(|p| p.reminder != got.reminder.trim() || p.lapse_count != got.lapse_count);
        out.push(AppendixItem {
            anchor_rule_id: want.anchor_rule_id.clone(),
            reminder: got.reminder.trim().to_string(),
            lapse_count: want.lapse_count,
            last_updated_version: if changed {
                version
            } else {
                previous.map_or(version, |p| p.last_updated_version)
            },
        });
    }
    Ok(out)
}

pub fn update_appendix(
    gateway: &Gateway,
    body: &[SkillRule],
    old: &[AppendixItem],
    lapses: &[ReflectionRecord],
    version: u64,
) -> Result<(Vec<AppendixItem>, Vec<Discard>), RevisionError> {
    let (expected, discards) = appendix::update_appendix(body, old, lapses, version);
    if lapses.is_empty() && expected.len() == old.len() {
        return Ok((expected, discards));
    }
    let reports: Vec<_> = lapses
        .iter()
        .map(|r| json!({"record_id": r.record_id, "target": r.target, "directive": r.directive}))
        .collect();
    let vars = BTreeMap::from([
        ("body", body_json(body)),
        ("appendix", serde_json::to_string_pretty(old).expect("appendix serializes")),
        ("lapses", serde_json::to_string_pretty(&reports).expect("lapses serialize")),
    ]);
    let items = gateway
        .complete_structured(CallSite::AppendixUpdate, templates::UPDATE_APPENDIX, &vars, |raw| {
            parse_appendix_reply(raw, body, old, lapses, version)
        })
        .map_err(contract)?;
    Ok((items, discards))
}
