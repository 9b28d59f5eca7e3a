//! Mechanical consolidation of body-level reflections.

use std::collections::BTreeMap;

use super::{Addition, ConsolidatedRevisionSet, Discard, Edit, EditKind};
use crate::reflection::ReflectionRecord;
use crate::skill::{RuleId, Skill};
use crate::vocab::RulePredicate;

fn ids<'a>(records: impl IntoIterator<Item = &'a ReflectionRecord>) -> Vec<String> {
    records.into_iter().map(|r| r.record_id.clone()).collect()
}

/// Winning directive among same-kind edits on one target. Recency is the
/// position of the source trajectory in arrival order; records from one
/// trajectory are simultaneous, so disagreement among them is unresolvable.
fn latest(group: &[&ReflectionRecord]) -> Result<String, ()> {
    let last_source = &group.last().expect("non-empty group").source_trajectory;
    let mut directives: Vec<&str> = group
        .iter()
        .filter(|r| &r.source_trajectory == last_source)
        .map(|r| r.directive.trim())
        .collect();
    directives.dedup();
    match directives.as_slice() {
        [one] => Ok(one.to_string()),
        _ => Err(()),
    }
}

fn by_target(records: &[ReflectionRecord]) -> BTreeMap<RuleId, Vec<&ReflectionRecord>> {
    let mut out: BTreeMap<RuleId, Vec<&ReflectionRecord>> = BTreeMap::new();
    for r in records {
        if let Some(t) = &r.target {
            out.entry(t.clone()).or_default().push(r);
        }
    }
    out
}

/// Scripted consolidation. Returns the revision set and every discard.
pub fn consolidate(
    skill: &Skill,
    discoveries: &[ReflectionRecord],
    optimizations: &[ReflectionRecord],
    defects: &[ReflectionRecord],
) -> (ConsolidatedRevisionSet, Vec<Discard>) {
    let mut set = ConsolidatedRevisionSet::default();
    let mut discards = Vec::new();

    let fixes = by_target(defects);
    let mut opts = by_target(optimizations);
    for (target, group) in &fixes {
        if let Some(superseded) = opts.remove(target) {
            discards.push(Discard::new(ids(superseded), format!("defect fix on {target} takes precedence")));
        }
        edit(skill, target, group, EditKind::Fix, &mut set, &mut discards);
    }
    for (target, group) in &opts {
        edit(skill, target, group, EditKind::Optimize, &mut set, &mut discards);
    }
    // Body order keeps the output independent of id spelling.
    set.edits.sort_by_key(|e| skill.body.iter().position(|r| r.rule_id == e.target));

    let existing: Vec<RulePredicate> = skill.live_rules().filter_map(|r| r.predicate()).collect();
    let mut accepted: Vec<Option<RulePredicate>> = Vec::new();
    for r in discoveries {
        let text = r.directive.trim();
        if let Some(a) = set.additions.iter_mut().find(|a| a.text == text) {
            a.provenance.push(r.record_id.clone());
            continue;
        }
        let pred = RulePredicate::parse(text);
        if let Some(p) = &pred {
            if existing.contains(p) {
                discards.push(Discard::new([&r.record_id], "addition repeats an existing rule"));
                continue;
            }
            if accepted.iter().flatten().any(|q| q == p) {
                discards.push(Discard::new([&r.record_id], "addition repeats an earlier addition"));
                continue;
            }
        }
        accepted.push(pred);
        set.additions.push(Addition {
            text: text.to_string(),
            provenance: vec![r.record_id.clone()],
        });
    }
    (set, discards)
}

fn edit(
    skill: &Skill,
    target: &RuleId,
    group: &[&ReflectionRecord],
    kind: EditKind,
    set: &mut ConsolidatedRevisionSet,
    discards: &mut Vec<Discard>,
) {
    let provenance = ids(group.iter().copied());
    let Some(rule) = skill.live_rule(target) else {
        discards.push(Discard::new(provenance, format!("target {target} is not a live rule")));
        return;
    };
    let Ok(text) = latest(group) else {
        discards.push(Discard::new(provenance, format!("contradictory edits on {target}")));
        return;
    };
    if text == rule.text {
        discards.push(Discard::new(provenance, format!("edit leaves {target} unchanged")));
        return;
    }
    set.edits.push(Edit {
        target: target.clone(),
        text,
        kind,
        provenance,
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{reference_text, InitialSkill};
    use crate::reflection::ReflectionType::*;
    use crate::revision::tests::record;
    use crate::vocab::RuleKind;

    fn seeded() -> Skill {
        Skill::initial(InitialSkill::Seeded.rules()).unwrap()
    }

    fn heat_id(skill: &Skill) -> String {
        skill
            .live_rules()
            .find(|r| r.predicate().map(|p| p.kind()) == Some(RuleKind::Heat))
            .unwrap()
            .rule_id
            .to_string()
    }

    #[test]
    fn empty_inputs_give_empty_set() {
        let (set, discards) = consolidate(&seeded(), &[], &[], &[]);
        assert!(set.is_empty());
        assert!(discards.is_empty());
    }

    #[test]
    fn identical_discoveries_merge() {
        let text = reference_text(RuleKind::Cool);
        let d = [
            record("a/rf1", Discovery, None, text, "a"),
            record("b/rf1", Discovery, None, text, "b"),
        ];
        let (set, _) = consolidate(&seeded(), &d, &[], &[]);
        assert_eq!(set.additions.len(), 1);
        assert_eq!(set.additions[0].provenance, vec!["a/rf1", "b/rf1"]);
    }

    #[test]
    fn discovery_repeating_a_rule_is_dropped() {
        let d = [record("a/rf1", Discovery, None, reference_text(RuleKind::Take), "a")];
        let (set, discards) = consolidate(&seeded(), &d, &[], &[]);
        assert!(set.additions.is_empty());
        assert_eq!(discards.len(), 1);
    }

    #[test]
    fn defect_beats_optimization() {
        let skill = seeded();
        let h = heat_id(&skill);
        let o = [record("a/rf1", Optimization, Some(&h), "heat objects at the sink quickly", "a")];
        let f = [record("b/rf1", SkillDefect, Some(&h), reference_text(RuleKind::Heat), "b")];
        let (set, discards) = consolidate(&skill, &[], &o, &f);
        assert_eq!(set.edits.len(), 1);
        assert_eq!(set.edits[0].kind, EditKind::Fix);
        assert_eq!(set.edits[0].text, reference_text(RuleKind::Heat));
        assert_eq!(discards[0].record_ids, vec!["a/rf1"]);
    }

    #[test]
    fn most_recent_fix_wins() {
        let skill = seeded();
        let h = heat_id(&skill);
        let f = [
            record("a/rf1", SkillDefect, Some(&h), "heat objects at the fridge", "a"),
            record("b/rf1", SkillDefect, Some(&h), "heat objects at the microwave", "b"),
        ];
        let (set, _) = consolidate(&skill, &[], &[], &f);
        assert_eq!(set.edits[0].text, "heat objects at the microwave");
        assert_eq!(set.edits[0].provenance, vec!["a/rf1", "b/rf1"]);
    }

    #[test]
    fn simultaneous_contradictory_fixes_are_both_dropped() {
        let skill = seeded();
        let h = heat_id(&skill);
        let f = [
            record("a/rf1", SkillDefect, Some(&h), "heat objects at the fridge", "a"),
            record("a/rf2", SkillDefect, Some(&h), "heat objects at the microwave", "a"),
        ];
        let (set, discards) = consolidate(&skill, &[], &[], &f);
        assert!(set.edits.is_empty());
        assert_eq!(discards[0].record_ids.len(), 2);
    }
}
