//! Constrained body editor: appends additions, edits targets in place and
//! leaves everything else untouched.

use super::{ConsolidatedRevisionSet, EditKind};
use crate::skill::{OriginKind, RuleId, Skill, SkillRule};

/// New body and the next free rule id.
pub fn revise_body(skill: &Skill, set: &ConsolidatedRevisionSet) -> (Vec<SkillRule>, u64) {
    let mut body = skill.body.clone();
    for edit in &set.edits {
        let rule = body
            .iter_mut()
            .find(|r| r.rule_id == edit.target)
            .expect("consolidated edits target existing rules");
        rule.set_text(edit.text.clone());
        rule.origin = match edit.kind {
            EditKind::Fix => OriginKind::DefectFix,
            EditKind::Optimize => OriginKind::Optimization,
        };
        rule.provenance = edit.provenance.clone();
    }
    let mut next = skill.next_rule_id;
    for addition in &set.additions {
        let mut rule = SkillRule::new(RuleId::from_seq(next), addition.text.clone(), []);
        rule.origin = OriginKind::Discovery;
        rule.provenance = addition.provenance.clone();
        body.push(rule);
        next += 1;
    }
    (body, next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::revision::{diff_bodies, Addition, Edit, RuleDiff};
    use crate::skill::RuleSeed;
    use proptest::prelude::*;

    fn two_rules() -> Skill {
        Skill::initial([RuleSeed::new("clean objects at the sink"), RuleSeed::new("heat objects at the sink")]).unwrap()
    }

    #[test]
    fn empty_set_is_identity() {
        let skill = two_rules();
        let (body, next) = revise_body(&skill, &ConsolidatedRevisionSet::default());
        assert_eq!(body, skill.body);
        assert_eq!(next, skill.next_rule_id);
    }

    #[test]
    fn addition_appends_with_fresh_id() {
        let skill = two_rules();
        let set = ConsolidatedRevisionSet {
            additions: vec![Addition {
                text: "cool objects at the fridge".into(),
                provenance: vec!["t/rf1".into()],
            }],
            edits: vec![],
        };
        let (body, next) = revise_body(&skill, &set);
        assert_eq!(body.len(), 3);
        assert_eq!(&body[..2], &skill.body[..]);
        assert_eq!(body[2].rule_id, RuleId::from("r3"));
        assert_eq!(body[2].origin, OriginKind::Discovery);
        assert_eq!(next, 4);
    }

    #[test]
    fn fix_changes_only_its_target() {
        let skill = two_rules();
        let set = ConsolidatedRevisionSet {
            additions: vec![],
            edits: vec![Edit {
                target: RuleId::from("r2"),
                text: "heat objects at the microwave".into(),
                kind: EditKind::Fix,
                provenance: vec!["t/rf1".into()],
            }],
        };
        let (body, _) = revise_body(&skill, &set);
        let diff = diff_bodies(&skill.body, &body);
        assert_eq!(
            diff,
            vec![RuleDiff::Edited {
                rule_id: RuleId::from("r2"),
                before: "heat objects at the sink".into(),
                after: "heat objects at the microwave".into(),
            }]
        );
        assert_eq!(body[1].tags.iter().find(|t| t.starts_with("at=")).unwrap(), "at=microwave");
    }

    proptest! {
        #[test]
        fn untargeted_rules_are_byte_identical(n in 1usize..12, targets in proptest::collection::btree_set(0usize..12, 0..6), adds in 0usize..4) {
            let seeds: Vec<_> = (0..n).map(|i| RuleSeed::new(format!("rule number {i}"))).collect();
            let skill = Skill::initial(seeds).unwrap();
            let targets: Vec<usize> = targets.into_iter().filter(|t| *t < n).collect();
            let set = ConsolidatedRevisionSet {
                additions: (0..adds).map(|i| Addition { text: format!("new rule {i}"), provenance: vec![] }).collect(),
                edits: targets.iter().map(|t| Edit {
                    target: skill.body[*t].rule_id.clone(),
                    text: format!("edited {t}"),
                    kind: EditKind::Optimize,
                    provenance: vec![],
                }).collect(),
            };
            let (body, _) = revise_body(&skill, &set);
            prop_assert_eq!(body.len(), n + adds);
            for (i, rule) in skill.body.iter().enumerate() {
                if targets.contains(&i) {
                    prop_assert_eq!(&body[i].rule_id, &rule.rule_id);
                } else {
                    prop_assert_eq!(serde_json::to_string(&body[i]).unwrap(), serde_json::to_string(rule).unwrap());
                }
            }
        }
    }
}
