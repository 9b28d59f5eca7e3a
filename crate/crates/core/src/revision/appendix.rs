//! Appendix maintenance. Reads the revised body, never writes it.

use super::Discard;
use crate::reflection::ReflectionRecord;
use crate::skill::{AppendixItem, RuleId, SkillRule};

/// Reminder text for an item anchored at a rule with `text`.
pub fn reminder_for(text: &str) -> String {
    format!("apply this rule every time it applies, without deviating: {text}")
}

fn live<'a>(body: &'a [SkillRule], id: &RuleId) -> Option<&'a SkillRule> {
    body.iter().find(|r| &r.rule_id == id && !r.is_tombstone())
}

pub fn update_appendix(
    body: &[SkillRule],
    old: &[AppendixItem],
    lapses: &[ReflectionRecord],
    version: u64,
) -> (Vec<AppendixItem>, Vec<Discard>) {
    let mut items: Vec<AppendixItem> = Vec::new();
    for item in old {
        let Some(rule) = live(body, &item.anchor_rule_id) else {
            log::info!("pruned appendix item anchored at {}", item.anchor_rule_id);
            continue;
        };
        let mut item = item.clone();
        let reminder = reminder_for(&rule.text);
        if reminder != item.reminder {
            item.reminder = reminder;
            item.last_updated_version = version;
        }
        items.push(item);
    }
    let mut discards = Vec::new();
    for lapse in lapses {
        let Some(target) = &lapse.target else {
            discards.push(Discard::new([&lapse.record_id], "lapse without a target"));
            continue;
        };
        let Some(rule) = live(body, target) else {
            discards.push(Discard::new([&lapse.record_id], format!("dangling lapse target {target}")));
            continue;
        };
        match items.iter_mut().find(|i| &i.anchor_rule_id == target) {
            Some(item) => {
                item.lapse_count += 1;
                item.last_updated_version = version;
            }
            None => items.push(AppendixItem {
                anchor_rule_id: target.clone(),
                reminder: reminder_for(&rule.text),
                lapse_count: 1,
                last_updated_version: version,
            }),
        }
    }
    (items, discards)
}
