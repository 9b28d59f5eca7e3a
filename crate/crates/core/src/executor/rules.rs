//! Rule matcher: what each vocabulary predicate prescribes in a given belief state.

use super::belief::{Belief, GoalView};
use crate::microworld::TaskFamily;
use crate::vocab::{RuleAction, RulePredicate, Treatment};

/// The action `pred` prescribes, or `None` when the rule does not apply.
pub fn prescribe(pred: &RulePredicate, goal: &GoalView, b: &Belief) -> Option<String> {
    let delivered = b.delivered(goal).len();
    let at = b.at.as_deref();
    // A closed container that may hold a target: opening it beats walking on.
    let at_closed_unknown = at.is_some_and(|r| {
        b.is_open(r) == Some(false)
            && (!b.contents_known(r) || b.candidates(goal).iter().any(|(_, c)| *c == r))
    });
    let carrying_target = b.carried.as_deref().filter(|c| goal.is_target(c));

    match &pred.action {
        RuleAction::Search => {
            if b.carried.is_some() || delivered > 0 || at_closed_unknown || b.candidate_here(goal).is_some() {
                return None;
            }
            if goal.family == TaskFamily::Examine && !b.examined.is_empty() {
                return None;
            }
            b.search_destination(goal).map(|r| format!("go to {r}"))
        }
        RuleAction::OpenBeforeAccess => {
            let here = at?;
            if b.is_open(here) != Some(false) {
                return None;
            }
            let seeking = b.carried.is_none()
                && delivered < goal.count
                && (!b.contents_known(here) || b.candidates(goal).iter().any(|(_, r)| *r == here));
            let delivering = carrying_target.is_some_and(|c| b.ready(goal, c))
                && goal.destination.as_deref() == Some(here);
            (seeking || delivering).then(|| format!("open {here}"))
        }
        RuleAction::TakeTarget => {
            if b.carried.is_some() || delivered > 0 {
                return None;
            }
            let (object, from) = b.candidate_here(goal)?;
            Some(format!("take {object} from {from}"))
        }
        RuleAction::Treat { treatment, at: place } => {
            if goal.family.treatment() != Some(*treatment) {
                return None;
            }
            let object = carrying_target?;
            if b.treated.contains(&(object.to_string(), *treatment)) {
                return None;
            }
            Some(act_at(pred, b, place, format!("{} {object}", treatment.verb())))
        }
        RuleAction::Place => {
            let dest = goal.destination.as_deref()?;
            let object = carrying_target?;
            if !b.ready(goal, object) {
                return None;
            }
            if at != Some(dest) {
                Some(format!("go to {dest}"))
            } else if b.is_open(dest) == Some(false) {
                None
            } else {
                Some(format!("put {object} in/on {dest}"))
            }
        }
        RuleAction::Examine { at: place } => {
            if goal.family != TaskFamily::Examine {
                return None;
            }
            let object = carrying_target?;
            if b.examined.contains(object) {
                return None;
            }
            Some(act_at(pred, b, place, format!("examine {object}")))
        }
        RuleAction::SecondObject => {
            if goal.count < 2 || delivered != 1 || b.carried.is_some() {
                return None;
            }
            if let Some((object, from)) = b.candidate_here(goal) {
                return Some(format!("take {object} from {from}"));
            }
            if at_closed_unknown {
                return None;
            }
            b.search_destination(goal).map(|r| format!("go to {r}"))
        }
        RuleAction::DropUnneeded => {
            let object = b.carried.as_deref()?;
            if goal.is_target(object) {
                return None;
            }
            let here = at?;
            (b.is_open(here) == Some(true)).then(|| format!("put {object} in/on {here}"))
        }
    }
}

/// Go to `place`, optionally look around, then act.
fn act_at(pred: &RulePredicate, b: &Belief, place: &str, action: String) -> String {
    if b.at.as_deref() != Some(place) {
        format!("go to {place}")
    } else if pred.look_first && b.last_action.as_deref() != Some("look") {
        "look".to_string()
    } else {
        action
    }
}

/// Treatment a recorded action performs, for evidence parsing.
pub fn treatment_of(action: &str) -> Option<Treatment> {
    let verb = action.split_whitespace().next()?;
    Treatment::from_verb(verb)
}
