//! Reference rule texts for the micro-world and the initial-skill presets.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::microworld::TaskFamily;
use crate::skill::RuleSeed;
use crate::vocab::{RuleKind, RulePredicate};

/// Injected defect in the default initial skill.
pub const DEFECT_TEXT: &str = "heat objects at the sink";

/// Correct but wasteful cleaning rule in the default initial skill.
pub const SLOW_CLEAN_TEXT: &str = "clean objects at the sink, looking around first";

/// Canonical text of the correct rule for each sub-goal class.
pub fn reference_text(kind: RuleKind) -> &'static str {
    match kind {
        RuleKind::Search => "search receptacles one by one until you find the target object",
        RuleKind::Open => "open a closed container before taking from it or putting into it",
        RuleKind::Take => "take the target object as soon as you see it",
        RuleKind::Clean => "clean objects at the sink",
        RuleKind::Heat => "heat objects at the microwave",
        RuleKind::Cool => "cool objects at the fridge",
        RuleKind::Place => "once the object is ready, carry it to the destination and put it there",
        RuleKind::Examine => "examine objects while holding them at the desk",
        RuleKind::Second => "for two-object tasks, after placing the first object, search for the second one",
        RuleKind::Drop => "if you are holding an object you do not need, put it down",
    }
}

pub fn reference_predicate(kind: RuleKind) -> RulePredicate {
    RulePredicate::parse(reference_text(kind)).expect("reference texts are in the vocabulary")
}

fn labels(kind: RuleKind) -> &'static [&'static str] {
    match kind {
        RuleKind::Search => &["search"],
        RuleKind::Open => &["precondition"],
        RuleKind::Take | RuleKind::Place | RuleKind::Drop => &["manipulation"],
        RuleKind::Clean | RuleKind::Heat | RuleKind::Cool => &["state-change"],
        RuleKind::Examine => &["inspection"],
        RuleKind::Second => &["ordering"],
    }
}

/// Sub-goal classes a family's reference solution relies on.
pub fn family_kinds(family: TaskFamily) -> Vec<RuleKind> {
    let mut kinds = vec![RuleKind::Search, RuleKind::Open, RuleKind::Take];
    match family {
        TaskFamily::Put => {}
        TaskFamily::CleanPut => kinds.push(RuleKind::Clean),
        TaskFamily::HeatPut => kinds.push(RuleKind::Heat),
        TaskFamily::CoolPut => kinds.push(RuleKind::Cool),
        TaskFamily::Examine => kinds.push(RuleKind::Examine),
        TaskFamily::PutTwo => kinds.push(RuleKind::Second),
    }
    if family != TaskFamily::Examine {
        kinds.push(RuleKind::Place);
    }
    kinds.push(RuleKind::Drop);
    kinds
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialSkill {
    /// Reference rules without the cool and examine rules, with heating
    /// defective and cleaning padded by a redundant look.
    #[default]
    Seeded,
    /// Every reference rule.
    Complete,
    Empty,
}

impl InitialSkill {
    pub fn as_str(self) -> &'static str {
        match self {
            InitialSkill::Seeded => "seeded",
            InitialSkill::Complete => "complete",
            InitialSkill::Empty => "empty",
        }
    }

    pub fn rules(self) -> Vec<RuleSeed> {
        let seed = |kind: RuleKind, text: &str| RuleSeed::labelled(text, labels(kind));
        match self {
            InitialSkill::Empty => Vec::new(),
            InitialSkill::Complete => RuleKind::ALL
                .into_iter()
                .map(|k| seed(k, reference_text(k)))
                .collect(),
            InitialSkill::Seeded => RuleKind::ALL
                .into_iter()
                .filter(|k| !matches!(k, RuleKind::Cool | RuleKind::Examine))
                .map(|k| match k {
                    RuleKind::Heat => seed(k, DEFECT_TEXT),
                    RuleKind::Clean => seed(k, SLOW_CLEAN_TEXT),
                    _ => seed(k, reference_text(k)),
                })
                .collect(),
        }
    }
}

impl fmt::Display for InitialSkill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InitialSkill {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [InitialSkill::Seeded, InitialSkill::Complete, InitialSkill::Empty]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown initial skill preset {s:?}"))
    }
}
