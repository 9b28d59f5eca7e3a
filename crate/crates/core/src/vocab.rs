//! Controlled rule vocabulary.
//!
//! Skill rules are natural-language text, but the built-in executor and the
//! scripted reflection oracle need a machine-readable reading of them. A rule's
//! text is parsed into a [`RulePredicate`] by keyword matching; text outside the
//! vocabulary parses to `None` and the rule is inert for the rule-based
//! executor (it is still rendered for model-backed executors).

use std::fmt;

use serde::{Deserialize, Serialize};

/// Marker text for a rule deleted through a defect fix.
pub const TOMBSTONE: &str = "[removed]";

/// Object state change performed at an appliance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    Clean,
    Heat,
    Cool,
}

impl Treatment {
    pub const ALL: [Treatment; 3] = [Treatment::Clean, Treatment::Heat, Treatment::Cool];

    pub fn verb(self) -> &'static str {
        match self {
            Treatment::Clean => "clean",
            Treatment::Heat => "heat",
            Treatment::Cool => "cool",
        }
    }

    /// Adjective used in task instructions ("a clean apple").
    pub fn adjective(self) -> &'static str {
        match self {
            Treatment::Clean => "clean",
            Treatment::Heat => "hot",
            Treatment::Cool => "cool",
        }
    }

    pub fn from_verb(word: &str) -> Option<Self> {
        Treatment::ALL.into_iter().find(|t| t.verb() == word)
    }
}

/// Sub-goal class a rule covers. Coverage checks compare kinds, not text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Search,
    Open,
    Take,
    Clean,
    Heat,
    Cool,
    Place,
    Examine,
    Second,
    Drop,
}

impl RuleKind {
    pub const ALL: [RuleKind; 10] = [
        RuleKind::Search,
        RuleKind::Open,
        RuleKind::Take,
        RuleKind::Clean,
        RuleKind::Heat,
        RuleKind::Cool,
        RuleKind::Place,
        RuleKind::Examine,
        RuleKind::Second,
        RuleKind::Drop,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::Search => "search",
            RuleKind::Open => "open",
            RuleKind::Take => "take",
            RuleKind::Clean => "clean",
            RuleKind::Heat => "heat",
            RuleKind::Cool => "cool",
            RuleKind::Place => "place",
            RuleKind::Examine => "examine",
            RuleKind::Second => "second",
            RuleKind::Drop => "drop",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        RuleKind::ALL.into_iter().find(|k| k.as_str() == s)
    }

    pub fn treatment(self) -> Option<Treatment> {
        match self {
            RuleKind::Clean => Some(Treatment::Clean),
            RuleKind::Heat => Some(Treatment::Heat),
            RuleKind::Cool => Some(Treatment::Cool),
            _ => None,
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What a rule tells the executor to do.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum RuleAction {
    /// Visit receptacles in order until a target object is seen.
    Search,
    /// Open a closed container before taking from or putting into it.
    OpenBeforeAccess,
    /// Pick up a target object once it is visible.
    TakeTarget,
    /// Apply a state change at the named appliance.
    Treat { treatment: Treatment, at: String },
    /// Carry a ready object to the destination and put it there.
    Place,
    /// Examine a held target at the named location.
    Examine { at: String },
    /// After delivering the first object of a two-object task, fetch the second.
    SecondObject,
    /// Put down a held object the task does not need.
    DropUnneeded,
}

/// Machine-readable reading of a rule's text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RulePredicate {
    #[serde(flatten)]
    pub action: RuleAction,
    /// The rule prescribes an extra `look` before acting at its location.
    #[serde(default)]
    pub look_first: bool,
}

impl RulePredicate {
    pub fn new(action: RuleAction) -> Self {
        Self {
            action,
            look_first: false,
        }
    }

    pub fn kind(&self) -> RuleKind {
        match &self.action {
            RuleAction::Search => RuleKind::Search,
            RuleAction::OpenBeforeAccess => RuleKind::Open,
            RuleAction::TakeTarget => RuleKind::Take,
            RuleAction::Treat { treatment, .. } => match treatment {
                Treatment::Clean => RuleKind::Clean,
                Treatment::Heat => RuleKind::Heat,
                Treatment::Cool => RuleKind::Cool,
            },
            RuleAction::Place => RuleKind::Place,
            RuleAction::Examine { .. } => RuleKind::Examine,
            RuleAction::SecondObject => RuleKind::Second,
            RuleAction::DropUnneeded => RuleKind::Drop,
        }
    }

    /// Location parameter for located rules.
    pub fn location(&self) -> Option<&str> {
        match &self.action {
            RuleAction::Treat { at, .. } | RuleAction::Examine { at } => Some(at),
            _ => None,
        }
    }

    /// Same behaviour ignoring the `look_first` preparation step.
    pub fn same_method(&self, other: &RulePredicate) -> bool {
        self.action == other.action
    }

    /// Parses rule text against the controlled vocabulary.
    pub fn parse(text: &str) -> Option<Self> {
        let norm = normalize(text);
        if norm.is_empty() || norm == TOMBSTONE {
            return None;
        }
        let words: Vec<&str> = norm
            .split(|c: char| !(c.is_alphanumeric() || c == '-'))
            .filter(|w| !w.is_empty())
            .collect();
        let has = |w: &str| words.contains(&w);
        let look_first = norm.contains("look around first") || norm.contains("looking around first");

        let action = if has("second") || has("two-object") {
            RuleAction::SecondObject
        } else if has("examine") {
            RuleAction::Examine {
                at: location_after(&words)?,
            }
        } else if let Some(t) = words.iter().find_map(|w| Treatment::from_verb(w)) {
            RuleAction::Treat {
                treatment: t,
                at: location_after(&words)?,
            }
        } else if has("open") && (has("container") || has("receptacle")) {
            RuleAction::OpenBeforeAccess
        } else if has("search") {
            RuleAction::Search
        } else if norm.contains("do not need") || norm.contains("put it down") {
            RuleAction::DropUnneeded
        } else if has("take") {
            RuleAction::TakeTarget
        } else if has("put") && has("destination") {
            RuleAction::Place
        } else {
            return None;
        };
        Some(Self { action, look_first })
    }

    /// Tag encoding stored alongside the rule text.
    pub fn to_tags(&self) -> Vec<String> {
        let mut tags = vec![format!("kind={}", self.kind())];
        if let Some(at) = self.location() {
            tags.push(format!("at={at}"));
        }
        if self.look_first {
            tags.push("prep=look".to_string());
        }
        tags
    }
}

/// Lowercases and collapses whitespace.
pub fn normalize(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn location_after(words: &[&str]) -> Option<String> {
    words
        .windows(3)
        .find(|w| matches!(w[0], "at" | "using" | "with" | "in") && w[1] == "the")
        .map(|w| w[2].to_string())
}
