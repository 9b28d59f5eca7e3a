//! What the executor knows about the world, rebuilt from `h_t` alone.

use std::collections::{BTreeMap, BTreeSet};

use crate::microworld::protocol::is_rejection;
use crate::microworld::TaskFamily;
use crate::trajectory::History;
use crate::vocab::Treatment;

/// Goal recovered from the instruction text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalView {
    pub family: TaskFamily,
    pub kind: String,
    pub destination: Option<String>,
    pub count: usize,
}

impl GoalView {
    pub fn parse(instruction: &str) -> Option<Self> {
        let text = crate::vocab::normalize(instruction);
        let text = text.trim_end_matches('.');
        if let Some(rest) = text.strip_prefix("examine the ") {
            let kind = rest.strip_suffix(" under the desklamp")?;
            return Some(GoalView {
                family: TaskFamily::Examine,
                kind: kind.to_string(),
                destination: None,
                count: 1,
            });
        }
        let (count, rest) = if let Some(r) = text.strip_prefix("put two ") {
            (2, r)
        } else {
            (1, text.strip_prefix("put a ")?)
        };
        let (object, dest) = rest.split_once(" in the ")?;
        let mut family = if count == 2 { TaskFamily::PutTwo } else { TaskFamily::Put };
        let mut kind = object;
        if count == 1 {
            for (adj, fam) in [
                ("clean ", TaskFamily::CleanPut),
                ("hot ", TaskFamily::HeatPut),
                ("cool ", TaskFamily::CoolPut),
            ] {
                if let Some(k) = object.strip_prefix(adj) {
                    family = fam;
                    kind = k;
                }
            }
        }
        Some(GoalView {
            family,
            kind: kind.to_string(),
            destination: Some(dest.to_string()),
            count,
        })
    }

    pub fn is_target(&self, object: &str) -> bool {
        kind_of(object) == self.kind
    }
}

/// `"apple 2"` → `"apple"`.
pub fn kind_of(object: &str) -> &str {
    match object.rsplit_once(' ') {
        Some((k, n)) if n.chars().all(|c| c.is_ascii_digit()) => k,
        _ => object,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Belief {
    /// In the order the first observation listed them.
    pub receptacles: Vec<String>,
    pub at: Option<String>,
    /// Known open/closed state.
    pub open: BTreeMap<String, bool>,
    /// Receptacles seen closed, opened or closed by hand.
    pub openable: BTreeSet<String>,
    /// Last seen contents.
    pub contents: BTreeMap<String, Vec<String>>,
    pub carried: Option<String>,
    pub treated: BTreeSet<(String, Treatment)>,
    pub examined: BTreeSet<String>,
    /// Every object put down at each receptacle, in order.
    pub put_log: Vec<(String, String)>,
    pub last_action: Option<String>,
}

fn between<'a>(s: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let from = s.find(start)? + start.len();
    let len = s[from..].find(end)?;
    Some(&s[from..from + len])
}

fn parse_list(s: &str) -> Vec<String> {
    if s.trim() == "nothing" {
        Vec::new()
    } else {
        s.split(", ").map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect()
    }
}

impl Belief {
    pub fn from_history(history: &History) -> Self {
        let mut b = Belief::default();
        for (i, (obs, _)) in history.pairs().enumerate() {
            if i == 0 {
                if let Some(list) = between(obs, "Looking around you see: ", ".") {
                    b.receptacles = parse_list(list);
                }
            } else {
                b.absorb(obs);
            }
        }
        b.last_action = history.last_action().map(str::to_string);
        b
    }

    fn absorb(&mut self, obs: &str) {
        if is_rejection(obs) {
            return;
        }
        if let Some(r) = between(obs, "You arrive at the ", ".").or_else(|| between(obs, "You are at the ", ".")) {
            self.at = Some(r.to_string());
        }
        if let Some(r) = between(obs, "On the ", ", you see ") {
            self.open.insert(r.to_string(), true);
            if let Some(list) = between(obs, ", you see ", ".") {
                self.contents.insert(r.to_string(), parse_list(list));
            }
        }
        if let Some(r) = between(obs, "The ", " is closed.") {
            self.open.insert(r.to_string(), false);
            self.openable.insert(r.to_string());
        }
        let opened = between(obs, "The ", " is open.").or_else(|| between(obs, "You open the ", "."));
        if let Some(r) = opened {
            self.open.insert(r.to_string(), true);
            self.openable.insert(r.to_string());
            if let Some(list) = between(obs, "In it, you see ", ".") {
                self.contents.insert(r.to_string(), parse_list(list));
            }
        }
        if let Some(r) = between(obs, "You close the ", ".") {
            self.open.insert(r.to_string(), false);
            self.openable.insert(r.to_string());
        }
        if let Some(picked) = between(obs, "You pick up the ", ".") {
            if let Some((object, from)) = picked.split_once(" from the ") {
                if let Some(list) = self.contents.get_mut(from) {
                    list.retain(|o| o != object);
                }
                self.carried = Some(object.to_string());
            }
        }
        if let Some(put) = between(obs, "You put the ", ".") {
            if let Some((object, to)) = put.split_once(" in/on the ") {
                self.contents.entry(to.to_string()).or_default().push(object.to_string());
                self.put_log.push((object.to_string(), to.to_string()));
                self.carried = None;
            }
        }
        for t in Treatment::ALL {
            if let Some(done) = between(obs, &format!("You {} the ", t.verb()), " using the ") {
                self.treated.insert((done.to_string(), t));
            }
        }
        if let Some(o) = between(obs, "You examine the ", " under the desklamp") {
            self.examined.insert(o.to_string());
        }
    }

    pub fn is_open(&self, receptacle: &str) -> Option<bool> {
        self.open.get(receptacle).copied()
    }

    pub fn contents_known(&self, receptacle: &str) -> bool {
        self.contents.contains_key(receptacle)
    }

    /// Ready = carries every state change the goal asks for.
    pub fn ready(&self, goal: &GoalView, object: &str) -> bool {
        goal.family
            .treatment()
            .is_none_or(|t| self.treated.contains(&(object.to_string(), t)))
    }

    /// Target objects sitting ready at the destination.
    pub fn delivered(&self, goal: &GoalView) -> Vec<&str> {
        let Some(dest) = &goal.destination else {
            return Vec::new();
        };
        self.contents
            .get(dest)
            .map(|list| {
                list.iter()
                    .filter(|o| goal.is_target(o) && self.ready(goal, o))
                    .map(String::as_str)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Target objects seen somewhere other than delivered: `(object, receptacle)`.
    pub fn candidates(&self, goal: &GoalView) -> Vec<(&str, &str)> {
        let delivered = self.delivered(goal);
        let mut out = Vec::new();
        for r in &self.receptacles {
            if let Some(list) = self.contents.get(r) {
                for o in list {
                    if goal.is_target(o) && !delivered.contains(&o.as_str()) {
                        out.push((o.as_str(), r.as_str()));
                    }
                }
            }
        }
        out
    }

    /// A candidate reachable right here, in an open receptacle.
    pub fn candidate_here(&self, goal: &GoalView) -> Option<(&str, &str)> {
        let at = self.at.as_deref()?;
        if self.is_open(at) != Some(true) {
            return None;
        }
        self.candidates(goal).into_iter().find(|(_, r)| *r == at)
    }

    /// Next receptacle worth visiting while looking for a target.
    pub fn search_destination(&self, goal: &GoalView) -> Option<&str> {
        let at = self.at.as_deref();
        if let Some((_, r)) = self.candidates(goal).into_iter().find(|(_, r)| Some(*r) != at) {
            return Some(r);
        }
        self.receptacles
            .iter()
            .map(String::as_str)
            .find(|r| Some(*r) != at && !self.contents_known(r))
    }

    /// Valid-form actions for the current state, in a fixed order.
    pub fn candidate_actions(&self) -> Vec<String> {
        let mut out = vec!["look".to_string()];
        for r in &self.receptacles {
            if Some(r) != self.at.as_ref() {
                out.push(format!("go to {r}"));
            }
        }
        if let Some(at) = &self.at {
            if self.openable.contains(at) {
                match self.is_open(at) {
                    Some(false) => out.push(format!("open {at}")),
                    Some(true) => out.push(format!("close {at}")),
                    None => {}
                }
            }
            if self.carried.is_none() && self.is_open(at) == Some(true) {
                for o in self.contents.get(at).into_iter().flatten() {
                    out.push(format!("take {o} from {at}"));
                }
            }
        }
        if let Some(c) = &self.carried {
            if let Some(at) = &self.at {
                out.push(format!("put {c} in/on {at}"));
            }
            for t in Treatment::ALL {
                out.push(format!("{} {c}", t.verb()));
            }
            out.push(format!("examine {c}"));
        }
        out
    }
}
