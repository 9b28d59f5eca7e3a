use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{appliance_for, Goal, TaskFamily, WorldSpec, LAMP_LOCATION};
use crate::vocab::Treatment;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Receptacle {
    pub name: String,
    pub room: String,
    pub openable: bool,
    pub open: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectState {
    pub clean: bool,
    pub hot: bool,
    pub cool: bool,
    pub examined_under_lamp: bool,
}

impl ObjectState {
    fn mark(&mut self, t: Treatment) {
        match t {
            Treatment::Clean => self.clean = true,
            Treatment::Heat => self.hot = true,
            Treatment::Cool => self.cool = true,
        }
    }

    pub fn has(&self, t: Treatment) -> bool {
        match t {
            Treatment::Clean => self.clean,
            Treatment::Heat => self.hot,
            Treatment::Cool => self.cool,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldObject {
    pub name: String,
    pub kind: String,
    /// Receptacle holding the object; `None` while carried.
    pub location: Option<String>,
    pub state: ObjectState,
}

/// Parsed command from the fixed action grammar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Look,
    GoTo(String),
    Open(String),
    Close(String),
    Take { object: String, from: Option<String> },
    Put { object: String, receptacle: String },
    Treat { treatment: Treatment, object: String },
    Examine(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unparseable action {0:?}")]
pub struct UnparseableAction(pub String);

pub fn parse_action(text: &str) -> Result<Action, UnparseableAction> {
    let norm = crate::vocab::normalize(text);
    let fail = || UnparseableAction(text.to_string());
    let rest_of = |prefix: &str| norm.strip_prefix(prefix).map(str::trim).filter(|s| !s.is_empty());

    if norm == "look" {
        return Ok(Action::Look);
    }
    if let Some(r) = rest_of("go to ") {
        return Ok(Action::GoTo(r.to_string()));
    }
    if let Some(r) = rest_of("open ") {
        return Ok(Action::Open(r.to_string()));
    }
    if let Some(r) = rest_of("close ") {
        return Ok(Action::Close(r.to_string()));
    }
    if let Some(r) = rest_of("take ") {
        return Ok(match r.split_once(" from ") {
            Some((o, f)) => Action::Take {
                object: o.trim().to_string(),
                from: Some(f.trim().to_string()),
            },
            None => Action::Take {
                object: r.to_string(),
                from: None,
            },
        });
    }
    if let Some(r) = rest_of("put ") {
        for sep in [" in/on ", " in ", " on "] {
            if let Some((o, c)) = r.split_once(sep) {
                if !o.trim().is_empty() && !c.trim().is_empty() {
                    return Ok(Action::Put {
                        object: o.trim().to_string(),
                        receptacle: c.trim().to_string(),
                    });
                }
            }
        }
        return Err(fail());
    }
    if let Some(r) = rest_of("examine ") {
        return Ok(Action::Examine(r.to_string()));
    }
    for t in Treatment::ALL {
        if let Some(r) = rest_of(&format!("{} ", t.verb())) {
            let object = r.split_once(" with ").map_or(r, |(o, _)| o).trim();
            return Ok(Action::Treat {
                treatment: t,
                object: object.to_string(),
            });
        }
    }
    Err(fail())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: String,
    pub accepted: bool,
    pub done: bool,
    pub success: bool,
}

/// Live world state for one episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct World {
    pub rooms: Vec<String>,
    pub receptacles: Vec<Receptacle>,
    pub objects: Vec<WorldObject>,
    pub goal: Goal,
    pub agent_at: Option<String>,
    pub steps_taken: usize,
    pub horizon: usize,
    instruction: String,
}

/// Everything a rejected action must leave untouched.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WorldState<'a> {
    pub receptacles: &'a [Receptacle],
    pub objects: &'a [WorldObject],
    pub agent_at: &'a Option<String>,
}

const REJECT: &str = "Nothing happens.";

impl World {
    pub fn from_spec(spec: &WorldSpec, horizon: usize) -> Self {
        World {
            rooms: spec.rooms.clone(),
            receptacles: spec.receptacles.clone(),
            objects: spec.objects.clone(),
            goal: spec.goal.clone(),
            agent_at: None,
            steps_taken: 0,
            horizon,
            instruction: spec.goal.instruction(),
        }
    }

    pub fn state(&self) -> WorldState<'_> {
        WorldState {
            receptacles: &self.receptacles,
            objects: &self.objects,
            agent_at: &self.agent_at,
        }
    }

    pub fn reset_observation(&self) -> String {
        let names: Vec<&str> = self.receptacles.iter().map(|r| r.name.as_str()).collect();
        format!(
            "You are in the middle of a house with rooms: {}. Looking around you see: {}.\nYour task is to: {}.",
            self.rooms.join(", "),
            names.join(", "),
            self.instruction
        )
    }

    pub fn receptacle(&self, name: &str) -> Option<&Receptacle> {
        self.receptacles.iter().find(|r| r.name == name)
    }

    fn receptacle_mut(&mut self, name: &str) -> Option<&mut Receptacle> {
        self.receptacles.iter_mut().find(|r| r.name == name)
    }

    pub fn carried(&self) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.location.is_none())
    }

    pub fn object(&self, name: &str) -> Option<&WorldObject> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn contents(&self, receptacle: &str) -> Vec<&str> {
        self.objects
            .iter()
            .filter(|o| o.location.as_deref() == Some(receptacle))
            .map(|o| o.name.as_str())
            .collect()
    }

    fn list(&self, receptacle: &str) -> String {
        let items = self.contents(receptacle);
        if items.is_empty() {
            "nothing".to_string()
        } else {
            items.join(", ")
        }
    }

    fn describe(&self, r: &Receptacle) -> String {
        if r.openable {
            if r.open {
                format!("The {0} is open. In it, you see {1}.", r.name, self.list(&r.name))
            } else {
                format!("The {} is closed.", r.name)
            }
        } else {
            format!("On the {}, you see {}.", r.name, self.list(&r.name))
        }
    }

    pub fn goal_satisfied(&self) -> bool {
        let g = &self.goal;
        let matching = self.objects.iter().filter(|o| o.kind == g.target_kind);
        match g.family {
            TaskFamily::Examine => matching.into_iter().any(|o| o.state.examined_under_lamp),
            _ => {
                let need = g.family.treatment();
                let placed = matching
                    .filter(|o| o.location.is_some() && o.location == g.destination)
                    .filter(|o| need.is_none_or(|t| o.state.has(t)))
                    .count();
                placed >= g.count
            }
        }
    }

    /// Resolves `apple 1` exactly, or a bare kind (`apple`) to the carried,
    /// then locally visible, then any object of that kind.
    fn resolve(&self, name: &str) -> Option<usize> {
        if let Some(i) = self.objects.iter().position(|o| o.name == name) {
            return Some(i);
        }
        let of_kind = |pred: &dyn Fn(&WorldObject) -> bool| {
            self.objects.iter().position(|o| o.kind == name && pred(o))
        };
        of_kind(&|o| o.location.is_none())
            .or_else(|| of_kind(&|o| o.location.is_some() && o.location == self.agent_at))
            .or_else(|| of_kind(&|_| true))
    }

    pub fn step(&mut self, action: &str) -> StepResult {
        if self.is_done() {
            return StepResult {
                observation: format!("{REJECT} The episode is over."),
                accepted: false,
                done: true,
                success: self.goal_satisfied(),
            };
        }
        self.steps_taken += 1;
        let (observation, accepted) = match parse_action(action) {
            Ok(a) => match self.apply(&a) {
                Ok(obs) => (obs, true),
                Err(reason) => (format!("{REJECT} {reason}"), false),
            },
            Err(_) => (format!("{REJECT} That is not a valid command."), false),
        };
        let success = self.goal_satisfied();
        StepResult {
            observation,
            accepted,
            done: self.is_done(),
            success,
        }
    }

    pub fn is_done(&self) -> bool {
        self.goal_satisfied() || self.steps_taken >= self.horizon
    }

    /// Applies an action; `Err` carries the rejection reason and guarantees
    /// no state was touched.
    fn apply(&mut self, action: &Action) -> Result<String, String> {
        match action {
            Action::Look => Ok(match &self.agent_at {
                Some(at) => {
                    let r = self.receptacle(at).unwrap();
                    format!("You are at the {}. {}", r.name, self.describe(r))
                }
                None => "You are in the middle of the house.".to_string(),
            }),
            Action::GoTo(name) => {
                let r = self
                    .receptacle(name)
                    .ok_or_else(|| format!("There is no {name} here."))?;
                if self.agent_at.as_deref() == Some(name.as_str()) {
                    return Err(format!("You are already at the {name}."));
                }
                let obs = format!("You arrive at the {}. {}", r.name, self.describe(r));
                self.agent_at = Some(name.clone());
                Ok(obs)
            }
            Action::Open(name) | Action::Close(name) => {
                let opening = matches!(action, Action::Open(_));
                let here = self.agent_at.as_deref() == Some(name.as_str());
                let r = self
                    .receptacle(name)
                    .ok_or_else(|| format!("There is no {name} here."))?;
                if !here {
                    return Err(format!("You are not at the {name}."));
                }
                if !r.openable {
                    return Err(format!("The {name} cannot be opened or closed."));
                }
                if r.open == opening {
                    let state = if opening { "open" } else { "closed" };
                    return Err(format!("The {name} is already {state}."));
                }
                self.receptacle_mut(name).unwrap().open = opening;
                if opening {
                    Ok(format!("You open the {name}. In it, you see {}.", self.list(name)))
                } else {
                    Ok(format!("You close the {name}."))
                }
            }
            Action::Take { object, from } => {
                if let Some(c) = self.carried() {
                    return Err(format!("You are already carrying the {}.", c.name));
                }
                let idx = self
                    .resolve(object)
                    .ok_or_else(|| format!("You do not see {object} here."))?;
                let obj = &self.objects[idx];
                let at = obj.location.clone().unwrap();
                if self.agent_at.as_deref() != Some(at.as_str())
                    || from.as_deref().is_some_and(|f| f != at)
                {
                    return Err(format!("You do not see {object} here."));
                }
                if !self.receptacle(&at).unwrap().open {
                    return Err(format!("The {at} is closed."));
                }
                let name = obj.name.clone();
                self.objects[idx].location = None;
                Ok(format!("You pick up the {name} from the {at}."))
            }
            Action::Put { object, receptacle } => {
                let idx = self
                    .resolve(object)
                    .filter(|i| self.objects[*i].location.is_none())
                    .ok_or_else(|| format!("You are not carrying {object}."))?;
                let r = self
                    .receptacle(receptacle)
                    .ok_or_else(|| format!("There is no {receptacle} here."))?;
                if self.agent_at.as_deref() != Some(receptacle.as_str()) {
                    return Err(format!("You are not at the {receptacle}."));
                }
                if !r.open {
                    return Err(format!("The {receptacle} is closed."));
                }
                let name = self.objects[idx].name.clone();
                self.objects[idx].location = Some(receptacle.clone());
                Ok(format!("You put the {name} in/on the {receptacle}."))
            }
            Action::Treat { treatment, object } => {
                let idx = self
                    .resolve(object)
                    .filter(|i| self.objects[*i].location.is_none())
                    .ok_or_else(|| format!("You are not carrying {object}."))?;
                let appliance = appliance_for(*treatment);
                let name = self.objects[idx].name.clone();
                if self.agent_at.as_deref() != Some(appliance) {
                    return Err(format!("You cannot {} the {name} here.", treatment.verb()));
                }
                self.objects[idx].state.mark(*treatment);
                Ok(format!(
                    "You {} the {name} using the {appliance}.",
                    treatment.verb()
                ))
            }
            Action::Examine(object) => {
                let idx = self
                    .resolve(object)
                    .ok_or_else(|| format!("You do not see {object} here."))?;
                let obj = &self.objects[idx];
                let visible = match &obj.location {
                    None => true,
                    Some(at) => {
                        self.agent_at.as_deref() == Some(at.as_str())
                            && self.receptacle(at).unwrap().open
                    }
                };
                if !visible {
                    return Err(format!("You do not see {object} here."));
                }
                let name = obj.name.clone();
                if obj.location.is_none() && self.agent_at.as_deref() == Some(LAMP_LOCATION) {
                    self.objects[idx].state.examined_under_lamp = true;
                    Ok(format!("You examine the {name} under the desklamp."))
                } else {
                    Ok(format!("You examine the {name}. Nothing special."))
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{sample_task, TaskFamily};
    use super::*;
    use proptest::prelude::*;

    fn world_with_apple_in_fridge() -> World {
        // Find a seed whose target apple starts inside the closed fridge.
        for seed in 0..500 {
            let (_, spec, _) = sample_task(TaskFamily::CoolPut, seed);
            if spec.goal.target_kind == "apple"
                && spec.objects.iter().any(|o| o.kind == "apple" && o.location.as_deref() == Some("fridge"))
            {
                return World::from_spec(&spec, 30);
            }
        }
        panic!("no seed with an apple in the fridge");
    }

    #[test]
    fn take_from_closed_fridge_is_rejected() {
        let mut w = world_with_apple_in_fridge();
        assert!(w.step("go to fridge").accepted);
        let before = w.clone();
        let r = w.step("take apple");
        assert!(!r.accepted);
        assert!(r.observation.to_lowercase().contains("the fridge is closed"));
        assert_eq!(before.state(), w.state());
        assert!(w.step("open fridge").accepted);
        assert!(w.step("take apple").accepted);
    }

    #[test]
    fn unparseable_is_rejected_not_fatal() {
        let mut w = world_with_apple_in_fridge();
        let r = w.step("fly to moon");
        assert!(!r.accepted);
        assert!(!r.done);
        assert_eq!(w.steps_taken, 1);
    }

    #[test]
    fn grammar() {
        assert_eq!(parse_action("look"), Ok(Action::Look));
        assert_eq!(
            parse_action("put apple 1 in/on countertop"),
            Ok(Action::Put {
                object: "apple 1".into(),
                receptacle: "countertop".into()
            })
        );
        assert_eq!(
            parse_action("heat mug 2 with microwave"),
            Ok(Action::Treat {
                treatment: Treatment::Heat,
                object: "mug 2".into()
            })
        );
        assert!(parse_action("fly to moon").is_err());
        assert!(parse_action("put apple").is_err());
    }

    #[test]
    fn horizon_ends_episode() {
        let mut w = world_with_apple_in_fridge();
        w.horizon = 3;
        assert!(!w.step("look").done);
        assert!(!w.step("look").done);
        let last = w.step("look");
        assert!(last.done && !last.success);
        assert!(!w.step("look").accepted);
    }

    fn action_strategy() -> impl Strategy<Value = String> {
        let recs = prop::sample::select(vec![
            "countertop", "fridge", "sink", "microwave", "sofa", "cabinet", "desk", "shelf", "moon",
        ]);
        let objs = prop::sample::select(vec![
            "apple", "apple 1", "mug 1", "book 1", "tomato 2", "plate 1", "vase 1", "keychain 1",
        ]);
        (0usize..10, recs, objs).prop_map(|(verb, r, o)| match verb {
            0 => "look".to_string(),
            1 => format!("go to {r}"),
            2 => format!("open {r}"),
            3 => format!("close {r}"),
            4 => format!("take {o}"),
            5 => format!("put {o} in/on {r}"),
            6 => format!("clean {o}"),
            7 => format!("heat {o}"),
            8 => format!("cool {o}"),
            _ => format!("examine {o}"),
        })
    }

    proptest! {
        #[test]
        fn rejected_actions_never_mutate_state(
            family in prop::sample::select(TaskFamily::ALL.to_vec()),
            seed in 0u64..1000,
            actions in prop::collection::vec(action_strategy(), 1..60),
        ) {
            let (_, spec, _) = sample_task(family, seed);
            let mut w = World::from_spec(&spec, 1000);
            for a in actions {
                let before = w.clone();
                let r = w.step(&a);
                if !r.accepted {
                    prop_assert_eq!(before.state(), w.state());
                }
                prop_assert!(w.objects.iter().filter(|o| o.location.is_none()).count() <= 1);
            }
        }

        #[test]
        fn observations_are_determined_by_inputs(
            family in prop::sample::select(TaskFamily::ALL.to_vec()),
            seed in 0u64..1000,
            actions in prop::collection::vec(action_strategy(), 1..30),
        ) {
            let (_, spec, _) = sample_task(family, seed);
            let mut a = World::from_spec(&spec, 30);
            let mut b = World::from_spec(&sample_task(family, seed).1, 30);
            for act in &actions {
                prop_assert_eq!(a.step(act), b.step(act));
            }
        }
    }
}
