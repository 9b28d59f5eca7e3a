//! Deterministic household text world.
//!
//! Three rooms, eight receptacles (two openable) and ten objects. Six task
//! families mirror the ALFWorld categories. Every task is generated from
//! `(family, seed)` alone and ships with a ground-truth procedure that only the
//! scripted reflection oracle gets to see.

mod procedure;
pub mod protocol;
mod world;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{EnvSpec, Task};
use crate::vocab::Treatment;

pub use procedure::{GroundTruthProcedure, SubGoal};
pub use world::{parse_action, Action, ObjectState, Receptacle, StepResult, World, WorldObject};

/// Receptacle layout: `(name, room, openable)`.
pub const LAYOUT: [(&str, &str, bool); 8] = [
    ("countertop", "kitchen", false),
    ("fridge", "kitchen", true),
    ("sink", "kitchen", false),
    ("microwave", "kitchen", false),
    ("sofa", "livingroom", false),
    ("cabinet", "livingroom", true),
    ("desk", "bedroom", false),
    ("shelf", "bedroom", false),
];

pub const ROOMS: [&str; 3] = ["kitchen", "livingroom", "bedroom"];

/// Receptacles where objects start out.
pub const STORAGE: [&str; 6] = ["countertop", "fridge", "cabinet", "sofa", "desk", "shelf"];

/// Receptacles a task may name as destination.
pub const DESTINATIONS: [&str; 5] = ["countertop", "cabinet", "sofa", "desk", "shelf"];

/// Where the lamp is; examining a held object here satisfies examine tasks.
pub const LAMP_LOCATION: &str = "desk";

pub const OBJECT_COUNT: usize = 10;

/// The appliance at which a treatment succeeds.
pub fn appliance_for(t: Treatment) -> &'static str {
    match t {
        Treatment::Clean => "sink",
        Treatment::Heat => "microwave",
        Treatment::Cool => "fridge",
    }
}

/// `(kind, cleanable, heatable, coolable, examinable)`
const KINDS: [(&str, bool, bool, bool, bool); 11] = [
    ("apple", true, true, true, false),
    ("tomato", true, true, true, false),
    ("potato", true, true, true, false),
    ("egg", false, true, true, false),
    ("mug", true, true, true, false),
    ("plate", true, false, true, false),
    ("cup", true, true, true, false),
    ("book", false, false, false, true),
    ("pen", false, false, false, true),
    ("keychain", false, false, false, true),
    ("vase", false, false, false, false),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Put,
    CleanPut,
    HeatPut,
    CoolPut,
    Examine,
    PutTwo,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 6] = [
        TaskFamily::Put,
        TaskFamily::CleanPut,
        TaskFamily::HeatPut,
        TaskFamily::CoolPut,
        TaskFamily::Examine,
        TaskFamily::PutTwo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::Put => "put",
            TaskFamily::CleanPut => "clean_put",
            TaskFamily::HeatPut => "heat_put",
            TaskFamily::CoolPut => "cool_put",
            TaskFamily::Examine => "examine",
            TaskFamily::PutTwo => "put_two",
        }
    }

    pub fn treatment(self) -> Option<Treatment> {
        match self {
            TaskFamily::CleanPut => Some(Treatment::Clean),
            TaskFamily::HeatPut => Some(Treatment::Heat),
            TaskFamily::CoolPut => Some(Treatment::Cool),
            _ => None,
        }
    }

    fn index(self) -> u64 {
        TaskFamily::ALL.iter().position(|f| *f == self).unwrap() as u64
    }

    fn eligible_kinds(self) -> Vec<&'static str> {
        KINDS
            .iter()
            .filter(|(_, clean, heat, cool, exam)| match self {
                TaskFamily::Put | TaskFamily::PutTwo => true,
                TaskFamily::CleanPut => *clean,
                TaskFamily::HeatPut => *heat,
                TaskFamily::CoolPut => *cool,
                TaskFamily::Examine => *exam,
            })
            .map(|k| k.0)
            .collect()
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown task family {0:?}")]
pub struct UnknownFamily(pub String);

impl FromStr for TaskFamily {
    type Err = UnknownFamily;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| UnknownFamily(s.to_string()))
    }
}

/// What the episode must achieve.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Goal {
    pub family: TaskFamily,
    pub target_kind: String,
    pub destination: Option<String>,
    pub count: usize,
}

impl Goal {
    pub fn instruction(&self) -> String {
        let k = &self.target_kind;
        let d = self.destination.as_deref().unwrap_or("");
        match self.family {
            TaskFamily::Put => format!("put a {k} in the {d}"),
            TaskFamily::CleanPut | TaskFamily::HeatPut | TaskFamily::CoolPut => {
                let adj = self.family.treatment().unwrap().adjective();
                format!("put a {adj} {k} in the {d}")
            }
            TaskFamily::Examine => format!("examine the {k} under the desklamp"),
            TaskFamily::PutTwo => format!("put two {k} in the {d}"),
        }
    }
}

/// Initial world description produced by [`sample_task`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldSpec {
    pub rooms: Vec<String>,
    pub receptacles: Vec<Receptacle>,
    pub objects: Vec<WorldObject>,
    pub goal: Goal,
    pub rng_seed: u64,
}

pub fn task_id(family: TaskFamily, seed: u64) -> String {
    format!("{family}-{seed}")
}

/// Splits `"<family>-<seed>"`.
pub fn parse_task_id(id: &str) -> Option<(TaskFamily, u64)> {
    let (fam, seed) = id.rsplit_once('-')?;
    Some((fam.parse().ok()?, seed.parse().ok()?))
}

/// Deterministic in `(family, seed)`.
pub fn sample_task(family: TaskFamily, seed: u64) -> (Task, WorldSpec, GroundTruthProcedure) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ family.index());

    let eligible = family.eligible_kinds();
    let target_kind = *eligible.choose(&mut rng).expect("every family has eligible kinds");
    let destination = match family {
        TaskFamily::Examine => None,
        _ => Some(DESTINATIONS.choose(&mut rng).unwrap().to_string()),
    };
    let target_count = if family == TaskFamily::PutTwo { 2 } else { 1 };

    let receptacles: Vec<Receptacle> = LAYOUT
        .iter()
        .map(|(name, room, openable)| Receptacle {
            name: name.to_string(),
            room: room.to_string(),
            openable: *openable,
            open: !*openable,
        })
        .collect();

    let mut kinds: Vec<&str> = vec![target_kind; target_count];
    let others: Vec<&str> = KINDS.iter().map(|k| k.0).filter(|k| *k != target_kind).collect();
    while kinds.len() < OBJECT_COUNT {
        kinds.push(others.choose(&mut rng).unwrap());
    }

    let mut objects = Vec::with_capacity(OBJECT_COUNT);
    for (i, kind) in kinds.iter().enumerate() {
        let number = kinds[..i].iter().filter(|k| *k == kind).count() + 1;
        let allowed: Vec<&str> = STORAGE
            .iter()
            .copied()
            .filter(|s| i >= target_count || Some(*s) != destination.as_deref())
            .collect();
        let at = allowed[rng.gen_range(0..allowed.len())];
        objects.push(WorldObject {
            name: format!("{kind} {number}"),
            kind: kind.to_string(),
            location: Some(at.to_string()),
            state: ObjectState::default(),
        });
    }

    let goal = Goal {
        family,
        target_kind: target_kind.to_string(),
        destination,
        count: target_count,
    };
    let spec = WorldSpec {
        rooms: ROOMS.iter().map(|r| r.to_string()).collect(),
        receptacles,
        objects,
        goal: goal.clone(),
        rng_seed: seed,
    };
    let task = Task {
        task_id: task_id(family, seed),
        instruction: goal.instruction(),
        env_spec: EnvSpec {
            environment: "microworld".to_string(),
            family,
            seed,
        },
    };
    let procedure = GroundTruthProcedure::plan(&spec);
    (task, spec, procedure)
}
