use serde::{Deserialize, Serialize};

use super::{appliance_for, World, WorldSpec, LAMP_LOCATION};
use crate::vocab::Treatment;

/// One required step of a ground-truth solution.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "subgoal", rename_all = "snake_case")]
pub enum SubGoal {
    /// Walk to a receptacle (locating an object, reaching an appliance or the destination).
    GoTo { receptacle: String },
    Open { receptacle: String },
    Take { object: String, from: String },
    Treat { object: String, treatment: Treatment },
    Put { object: String, receptacle: String },
    Examine { object: String },
}

impl SubGoal {
    pub fn action(&self) -> String {
        match self {
            SubGoal::GoTo { receptacle } => format!("go to {receptacle}"),
            SubGoal::Open { receptacle } => format!("open {receptacle}"),
            SubGoal::Take { object, .. } => format!("take {object}"),
            SubGoal::Treat { object, treatment } => format!("{} {object}", treatment.verb()),
            SubGoal::Put { object, receptacle } => format!("put {object} in/on {receptacle}"),
            SubGoal::Examine { object } => format!("examine {object}"),
        }
    }

    /// Whether the sub-goal's action is executable in `world`.
    pub fn precondition(&self, world: &World) -> bool {
        let at = |r: &str| world.agent_at.as_deref() == Some(r);
        let carrying = |o: &str| world.carried().is_some_and(|c| c.name == o);
        match self {
            SubGoal::GoTo { receptacle } => world.receptacle(receptacle).is_some() && !at(receptacle),
            SubGoal::Open { receptacle } => {
                at(receptacle) && world.receptacle(receptacle).is_some_and(|r| r.openable && !r.open)
            }
            SubGoal::Take { object, from } => {
                world.carried().is_none()
                    && at(from)
                    && world.receptacle(from).is_some_and(|r| r.open)
                    && world.object(object).and_then(|o| o.location.as_deref()) == Some(from.as_str())
            }
            SubGoal::Treat { object, treatment } => carrying(object) && at(appliance_for(*treatment)),
            SubGoal::Put { object, receptacle } => {
                carrying(object) && at(receptacle) && world.receptacle(receptacle).is_some_and(|r| r.open)
            }
            SubGoal::Examine { object } => carrying(object) && at(LAMP_LOCATION),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruthProcedure {
    pub subgoals: Vec<SubGoal>,
}

impl GroundTruthProcedure {
    /// Plans the reference solution by simulating it on a copy of the world.
    pub fn plan(spec: &WorldSpec) -> Self {
        let mut world = World::from_spec(spec, usize::MAX);
        let mut subgoals = Vec::new();
        let mut push = |world: &mut World, sg: SubGoal| {
            debug_assert!(sg.precondition(world), "{sg:?}");
            let r = world.step(&sg.action());
            debug_assert!(r.accepted, "{sg:?}: {}", r.observation);
            subgoals.push(sg);
        };
        let goto_open = |world: &mut World, push: &mut dyn FnMut(&mut World, SubGoal), r: &str| {
            if world.agent_at.as_deref() != Some(r) {
                push(world, SubGoal::GoTo { receptacle: r.to_string() });
            }
            if !world.receptacle(r).unwrap().open {
                push(world, SubGoal::Open { receptacle: r.to_string() });
            }
        };

        let goal = spec.goal.clone();
        let targets: Vec<String> = spec
            .objects
            .iter()
            .filter(|o| o.kind == goal.target_kind)
            .take(goal.count)
            .map(|o| o.name.clone())
            .collect();

        for object in targets {
            let from = world.object(&object).unwrap().location.clone().unwrap();
            goto_open(&mut world, &mut push, &from);
            push(&mut world, SubGoal::Take { object: object.clone(), from });
            if let Some(t) = goal.family.treatment() {
                let appliance = appliance_for(t);
                if world.agent_at.as_deref() != Some(appliance) {
                    push(&mut world, SubGoal::GoTo { receptacle: appliance.to_string() });
                }
                push(&mut world, SubGoal::Treat { object: object.clone(), treatment: t });
            }
            match &goal.destination {
                Some(dest) => {
                    goto_open(&mut world, &mut push, dest);
                    push(&mut world, SubGoal::Put { object, receptacle: dest.clone() });
                }
                None => {
                    if world.agent_at.as_deref() != Some(LAMP_LOCATION) {
                        push(&mut world, SubGoal::GoTo { receptacle: LAMP_LOCATION.to_string() });
                    }
                    push(&mut world, SubGoal::Examine { object });
                }
            }
        }
        GroundTruthProcedure { subgoals }
    }

    pub fn actions(&self) -> Vec<String> {
        self.subgoals.iter().map(SubGoal::action).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::super::{sample_task, TaskFamily};
    use super::*;
    use crate::trajectory::DEFAULT_HORIZON;

    #[test]
    fn clean_subgoal_precedes_put() {
        for seed in 0..20 {
            let (_, _, gt) = sample_task(TaskFamily::CleanPut, seed);
            let clean = gt
                .subgoals
                .iter()
                .position(|s| matches!(s, SubGoal::Treat { treatment: Treatment::Clean, .. }))
                .expect("clean sub-goal");
            let put = gt.subgoals.iter().position(|s| matches!(s, SubGoal::Put { .. })).unwrap();
            assert!(clean < put);
        }
    }

    #[test]
    fn ground_truth_solves_every_sampled_task() {
        for family in TaskFamily::ALL {
            for seed in 0..100 {
                let (_, spec, gt) = sample_task(family, seed);
                assert!(gt.subgoals.len() <= 12, "{family} {seed}: {} steps", gt.subgoals.len());
                let mut world = World::from_spec(&spec, DEFAULT_HORIZON);
                let mut last = None;
                for sg in &gt.subgoals {
                    assert!(sg.precondition(&world), "{family} {seed}: {sg:?}");
                    let r = world.step(&sg.action());
                    assert!(r.accepted, "{family} {seed}: {}", r.observation);
                    last = Some(r);
                }
                assert!(last.unwrap().success, "{family} {seed}");
            }
        }
    }

    #[test]
    fn put_seven_ground_truth_succeeds() {
        let (_, spec, gt) = sample_task(TaskFamily::Put, 7);
        let mut world = World::from_spec(&spec, DEFAULT_HORIZON);
        let results: Vec<_> = gt.actions().iter().map(|a| world.step(a)).collect();
        assert!(results.last().unwrap().success);
        assert!(results[..results.len() - 1].iter().all(|r| !r.success));
    }
}
