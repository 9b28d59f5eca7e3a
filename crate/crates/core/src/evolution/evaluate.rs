//! Frozen-skill evaluation over a held-out task set.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{EnvError, Environment};
use crate::episode::{derive_seed, run_episode, Episode, EpisodeRequest};
use crate::executor::Executor;
use crate::microworld::TaskFamily;
use crate::skill::Skill;
use crate::trajectory::Task;

/// Builds one environment per evaluation worker.
pub type EnvFactory = dyn Fn() -> Result<Box<dyn Environment>, EnvError> + Send + Sync;

/// Stream tag mixed into evaluation executor seeds.
const EVAL_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyCount {
    pub episodes: usize,
    pub successes: usize,
}

impl FamilyCount {
    pub fn rate(&self) -> Option<f64> {
        (self.episodes > 0).then(|| self.successes as f64 / self.episodes as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub stage: usize,
    pub skill_version: u64,
    pub episodes: usize,
    pub successes: usize,
    /// Absent for an empty task set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate: Option<f64>,
    pub per_family: BTreeMap<TaskFamily, FamilyCount>,
    /// Episodes cut short by an environment or provider error (counted as failures).
    pub aborted: usize,
    pub wall_clock_ms: u64,
}

impl EvaluationReport {
    pub fn is_empty(&self) -> bool {
        self.episodes == 0
    }
}

pub struct EvalRequest<'a> {
    pub stage: usize,
    pub skill: &'a Skill,
    pub tasks: &'a [Task],
    pub executor: &'a Executor,
    pub horizon: usize,
    pub master_seed: u64,
}

/// Executor seed of the `index`-th evaluation task; identical at every stage.
pub fn eval_seed(master_seed: u64, index: usize) -> u64 {
    derive_seed(&[master_seed, EVAL_STREAM, index as u64])
}

/// Runs every task once against the frozen skill. Episodes run in parallel.
pub fn evaluate(req: &EvalRequest<'_>, make_env: &EnvFactory) -> (EvaluationReport, Vec<Episode>) {
    let started = Instant::now();
    let episodes: Vec<Episode> = req
        .tasks
        .par_iter()
        .enumerate()
        .map_init(make_env, |env, (i, task)| {
            let env = match env {
                Ok(env) => env,
                Err(e) => {
                    return Episode {
                        trajectory: None,
                        success: false,
                        aborted: Some(e.to_string()),
                    }
                }
            };
            run_episode(
                env.as_mut(),
                req.executor,
                EpisodeRequest {
                    trajectory_id: format!("s{:02}-eval-{}", req.stage, task.task_id),
                    task,
                    skill: req.skill,
                    horizon: req.horizon,
                    executor_seed: eval_seed(req.master_seed, i),
                },
            )
        })
        .collect();

    let mut per_family: BTreeMap<TaskFamily, FamilyCount> = BTreeMap::new();
    for (task, ep) in req.tasks.iter().zip(&episodes) {
        let c = per_family.entry(task.env_spec.family).or_default();
        c.episodes += 1;
        c.successes += usize::from(ep.success);
    }
    let successes = episodes.iter().filter(|e| e.success).count();
    let report = EvaluationReport {
        stage: req.stage,
        skill_version: req.skill.version,
        episodes: episodes.len(),
        successes,
        rate: (!episodes.is_empty()).then(|| successes as f64 / episodes.len() as f64),
        per_family,
        aborted: episodes.iter().filter(|e| e.aborted.is_some()).count(),
        wall_clock_ms: started.elapsed().as_millis() as u64,
    };
    (report, episodes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::InitialSkill;
    use crate::env::MicroWorldEnv;
    use crate::evolution::TaskSpec;
    use crate::executor::{ExecutorConfig, SkillMode};

    fn microworld() -> Result<Box<dyn Environment>, EnvError> {
        Ok(Box::new(MicroWorldEnv::new(30)))
    }

    fn run(skill: &Skill, eps: f64, mode: SkillMode, tasks: &[Task]) -> EvaluationReport {
        let executor = Executor::RuleBased(ExecutorConfig {
            lapse_rate: eps,
            skill_mode: mode,
            ..ExecutorConfig::default()
        });
        let req = EvalRequest {
            stage: 0,
            skill,
            tasks,
            executor: &executor,
            horizon: 30,
            master_seed: 1,
        };
        evaluate(&req, &microworld).0
    }

    #[test]
    fn empty_task_set_has_no_rate() {
        let r = run(&Skill::empty(), 0.0, SkillMode::Static, &[]);
        assert!(r.is_empty());
        assert_eq!(r.rate, None);
    }

    #[test]
    fn complete_skill_beats_no_skill() {
        let tasks = TaskSpec {
            families: TaskFamily::ALL.to_vec(),
            per_family: 20,
            first_seed: 100_000,
        }
        .tasks();
        let complete = Skill::initial(InitialSkill::Complete.rules()).unwrap();
        let with_skill = run(&complete, 0.0, SkillMode::Static, &tasks);
        assert!(with_skill.rate.unwrap() >= 0.99, "{with_skill:?}");
        let without = run(&complete, 0.0, SkillMode::None, &tasks);
        assert!(without.rate.unwrap() < with_skill.rate.unwrap());
        assert!(without.rate.unwrap() <= 0.4, "{without:?}");
        let again = run(&complete, 0.0, SkillMode::Static, &tasks);
        assert_eq!(again.successes, with_skill.successes);
    }
}
