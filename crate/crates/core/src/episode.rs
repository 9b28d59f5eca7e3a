//! Runs one episode: reset, then ask the executor and step until done or the
//! horizon is reached.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::Environment;
use crate::executor::{Executor, ExecutorError};
use crate::skill::Skill;
use crate::trajectory::{ActionStatus, History, SeedRecord, Step, StepTrace, Task, Trajectory};

/// Observation recorded when the model produced no usable action.
pub const NO_ACTION_OBSERVATION: &str = "Nothing happens. No usable action was produced.";

/// SplitMix64 over a sequence of words; used to derive per-episode seeds.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut state: u64 = 0x243F_6A88_85A3_08D3;
    for p in parts {
        state ^= *p;
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        state = z ^ (z >> 31);
    }
    state
}

#[derive(Debug)]
pub struct Episode {
    /// `None` when not a single step was taken.
    pub trajectory: Option<Trajectory>,
    pub success: bool,
    /// Why the episode ended early, if it did.
    pub aborted: Option<String>,
}

pub struct EpisodeRequest<'a> {
    pub trajectory_id: String,
    pub task: &'a Task,
    pub skill: &'a Skill,
    pub horizon: usize,
    pub executor_seed: u64,
}

pub fn run_episode(env: &mut dyn Environment, executor: &Executor, req: EpisodeRequest<'_>) -> Episode {
    let reset = match env.reset(req.task) {
        Ok(r) => r,
        Err(e) => {
            log::warn!("{}: reset failed: {e}", req.task.task_id);
            return Episode {
                trajectory: None,
                success: false,
                aborted: Some(e.to_string()),
            };
        }
    };
    let rule_based = matches!(executor, Executor::RuleBased(_));
    let mut rng = ChaCha8Rng::seed_from_u64(req.executor_seed);
    let mut history = History::start(reset.observation);
    let mut steps = Vec::new();
    let mut traces = Vec::new();
    let mut success = false;
    let mut aborted = None;

    for t in 1..=req.horizon {
        let observation = history.last_observation().to_string();
        let decision = match executor.next_action(
            req.task,
            req.skill,
            &history,
            reset.action_space.as_deref(),
            &traces,
            &mut rng,
        ) {
            Ok(d) => d,
            Err(ExecutorError::UnparseableModelOutput) => {
                steps.push(Step {
                    index: t,
                    observation,
                    action: String::new(),
                    action_status: ActionStatus::RejectedByEnv,
                    image_ref: None,
                });
                traces.push(StepTrace::default());
                history.push("", NO_ACTION_OBSERVATION);
                continue;
            }
            Err(e) => {
                aborted = Some(e.to_string());
                break;
            }
        };
        let outcome = match env.step(&decision.action) {
            Ok(o) => o,
            Err(e) => {
                log::warn!("{}: step {t} failed: {e}", req.task.task_id);
                aborted = Some(e.to_string());
                break;
            }
        };
        steps.push(Step {
            index: t,
            observation,
            action: decision.action.clone(),
            action_status: if outcome.accepted {
                ActionStatus::Accepted
            } else {
                ActionStatus::RejectedByEnv
            },
            image_ref: None,
        });
        traces.push(decision.trace.unwrap_or_default());
        if outcome.done {
            success = outcome.success;
            break;
        }
        history.push(decision.action, outcome.observation);
    }

    let trajectory = (!steps.is_empty()).then(|| Trajectory {
        trajectory_id: req.trajectory_id,
        task: req.task.clone(),
        steps,
        success,
        skill_version_used: req.skill.version,
        seed_record: SeedRecord {
            world_seed: req.task.env_spec.seed,
            executor_seed: req.executor_seed,
            horizon: req.horizon,
            skill_digest: req.skill.body_digest.clone(),
            executor: executor.config().clone(),
            sidecar: rule_based.then_some(traces),
        },
    });
    Episode {
        trajectory,
        success,
        aborted,
    }
}
