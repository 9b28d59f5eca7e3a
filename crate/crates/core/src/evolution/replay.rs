//! Re-executes a logged trajectory from its seed record and compares.

use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use serde::Serialize;
use thiserror::Error;

use super::evaluate::EnvFactory;
use super::rundir::{RunDir, RunDirError};
use crate::episode::{run_episode, EpisodeRequest};
use crate::executor::{Executor, Provider};
use crate::skill::Skill;
use crate::store::StoreError;
use crate::trajectory::{deserialize, LogError, Trajectory};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum ReplayVerdict {
    Identical,
    /// First differing step (1-based) or, for `step` past both ends, the outcome.
    Diverged { step: usize, expected: String, got: String },
}

impl ReplayVerdict {
    pub fn is_identical(&self) -> bool {
        *self == ReplayVerdict::Identical
    }
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trajectory {0} has no execution trace sidecar and cannot be re-executed")]
    MissingSidecar(String),
    #[error("skill version {0} not found: {1}")]
    SkillNotFound(u64, StoreError),
    #[error("skill version {version} has digest {found}, the trajectory recorded {recorded}")]
    DigestMismatch { version: u64, recorded: String, found: String },
    #[error("environment: {0}")]
    Env(#[from] crate::env::EnvError),
    #[error("reading trajectory: {0}")]
    Log(#[from] LogError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("run directory: {0}")]
    RunDir(#[from] RunDirError),
}

fn describe_step(traj: &Trajectory, i: usize) -> String {
    match traj.steps.get(i) {
        Some(s) => {
            let trace = traj.seed_record.sidecar.as_ref().and_then(|t| t.get(i));
            format!("{:?} {:?} {:?} {:?}", s.observation, s.action, s.action_status, trace)
        }
        None => "<no step>".to_string(),
    }
}

/// First point where `got` departs from `expected`.
pub fn compare(expected: &Trajectory, got: &Trajectory) -> ReplayVerdict {
    let n = expected.steps.len().max(got.steps.len());
    for i in 0..n {
        let same_step = expected.steps.get(i) == got.steps.get(i);
        let same_trace = expected.seed_record.sidecar.as_ref().map(|t| t.get(i))
            == got.seed_record.sidecar.as_ref().map(|t| t.get(i));
        if !(same_step && same_trace) {
            return ReplayVerdict::Diverged {
                step: i + 1,
                expected: describe_step(expected, i),
                got: describe_step(got, i),
            };
        }
    }
    if expected != got {
        return ReplayVerdict::Diverged {
            step: n + 1,
            expected: format!("success={} {:?}", expected.success, expected.seed_record.skill_digest),
            got: format!("success={} {:?}", got.success, got.seed_record.skill_digest),
        };
    }
    ReplayVerdict::Identical
}

/// Re-runs `traj` against `skill` in a fresh environment.
pub fn replay(traj: &Trajectory, skill: &Skill, make_env: &EnvFactory) -> Result<ReplayVerdict, ReplayError> {
    let seed = &traj.seed_record;
    if !traj.has_sidecar() || seed.executor.provider != Provider::RuleBased {
        return Err(ReplayError::MissingSidecar(traj.trajectory_id.clone()));
    }
    if skill.body_digest != seed.skill_digest {
        return Err(ReplayError::DigestMismatch {
            version: skill.version,
            recorded: seed.skill_digest.clone(),
            found: skill.body_digest.clone(),
        });
    }
    let executor = Executor::RuleBased(seed.executor.clone());
    let mut env = make_env()?;
    let ep = run_episode(
        env.as_mut(),
        &executor,
        EpisodeRequest {
            trajectory_id: traj.trajectory_id.clone(),
            task: &traj.task,
            skill,
            horizon: seed.horizon,
            executor_seed: seed.executor_seed,
        },
    );
    let _ = env.close();
    Ok(match ep.trajectory {
        Some(got) => compare(traj, &got),
        None => ReplayVerdict::Diverged {
            step: 1,
            expected: describe_step(traj, 0),
            got: ep.aborted.unwrap_or_else(|| "<no step>".to_string()),
        },
    })
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, ReplayError> {
    Ok(deserialize(BufReader::new(File::open(path)?))?)
}

/// Replays a trajectory log using the skill version stored in `run`.
pub fn replay_in_run(run: &RunDir, log: &Path, make_env: &EnvFactory) -> Result<ReplayVerdict, ReplayError> {
    let traj = load_trajectory(log)?;
    let store = run.store()?;
    let skill = store
        .load_version(traj.skill_version_used)
        .map_err(|e| ReplayError::SkillNotFound(traj.skill_version_used, e))?;
    replay(&traj, &skill, make_env)
}
