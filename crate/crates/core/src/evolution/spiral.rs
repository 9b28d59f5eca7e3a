//! The evolution loop: execute, reflect, buffer, revise every `B` signals,
//! evaluate the frozen new version.

use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use super::config::{EnvironmentConfig, EvolutionConfig, Mode, ReflectionSource, RevisionSource};
use super::evaluate::{evaluate, EnvFactory, EvalRequest, EvaluationReport};
use super::rundir::{RunDir, RunDirError, RunManifest, RunSummary, MANIFEST, SUMMARY};
use super::tasks::TaskStream;
use crate::env::{EnvError, Environment, MicroWorldEnv, ProtocolEnv};
use crate::episode::{derive_seed, run_episode, EpisodeRequest};
use crate::executor::{Executor, Provider, RemoteExecutor};
use crate::gateway::{AuditSink, FileAudit, Gateway, NullAudit};
use crate::reflection::{reflect, ReflectionError, ReflectionProvider, ReflectionRecord};
use crate::revision::{
    revise, rewrite_skill, summarize, ReflectionBuffer, RevisionError, RevisionProvider, TrajectorySummary,
};
use crate::skill::Skill;
use crate::store::{SkillStore, StoreError};
use crate::trajectory::Trajectory;

const TRAIN_STREAM: u64 = 1;
const TRAIN_ORDER: u64 = 3;

#[derive(Debug, Error)]
pub enum SpiralError {
    #[error("run directory: {0}")]
    RunDir(#[from] RunDirError),
    #[error("skill store: {0}")]
    Store(#[from] StoreError),
    #[error("invalid initial skill: {0}")]
    InitialSkill(String),
    #[error("environment: {0}")]
    Env(#[from] EnvError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EpisodeCap,
}

impl StopReason {
    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::Completed => "completed",
            StopReason::EpisodeCap => "episode_cap",
        }
    }
}

/// Everything the loop needs beyond the config.
pub struct Runtime {
    pub gateway: Option<Arc<Gateway>>,
    pub env_factory: Arc<EnvFactory>,
}

impl Runtime {
    /// Environments and gateway as the config describes them. Gateway calls
    /// are audited into the run directory when there is one.
    pub fn from_config(config: &EvolutionConfig, run_dir: Option<&RunDir>) -> Result<Self, SpiralError> {
        let gateway = match (&config.gateway, config.uses_gateway()) {
            (Some(g), true) => {
                let audit: Arc<dyn AuditSink> = match run_dir {
                    Some(dir) => Arc::new(FileAudit::create(&dir.path("audit/gateway.jsonl")).map_err(RunDirError::Io)?),
                    None => Arc::new(NullAudit),
                };
                Some(Arc::new(Gateway::http(g.clone(), audit)))
            }
            _ => None,
        };
        Ok(Self {
            gateway,
            env_factory: env_factory(&config.environment, config.horizon),
        })
    }
}

pub fn env_factory(env: &EnvironmentConfig, horizon: usize) -> Arc<EnvFactory> {
    match env.clone() {
        EnvironmentConfig::Microworld => Arc::new(move || Ok(Box::new(MicroWorldEnv::new(horizon)) as Box<dyn Environment>)),
        EnvironmentConfig::Subprocess { command, .. } => {
            let timeout = env.peer_timeout();
            Arc::new(move || {
                let (program, args) = command.split_first().expect("validated non-empty command");
                ProtocolEnv::spawn(program, args, timeout)
                    .map(|e| Box::new(e) as Box<dyn Environment>)
                    .map_err(|e| EnvError::Io(e.to_string()))
            })
        }
    }
}

#[derive(Debug, Clone)]
pub struct SpiralOutcome {
    pub final_skill: Skill,
    /// Every version produced, starting with the initial skill.
    pub versions: Vec<Skill>,
    pub reports: Vec<EvaluationReport>,
    pub revisions: usize,
    pub train_episodes: usize,
    pub stopped: StopReason,
    /// Revision attempts that were aborted (buffer kept).
    pub failed_revisions: usize,
}

impl SpiralOutcome {
    pub fn initial_rate(&self) -> Option<f64> {
        self.reports.first().and_then(|r| r.rate)
    }

    pub fn final_rate(&self) -> Option<f64> {
        self.reports.last().and_then(|r| r.rate)
    }
}

struct Driver<'a> {
    config: &'a EvolutionConfig,
    runtime: &'a Runtime,
    run_dir: Option<&'a RunDir>,
    store: Option<SkillStore>,
    executor: Executor,
    test_tasks: Vec<crate::trajectory::Task>,
    reports: Vec<EvaluationReport>,
    versions: Vec<Skill>,
}

impl Driver<'_> {
    fn evaluate(&mut self, stage: usize, skill: &Skill) -> Result<(), SpiralError> {
        let req = EvalRequest {
            stage,
            skill,
            tasks: &self.test_tasks,
            executor: &self.executor,
            horizon: self.config.horizon,
            master_seed: self.config.master_seed,
        };
        let (report, episodes) = evaluate(&req, self.runtime.env_factory.as_ref());
        log::info!(
            "stage {stage}: skill v{} success {}/{}",
            skill.version,
            report.successes,
            report.episodes
        );
        if let Some(dir) = self.run_dir {
            for traj in episodes.iter().filter_map(|e| e.trajectory.as_ref()) {
                dir.write_trajectory("eval", traj)?;
            }
            dir.write_report(&report)?;
            self.reports.push(report);
            dir.write_csv(&self.reports)?;
        } else {
            self.reports.push(report);
        }
        Ok(())
    }

    fn save(&mut self, skill: &Skill) -> Result<(), SpiralError> {
        if let Some(store) = &self.store {
            store.save_version(skill)?;
        }
        self.versions.push(skill.clone());
        Ok(())
    }

    fn audit(&self, name: &str, value: &impl Serialize) -> Result<(), SpiralError> {
        if let Some(dir) = self.run_dir {
            dir.append_audit(name, value)?;
        }
        Ok(())
    }
}

fn build_executor(config: &EvolutionConfig, runtime: &Runtime) -> Executor {
    match (config.executor.provider, &runtime.gateway) {
        (Provider::RemoteModel, Some(g)) => Executor::Remote(RemoteExecutor::new(config.executor.clone(), g.clone())),
        (Provider::RemoteModel, None) => panic!("remote executor configured without a gateway"),
        (Provider::RuleBased, _) => Executor::RuleBased(config.executor.clone()),
    }
}

/// Runs the whole loop. With a run directory, every artifact is written as it is produced.
pub fn run_spiral(
    config: &EvolutionConfig,
    runtime: &Runtime,
    run_dir: Option<&RunDir>,
) -> Result<SpiralOutcome, SpiralError> {
    let config = &config.clone().resolved();
    let executor = build_executor(config, runtime);
    let executor_digest = config.executor.digest();
    if let Some(dir) = run_dir {
        let created = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let manifest = RunManifest {
            run_id: format!("{}-seed{}-{created}", config.mode, config.master_seed),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_unix_secs: created,
            mode: config.mode.to_string(),
            master_seed: config.master_seed,
            executor_digest: executor_digest.clone(),
            config: config.clone(),
        };
        dir.write_json(MANIFEST, &manifest)?;
        dir.write_text(super::rundir::CONFIG, &config.to_toml())?;
    }

    let mut skill = Skill::initial(config.initial_skill.rules()).map_err(|e| SpiralError::InitialSkill(e.to_string()))?;
    let mut d = Driver {
        config,
        runtime,
        run_dir,
        store: run_dir.map(|dir| dir.store()).transpose()?,
        executor,
        test_tasks: config.test.tasks(),
        reports: Vec::new(),
        versions: Vec::new(),
    };
    d.save(&skill)?;
    d.evaluate(0, &skill)?;

    let reflection = match (config.providers.reflection, &runtime.gateway) {
        (ReflectionSource::Remote, Some(g)) => ReflectionProvider::Remote(g.clone()),
        _ => ReflectionProvider::Oracle,
    };
    let revision = match (config.providers.revision, &runtime.gateway) {
        (RevisionSource::Remote, Some(g)) => RevisionProvider::Remote(g.clone()),
        _ => RevisionProvider::Scripted,
    };

    let mut revisions = 0;
    let mut failed_revisions = 0;
    let mut episodes = 0;
    let mut stopped = StopReason::Completed;
    if config.mode.evolves() && config.stage_count > 0 {
        let mut stream = TaskStream::new(
            config.train.tasks(),
            derive_seed(&[config.master_seed, TRAIN_ORDER]),
        );
        let mut env = (runtime.env_factory)()?;
        let mut buffer = ReflectionBuffer::new(config.revision_interval);
        let mut summaries: Vec<TrajectorySummary> = Vec::new();

        while revisions < config.stage_count {
            if episodes == config.max_train_episodes {
                log::warn!(
                    "stopping after {episodes} training episodes with {revisions}/{} revisions",
                    config.stage_count
                );
                stopped = StopReason::EpisodeCap;
                break;
            }
            let task = stream.next_task().clone();
            let ep = run_episode(
                env.as_mut(),
                &d.executor,
                EpisodeRequest {
                    trajectory_id: format!("e{episodes:05}-v{}-{}", skill.version, task.task_id),
                    task: &task,
                    skill: &skill,
                    horizon: config.horizon,
                    executor_seed: derive_seed(&[config.master_seed, TRAIN_STREAM, episodes as u64]),
                },
            );
            episodes += 1;
            if let Some(reason) = &ep.aborted {
                log::warn!("training episode {episodes} aborted: {reason}");
                if ep.trajectory.is_none() {
                    // A dead peer: start a fresh environment for the next episode.
                    env = (runtime.env_factory)()?;
                }
            }
            let Some(traj) = ep.trajectory else { continue };
            assert_eq!(traj.seed_record.executor.digest(), executor_digest, "executor config changed mid-run");
            if let Some(dir) = run_dir {
                dir.write_trajectory("train", &traj)?;
            }

            let next = match config.mode {
                Mode::SkillAware => {
                    collect(&mut d, &reflection, &traj, &skill, &mut buffer)?;
                    if !buffer.ready() {
                        continue;
                    }
                    match revise(&revision, &skill, buffer.records()) {
                        Ok(outcome) => {
                            let records = buffer.drain();
                            d.audit(
                                "revisions.jsonl",
                                &json!({
                                    "stage": revisions + 1,
                                    "version_before": skill.version,
                                    "version_after": outcome.skill.version,
                                    "input_record_ids": records.iter().map(|r| &r.record_id).collect::<Vec<_>>(),
                                    "consolidated": outcome.consolidated,
                                    "discards": outcome.discards,
                                    "diff": outcome.diff,
                                    "digest_before_appendix": outcome.digest_before_appendix,
                                    "digest_after_appendix": outcome.digest_after_appendix,
                                    "appendix": outcome.skill.appendix,
                                }),
                            )?;
                            outcome.skill
                        }
                        Err(e) => {
                            failed_revisions += 1;
                            revision_failed(&d, revisions, &skill, &e)?;
                            continue;
                        }
                    }
                }
                Mode::SkillUnaware => {
                    summaries.push(summarize(&traj));
                    if summaries.len() < config.revision_interval {
                        continue;
                    }
                    let gateway = match &revision {
                        RevisionProvider::Remote(g) => Some(g.as_ref()),
                        RevisionProvider::Scripted => None,
                    };
                    match rewrite_skill(gateway, &skill, &summaries) {
                        Ok(next) => {
                            d.audit(
                                "revisions.jsonl",
                                &json!({
                                    "stage": revisions + 1,
                                    "version_before": skill.version,
                                    "version_after": next.version,
                                    "summaries": summaries,
                                    "body": next.body,
                                }),
                            )?;
                            summaries.clear();
                            next
                        }
                        Err(e) => {
                            failed_revisions += 1;
                            revision_failed(&d, revisions, &skill, &e)?;
                            continue;
                        }
                    }
                }
                Mode::NoSkill | Mode::StaticSkill => unreachable!("frozen modes never train"),
            };
            skill = next;
            revisions += 1;
            d.save(&skill)?;
            if config.eval_every_stage || revisions == config.stage_count {
                d.evaluate(revisions, &skill)?;
            }
        }
        if d.reports.last().is_some_and(|r| r.skill_version != skill.version) {
            d.evaluate(revisions, &skill)?;
        }
    }

    let outcome = SpiralOutcome {
        final_skill: skill,
        versions: d.versions,
        reports: d.reports,
        revisions,
        train_episodes: episodes,
        stopped,
        failed_revisions,
    };
    if let Some(dir) = run_dir {
        let summary = RunSummary {
            mode: config.mode.to_string(),
            master_seed: config.master_seed,
            revisions,
            stage_count: config.stage_count,
            train_episodes: episodes,
            stopped: stopped.as_str().to_string(),
            evaluated_stages: outcome.reports.iter().map(|r| r.stage).collect(),
            final_skill_version: outcome.final_skill.version,
            initial_rate: outcome.initial_rate(),
            final_rate: outcome.final_rate(),
        };
        dir.write_json(SUMMARY, &summary)?;
    }
    Ok(outcome)
}

fn collect(
    d: &mut Driver<'_>,
    provider: &ReflectionProvider,
    traj: &Trajectory,
    skill: &Skill,
    buffer: &mut ReflectionBuffer,
) -> Result<(), SpiralError> {
    let records: Vec<ReflectionRecord> = match reflect(provider, traj, skill, d.config.max_reflections) {
        Ok(records) => records,
        Err(e @ (ReflectionError::MissingSidecar(_) | ReflectionError::NoGroundTruth(_))) => {
            log::warn!("{}: oracle cannot reflect: {e}", traj.trajectory_id);
            Vec::new()
        }
        Err(ReflectionError::Provider(e)) => {
            log::warn!("{}: reflection provider failed: {e}", traj.trajectory_id);
            Vec::new()
        }
    };
    for record in records {
        d.audit("reflections.jsonl", &record)?;
        if let Err(violations) = buffer.push(record, traj, skill) {
            log::error!("{}: reflection rejected at the buffer: {violations:?}", traj.trajectory_id);
        }
    }
    Ok(())
}

fn revision_failed(d: &Driver<'_>, revisions: usize, skill: &Skill, e: &RevisionError) -> Result<(), SpiralError> {
    log::warn!("revision {} aborted, buffer kept: {e}", revisions + 1);
    d.audit(
        "revisions.jsonl",
        &json!({
            "stage": revisions + 1,
            "version_before": skill.version,
            "aborted": e.to_string(),
        }),
    )
}
