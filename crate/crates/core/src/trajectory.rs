//! Episodes `(I, o_1, a_1, ..., o_T, a_T, r)`, their within-episode histories,
//! and the line-delimited trajectory log format.
//!
//! A log holds one header record, one record per step and one footer record,
//! each a single JSON object on its own line.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::executor::ExecutorConfig;
use crate::microworld::TaskFamily;
use crate::skill::RuleId;

pub const DEFAULT_HORIZON: usize = 30;
pub const LOG_FORMAT: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvSpec {
    /// `microworld` for the built-in world, otherwise a name for an external peer.
    pub environment: String,
    pub family: TaskFamily,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Task {
    pub task_id: String,
    pub instruction: String,
    pub env_spec: EnvSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Accepted,
    RejectedByEnv,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    /// 1-based.
    pub index: usize,
    pub observation: String,
    pub action: String,
    pub action_status: ActionStatus,
    /// Opaque image reference attached by external environments; never interpreted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
}

/// Per-step execution trace written by the rule-based executor.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTrace {
    pub applied_rule_ids: Vec<RuleId>,
    pub lapse: bool,
    /// The action the applied rule prescribed, when a lapse replaced it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prescribed: Option<String>,
}

/// Everything needed to re-execute an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub world_seed: u64,
    pub executor_seed: u64,
    pub horizon: usize,
    pub skill_digest: String,
    pub executor: ExecutorConfig,
    /// Per-step traces; present only for rule-based executions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sidecar: Option<Vec<StepTrace>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub trajectory_id: String,
    pub task: Task,
    pub steps: Vec<Step>,
    /// Final success signal `r`.
    pub success: bool,
    pub skill_version_used: u64,
    pub seed_record: SeedRecord,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn outcome(&self) -> u8 {
        u8::from(self.success)
    }

    pub fn trace(&self, index: usize) -> Option<&StepTrace> {
        self.seed_record.sidecar.as_ref()?.get(index.checked_sub(1)?)
    }

    pub fn has_sidecar(&self) -> bool {
        self.seed_record.sidecar.is_some()
    }

    /// Step by 1-based index.
    pub fn step(&self, index: usize) -> Option<&Step> {
        self.steps.get(index.checked_sub(1)?)
    }
}

/// `h_t = (o_1, a_1, ..., o_t)`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct History {
    pub observations: Vec<String>,
    pub actions: Vec<String>,
}

impl History {
    pub fn start(first_observation: impl Into<String>) -> Self {
        History {
            observations: vec![first_observation.into()],
            actions: Vec::new(),
        }
    }

    /// Current step number `t`.
    pub fn t(&self) -> usize {
        self.observations.len()
    }

    pub fn last_observation(&self) -> &str {
        self.observations.last().map(String::as_str).unwrap_or("")
    }

    pub fn last_action(&self) -> Option<&str> {
        self.actions.last().map(String::as_str)
    }

    pub fn push(&mut self, action: impl Into<String>, next_observation: impl Into<String>) {
        self.actions.push(action.into());
        self.observations.push(next_observation.into());
    }

    /// `(o_1, a_1), (o_2, a_2), ..., (o_t, None)`.
    pub fn pairs(&self) -> impl Iterator<Item = (&str, Option<&str>)> {
        self.observations
            .iter()
            .enumerate()
            .map(|(i, o)| (o.as_str(), self.actions.get(i).map(String::as_str)))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("history index {t} out of range 1..={len}")]
pub struct IndexOutOfRange {
    pub t: usize,
    pub len: usize,
}

pub fn history_at(traj: &Trajectory, t: usize) -> Result<History, IndexOutOfRange> {
    if t == 0 || t > traj.steps.len() {
        return Err(IndexOutOfRange {
            t,
            len: traj.steps.len(),
        });
    }
    Ok(History {
        observations: traj.steps[..t].iter().map(|s| s.observation.clone()).collect(),
        actions: traj.steps[..t - 1].iter().map(|s| s.action.clone()).collect(),
    })
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },
    #[error("truncated stream: {0}")]
    TruncatedStream(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Record {
    Header {
        format: u32,
        trajectory_id: String,
        task: Task,
        skill_version_used: u64,
        seed_record: HeaderSeeds,
    },
    Step {
        #[serde(flatten)]
        step: Step,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trace: Option<StepTrace>,
    },
    Footer {
        steps: usize,
        outcome: u8,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct HeaderSeeds {
    world_seed: u64,
    executor_seed: u64,
    horizon: usize,
    skill_digest: String,
    executor: ExecutorConfig,
    sidecar: bool,
}

pub fn serialize(traj: &Trajectory, out: &mut impl Write) -> std::io::Result<()> {
    let sr = &traj.seed_record;
    let header = Record::Header {
        format: LOG_FORMAT,
        trajectory_id: traj.trajectory_id.clone(),
        task: traj.task.clone(),
        skill_version_used: traj.skill_version_used,
        seed_record: HeaderSeeds {
            world_seed: sr.world_seed,
            executor_seed: sr.executor_seed,
            horizon: sr.horizon,
            skill_digest: sr.skill_digest.clone(),
            executor: sr.executor.clone(),
            sidecar: sr.sidecar.is_some(),
        },
    };
    write_record(out, &header)?;
    for step in &traj.steps {
        let trace = traj.trace(step.index).cloned();
        write_record(
            out,
            &Record::Step {
                step: step.clone(),
                trace,
            },
        )?;
    }
    write_record(
        out,
        &Record::Footer {
            steps: traj.steps.len(),
            outcome: traj.outcome(),
        },
    )
}

fn write_record(out: &mut impl Write, record: &Record) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, record)?;
    out.write_all(b"\n")
}

pub fn to_log_string(traj: &Trajectory) -> String {
    let mut buf = Vec::new();
    serialize(traj, &mut buf).expect("writing to a Vec cannot fail");
    String::from_utf8(buf).expect("json is utf-8")
}

pub fn deserialize(input: impl BufRead) -> Result<Trajectory, LogError> {
    let mut header = None;
    let mut steps = Vec::new();
    let mut traces = Vec::new();
    let mut footer = None;
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| LogError::MalformedRecord {
            line: line_no,
            reason,
        };
        if footer.is_some() {
            return Err(malformed("record after footer".into()));
        }
        let record: Record = serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        match record {
            Record::Header {
                format,
                trajectory_id,
                task,
                skill_version_used,
                seed_record,
            } => {
                if header.is_some() || line_no != 1 {
                    return Err(malformed("unexpected header".into()));
                }
                if format != LOG_FORMAT {
                    return Err(malformed(format!("unsupported format {format}")));
                }
                header = Some((trajectory_id, task, skill_version_used, seed_record));
            }
            Record::Step { step, trace } => {
                let Some((.., seeds)) = &header else {
                    return Err(malformed("step before header".into()));
                };
                if step.index != steps.len() + 1 {
                    return Err(malformed(format!(
                        "step index {} where {} expected",
                        step.index,
                        steps.len() + 1
                    )));
                }
                if seeds.sidecar != trace.is_some() {
                    return Err(malformed("trace presence disagrees with header".into()));
                }
                steps.push(step);
                traces.extend(trace);
            }
            Record::Footer { steps: n, outcome } => {
                if header.is_none() {
                    return Err(malformed("footer before header".into()));
                }
                if n != steps.len() || outcome > 1 || n == 0 {
                    return Err(malformed(format!(
                        "footer claims {n} steps / outcome {outcome}, read {}",
                        steps.len()
                    )));
                }
                footer = Some(outcome);
            }
        }
    }
    let (trajectory_id, task, skill_version_used, seeds) =
        header.ok_or_else(|| LogError::TruncatedStream("missing header".into()))?;
    let outcome = footer.ok_or_else(|| LogError::TruncatedStream("missing footer".into()))?;
    Ok(Trajectory {
        trajectory_id,
        task,
        steps,
        success: outcome == 1,
        skill_version_used,
        seed_record: SeedRecord {
            world_seed: seeds.world_seed,
            executor_seed: seeds.executor_seed,
            horizon: seeds.horizon,
            skill_digest: seeds.skill_digest,
            executor: seeds.executor,
            sidecar: seeds.sidecar.then_some(traces),
        },
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn make_trajectory(actions: &[(&str, bool)], success: bool, with_trace: bool) -> Trajectory {
        let steps: Vec<Step> = actions
            .iter()
            .enumerate()
            .map(|(i, (a, ok))| Step {
                index: i + 1,
                observation: format!("obs {}", i + 1),
                action: a.to_string(),
                action_status: if *ok {
                    ActionStatus::Accepted
                } else {
                    ActionStatus::RejectedByEnv
                },
                image_ref: None,
            })
            .collect();
        let n = steps.len();
        Trajectory {
            trajectory_id: "t".into(),
            task: Task {
                task_id: "put-1".into(),
                instruction: "put a apple in the shelf".into(),
                env_spec: EnvSpec {
                    environment: "microworld".into(),
                    family: TaskFamily::Put,
                    seed: 1,
                },
            },
            steps,
            success,
            skill_version_used: 0,
            seed_record: SeedRecord {
                world_seed: 1,
                executor_seed: 2,
                horizon: DEFAULT_HORIZON,
                skill_digest: "d".into(),
                executor: ExecutorConfig::default(),
                sidecar: with_trace.then(|| vec![StepTrace::default(); n]),
            },
        }
    }

    #[test]
    fn history_boundaries() {
        let t = make_trajectory(&[("look", true), ("go to desk", true), ("look", false)], false, false);
        let h1 = history_at(&t, 1).unwrap();
        assert_eq!(h1.observations, vec!["obs 1"]);
        assert!(h1.actions.is_empty());
        let h3 = history_at(&t, 3).unwrap();
        assert_eq!(h3.observations.len(), 3);
        assert_eq!(h3.actions, vec!["look", "go to desk"]);
        assert_eq!(history_at(&t, 0), Err(IndexOutOfRange { t: 0, len: 3 }));
        assert_eq!(history_at(&t, 4), Err(IndexOutOfRange { t: 4, len: 3 }));
    }

    #[test]
    fn one_step_log_has_three_records() {
        let t = make_trajectory(&[("look", true)], true, true);
        let log = to_log_string(&t);
        assert_eq!(log.lines().count(), 3);
        assert_eq!(deserialize(log.as_bytes()).unwrap(), t);
    }

    #[test]
    fn missing_footer_is_truncation() {
        let t = make_trajectory(&[("look", true), ("look", true)], true, false);
        let log = to_log_string(&t);
        let cut: String = log.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(deserialize(cut.as_bytes()), Err(LogError::TruncatedStream(_))));
    }

    #[test]
    fn garbage_line_is_malformed() {
        let t = make_trajectory(&[("look", true)], true, false);
        let log = to_log_string(&t).replacen("\"step\"", "\"stpe\"", 1);
        assert!(matches!(
            deserialize(log.as_bytes()),
            Err(LogError::MalformedRecord { line: 2, .. })
        ));
    }

    fn arb_trajectory() -> impl Strategy<Value = Trajectory> {
        (
            prop::collection::vec(("[a-z ]{1,20}", "\\PC{0,40}", any::<bool>(), any::<bool>()), 1..30),
            any::<bool>(),
            any::<bool>(),
            any::<u64>(),
        )
            .prop_map(|(raw, success, with_trace, seed)| {
                let mut t = make_trajectory(&[("x", true)], success, with_trace);
                t.seed_record.executor_seed = seed;
                t.steps = raw
                    .iter()
                    .enumerate()
                    .map(|(i, (a, o, ok, _))| Step {
                        index: i + 1,
                        observation: o.clone(),
                        action: a.clone(),
                        action_status: if *ok {
                            ActionStatus::Accepted
                        } else {
                            ActionStatus::RejectedByEnv
                        },
                        image_ref: None,
                    })
                    .collect();
                if with_trace {
                    t.seed_record.sidecar = Some(
                        raw.iter()
                            .map(|(.., lapse)| StepTrace {
                                applied_rule_ids: vec![RuleId::from("r1")],
                                lapse: *lapse,
                                prescribed: lapse.then(|| "look".to_string()),
                            })
                            .collect(),
                    );
                }
                t
            })
    }

    proptest! {
        #[test]
        fn log_round_trip(t in arb_trajectory()) {
            let log = to_log_string(&t);
            prop_assert_eq!(deserialize(log.as_bytes()).unwrap(), t);
        }

        #[test]
        fn history_matches_flat_slice(t in arb_trajectory(), pick in any::<prop::sample::Index>()) {
            let idx = pick.index(t.len()) + 1;
            // Flatten to o1 a1 o2 a2 ... and cut right after o_idx.
            let flat: Vec<&str> = t.steps.iter().flat_map(|s| [s.observation.as_str(), s.action.as_str()]).collect();
            let prefix = &flat[..2 * idx - 1];
            let h = history_at(&t, idx).unwrap();
            let rebuilt: Vec<&str> = h.pairs().flat_map(|(o, a)| std::iter::once(o).chain(a)).collect();
            prop_assert_eq!(rebuilt, prefix.to_vec());
        }
    }
}
