//! The frozen executor: picks the next action from the instruction, the skill and the history.
//!
//! Two providers: a deterministic rule matcher with seeded execution lapses,
//! and a remote model reached through the gateway. Neither keeps state across
//! calls; the only mutable input is the episode-owned RNG.

mod belief;
mod remote;
mod rules;

use std::collections::BTreeSet;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::GatewayError;
use crate::skill::{RuleId, Skill};
use crate::trajectory::{History, StepTrace, Task};

pub use belief::{kind_of, Belief, GoalView};
pub use remote::{parse_action_line, RemoteExecutor, EXECUTOR_TEMPLATE};
pub use rules::{prescribe, treatment_of};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provider {
    #[default]
    RuleBased,
    RemoteModel,
}

/// Which ablation arm the executor serves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkillMode {
    /// Ignore the skill entirely; act at random.
    None,
    Static,
    #[default]
    Evolving,
}

impl fmt::Display for SkillMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkillMode::None => "none",
            SkillMode::Static => "static",
            SkillMode::Evolving => "evolving",
        })
    }
}

pub const DEFAULT_LAPSE_SPAN: usize = 6;

fn default_lapse_span() -> usize {
    DEFAULT_LAPSE_SPAN
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExecutorConfig {
    pub provider: Provider,
    /// Probability ε of deviating from an applicable rule.
    pub lapse_rate: f64,
    /// Multiplier on ε for rules the appendix reminds about.
    pub appendix_damping: f64,
    /// Steps a rule stays disregarded after the executor lapsed on it.
    #[serde(default = "default_lapse_span")]
    pub lapse_span: usize,
    /// Base seed; per-episode seeds are derived from it.
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template_id: Option<String>,
    pub skill_mode: SkillMode,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            provider: Provider::RuleBased,
            lapse_rate: 0.15,
            appendix_damping: 0.25,
            lapse_span: DEFAULT_LAPSE_SPAN,
            rng_seed: 0,
            prompt_template_id: None,
            skill_mode: SkillMode::Evolving,
        }
    }
}

impl ExecutorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.lapse_rate) {
            return Err(format!("lapse_rate {} outside [0, 1]", self.lapse_rate));
        }
        if !(0.0..=1.0).contains(&self.appendix_damping) {
            return Err(format!("appendix_damping {} outside [0, 1]", self.appendix_damping));
        }
        Ok(())
    }

    /// Content hash; stays constant for the whole run.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decision {
    pub action: String,
    /// Present for rule-based decisions only.
    pub trace: Option<StepTrace>,
}

#[derive(Debug, Error)]
pub enum ExecutorError {
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("model output is not a single action line")]
    UnparseableModelOutput,
}

/// Rules the executor lapsed on within the last `span` steps; it disregards
/// them until the span has passed.
pub fn lapsed_rules(prior: &[StepTrace], span: usize) -> BTreeSet<&RuleId> {
    prior[prior.len().saturating_sub(span)..]
        .iter()
        .filter(|t| t.lapse)
        .flat_map(|t| t.applied_rule_ids.first())
        .collect()
}

/// Rule-based `next_action`. The skill is ignored in `SkillMode::None`.
/// `prior` holds this episode's earlier step traces.
pub fn next_action(
    config: &ExecutorConfig,
    task: &Task,
    skill: &Skill,
    history: &History,
    action_space: Option<&[String]>,
    prior: &[StepTrace],
    rng: &mut ChaCha8Rng,
) -> Decision {
    let belief = Belief::from_history(history);
    let mut candidates: Vec<String> = match action_space {
        Some(space) if !space.is_empty() => space.to_vec(),
        _ => belief.candidate_actions(),
    };
    let goal = GoalView::parse(&task.instruction);

    let applicable = match (config.skill_mode, &goal) {
        (SkillMode::None, _) | (_, None) => None,
        (_, Some(goal)) => {
            let lapsed = lapsed_rules(prior, config.lapse_span);
            skill
                .live_rules()
                .filter(|r| !lapsed.contains(&r.rule_id))
                .find_map(|rule| {
                    let pred = rule.predicate()?;
                    prescribe(&pred, goal, &belief).map(|a| (rule, a))
                })
        }
    };

    let Some((rule, prescribed)) = applicable else {
        let action = candidates.choose(rng).cloned().unwrap_or_else(|| "look".to_string());
        return Decision {
            action,
            trace: Some(StepTrace::default()),
        };
    };

    let damping = if skill.appendix_for(&rule.rule_id).is_some() {
        config.appendix_damping
    } else {
        1.0
    };
    let draw: f64 = rng.gen();
    let mut trace = StepTrace {
        applied_rule_ids: vec![rule.rule_id.clone()],
        lapse: false,
        prescribed: None,
    };
    if draw < config.lapse_rate * damping {
        candidates.retain(|c| *c != prescribed);
        if let Some(deviation) = candidates.choose(rng) {
            trace.lapse = true;
            trace.prescribed = Some(prescribed);
            return Decision {
                action: deviation.clone(),
                trace: Some(trace),
            };
        }
    }
    Decision {
        action: prescribed,
        trace: Some(trace),
    }
}

/// Either provider behind one call.
pub enum Executor {
    RuleBased(ExecutorConfig),
    Remote(RemoteExecutor),
}

impl Executor {
    pub fn config(&self) -> &ExecutorConfig {
        match self {
            Executor::RuleBased(c) => c,
            Executor::Remote(r) => r.config(),
        }
    }

    pub fn next_action(
        &self,
        task: &Task,
        skill: &Skill,
        history: &History,
        action_space: Option<&[String]>,
        prior: &[StepTrace],
        rng: &mut ChaCha8Rng,
    ) -> Result<Decision, ExecutorError> {
        match self {
            Executor::RuleBased(c) => Ok(next_action(c, task, skill, history, action_space, prior, rng)),
            Executor::Remote(r) => r.next_action(task, skill, history, action_space),
        }
    }
}
