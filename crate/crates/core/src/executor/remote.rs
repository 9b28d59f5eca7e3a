use std::collections::BTreeMap;
use std::sync::Arc;

use super::belief::Belief;
use super::{Decision, ExecutorConfig, ExecutorError};
use crate::gateway::{strip_fence, templates, CallSite, Gateway, GatewayError};
use crate::skill::{render_skill_text, Skill};
use crate::trajectory::{History, Task};

pub const EXECUTOR_TEMPLATE: &str = templates::EXECUTOR;

const HISTORY_TAIL: usize = 20;
const MAX_ACTION_LEN: usize = 160;

/// Accepts a reply holding exactly one plausible action line.
pub fn parse_action_line(raw: &str) -> Result<String, String> {
    let body = strip_fence(raw);
    let lines: Vec<&str> = body.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    let [line] = lines.as_slice() else {
        return Err(format!("expected one action line, got {}", lines.len()));
    };
    let line = line
        .strip_prefix("Action:")
        .or_else(|| line.strip_prefix("action:"))
        .or_else(|| line.strip_prefix('>'))
        .unwrap_or(line)
        .trim()
        .trim_matches(|c| c == '"' || c == '`')
        .trim();
    if line.is_empty() {
        return Err("empty action".into());
    }
    if line.len() > MAX_ACTION_LEN {
        return Err("action line too long".into());
    }
    if line.contains(['{', '}', '[', ']']) {
        return Err("action line looks like structured data".into());
    }
    Ok(line.to_string())
}

pub struct RemoteExecutor {
    config: ExecutorConfig,
    gateway: Arc<Gateway>,
}

impl RemoteExecutor {
    pub fn new(config: ExecutorConfig, gateway: Arc<Gateway>) -> Self {
        Self { config, gateway }
    }

    pub fn config(&self) -> &ExecutorConfig {
        &self.config
    }

    pub fn next_action(
        &self,
        task: &Task,
        skill: &Skill,
        history: &History,
        action_space: Option<&[String]>,
    ) -> Result<Decision, ExecutorError> {
        let skill_text = match self.config.skill_mode {
            super::SkillMode::None => String::new(),
            _ => render_skill_text(skill).unwrap_or_default(),
        };
        let actions = match action_space {
            Some(space) if !space.is_empty() => space.to_vec(),
            _ => Belief::from_history(history).candidate_actions(),
        };
        let pairs: Vec<(&str, Option<&str>)> = history.pairs().collect();
        let from = pairs.len().saturating_sub(HISTORY_TAIL);
        let transcript: Vec<String> = pairs[from..]
            .iter()
            .enumerate()
            .map(|(i, (o, a))| match a {
                Some(a) => format!("[{}] {}\n> {}", from + i + 1, o, a),
                None => format!("[{}] {}", from + i + 1, o),
            })
            .collect();
        let vars = BTreeMap::from([
            ("skill", skill_text),
            ("instruction", task.instruction.clone()),
            ("history", transcript.join("\n")),
            ("actions", actions.join("\n")),
        ]);
        let template = self.config.prompt_template_id.as_deref().unwrap_or(EXECUTOR_TEMPLATE);
        match self
            .gateway
            .complete_structured(CallSite::Executor, template, &vars, parse_action_line)
        {
            Ok(action) => Ok(Decision { action, trace: None }),
            Err(GatewayError::ExhaustedRetries { .. }) => Err(ExecutorError::UnparseableModelOutput),
            Err(e) => Err(ExecutorError::Gateway(e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn action_line_parsing() {
        assert_eq!(parse_action_line("go to fridge\n"), Ok("go to fridge".into()));
        assert_eq!(parse_action_line("Action: open fridge"), Ok("open fridge".into()));
        assert_eq!(parse_action_line("```\ntake apple 1 from fridge\n```"), Ok("take apple 1 from fridge".into()));
        assert!(parse_action_line("").is_err());
        assert!(parse_action_line("first\nsecond").is_err());
        assert!(parse_action_line("{\"action\": \"look\"}").is_err());
    }
}
