use std::collections::VecDeque;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::actions::{AgentAction, Transcript};
use super::guidance::TaskGuidance;
use super::run::ModelBackend;
use super::AgentError;

/// An action, or a branch on the text of the latest observation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptStep {
    Branch {
        if_last_contains: String,
        #[serde(default)]
        then: Vec<ScriptStep>,
        #[serde(default, rename = "else")]
        otherwise: Vec<ScriptStep>,
    },
    Action(AgentAction),
}

/// Replays a fixed script; finishes once it runs out.
#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    pending: VecDeque<ScriptStep>,
}

impl ScriptedBackend {
    pub fn new(steps: Vec<ScriptStep>) -> Self {
        ScriptedBackend { pending: steps.into() }
    }

    pub fn from_actions(actions: Vec<AgentAction>) -> Self {
        Self::new(actions.into_iter().map(ScriptStep::Action).collect())
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text).map(Self::new)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path).map_err(AgentError::io(format!("reading {}", path.display())))?;
        Self::from_json(&text).map_err(|e| AgentError::Script {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

impl ModelBackend for ScriptedBackend {
    fn next_action(&mut self, transcript: &Transcript, _: &TaskGuidance, _: u32) -> Result<AgentAction, AgentError> {
        while let Some(step) = self.pending.pop_front() {
            match step {
                ScriptStep::Action(a) => return Ok(a),
                ScriptStep::Branch {
                    if_last_contains,
                    then,
                    otherwise,
                } => {
                    let hit = transcript
                        .last_observation()
                        .is_some_and(|o| o.render().contains(&if_last_contains));
                    let chosen = if hit { then } else { otherwise };
                    for s in chosen.into_iter().rev() {
                        self.pending.push_front(s);
                    }
                }
            }
        }
        Ok(AgentAction::Finish)
    }
}
