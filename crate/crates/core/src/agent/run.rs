use serde::{Deserialize, Serialize};

use super::actions::{execute_action, ActionPolicy, AgentAction, Observation, Transcript};
use super::guidance::TaskGuidance;
use super::workspace::Workspace;
use super::AgentError;
use crate::dynenv::{DynamicFeedback, TestEnvironment};

/// Source of actions; a backend that cannot continue returns `Finish`.
pub trait ModelBackend {
    fn next_action(
        &mut self,
        transcript: &Transcript,
        guidance: &TaskGuidance,
        budget_remaining: u32,
    ) -> Result<AgentAction, AgentError>;
}

/// Submission budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetState {
    pub max_iterations: u32,
    pub used: u32,
}

impl BudgetState {
    pub fn new(max_iterations: u32) -> Self {
        BudgetState { max_iterations, used: 0 }
    }

    pub fn remaining(&self) -> u32 {
        self.max_iterations - self.used
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Crash,
    BudgetExhausted,
    BackendFinished,
    ActionLimit,
}

#[derive(Debug, Clone)]
pub struct LoopOutcome {
    pub poc: Option<Vec<u8>>,
    /// Number of the submission that crashed.
    pub poc_submission: Option<u32>,
    pub crash_feedback: Option<DynamicFeedback>,
    pub transcript: Transcript,
    pub budget: BudgetState,
    pub stop: StopReason,
}

#[derive(Debug)]
pub struct LoopFailure {
    pub error: AgentError,
    pub transcript: Transcript,
    pub budget: BudgetState,
}

/// Alternates backend actions and observations until an input crashes the
/// target, the submission budget runs out, the backend finishes or the
/// action cap is hit.
pub fn run_agent_loop(
    backend: &mut dyn ModelBackend,
    ws: &mut Workspace,
    env: &mut dyn TestEnvironment,
    guidance: &TaskGuidance,
    mut budget: BudgetState,
    policy: &ActionPolicy,
) -> Result<LoopOutcome, LoopFailure> {
    let mut actions = 0;
    let stop = loop {
        if budget.remaining() == 0 {
            break StopReason::BudgetExhausted;
        }
        if actions >= policy.max_actions {
            break StopReason::ActionLimit;
        }
        let action = match backend.next_action(&ws.transcript, guidance, budget.remaining()) {
            Ok(a) => a,
            Err(error) => {
                return Err(LoopFailure {
                    error,
                    transcript: ws.transcript.clone(),
                    budget,
                })
            }
        };
        actions += 1;
        let kind = action.kind();
        let executed = execute_action(ws, &action, env, policy, budget.used + 1);
        let executed = match executed {
            Ok(x) => x,
            Err(error @ AgentError::EnvironmentUnavailable(_)) => {
                ws.transcript.push(action, Observation::failed(kind, &error));
                return Err(LoopFailure {
                    error,
                    transcript: ws.transcript.clone(),
                    budget,
                });
            }
            Err(error) => {
                ws.transcript.push(action, Observation::failed(kind, &error));
                continue;
            }
        };
        let finished = matches!(action, AgentAction::Finish);
        ws.transcript.push(action, executed.observation);
        if let Some(sub) = executed.submission {
            budget.used += 1;
            if let Some(fb) = sub.feedback.filter(|fb| fb.exit_code != 0) {
                return Ok(LoopOutcome {
                    poc: Some(sub.poc),
                    poc_submission: Some(sub.number),
                    crash_feedback: Some(fb),
                    transcript: ws.transcript.clone(),
                    budget,
                    stop: StopReason::Crash,
                });
            }
        }
        if finished {
            break StopReason::BackendFinished;
        }
    };
    Ok(LoopOutcome {
        poc: None,
        poc_submission: None,
        crash_feedback: None,
        transcript: ws.transcript.clone(),
        budget,
        stop,
    })
}

#[cfg(test)]
mod tests {
    use std::path::Path;
    use std::time::Duration;

    use super::*;
    use crate::agent::scripted::ScriptedBackend;
    use crate::agent::workspace::{instantiate_workspace, plan_workspace};
    use crate::dynenv::{make_feedback, DynEnvError, FeedbackOptions};

    /// Crashes on inputs containing `BOOM`.
    struct Marker;

    impl TestEnvironment for Marker {
        fn evaluate(&mut self, poc: &Path, _: &Path) -> Result<DynamicFeedback, DynEnvError> {
            let bytes = std::fs::read(poc).unwrap();
            let crash = bytes.windows(4).any(|w| w == b"BOOM");
            Ok(make_feedback(crash as i32, "ERROR: AddressSanitizer: boom", Duration::ZERO, vec![], None, None))
        }
        fn feedback_options(&self) -> FeedbackOptions {
            FeedbackOptions::default()
        }
        fn facts(&self) -> Vec<String> {
            vec![]
        }
    }

    fn setup() -> (tempfile::TempDir, Workspace, TaskGuidance) {
        let dir = tempfile::tempdir().unwrap();
        let src = dir.path().join("src");
        std::fs::create_dir(&src).unwrap();
        let layout = plan_workspace(&src, dir.path(), vec![]).unwrap();
        let g = TaskGuidance {
            prompt: "p".into(),
            readme: "r".into(),
        };
        let ws = instantiate_workspace(&src, &g, &layout, None).unwrap();
        (dir, ws, g)
    }

    fn run(actions: Vec<AgentAction>, budget: u32) -> LoopOutcome {
        let (_d, mut ws, g) = setup();
        let mut b = ScriptedBackend::from_actions(actions);
        run_agent_loop(&mut b, &mut ws, &mut Marker, &g, BudgetState::new(budget), &ActionPolicy::default()).unwrap()
    }

    #[test]
    fn zero_budget_does_nothing() {
        let out = run(vec![AgentAction::SubmitPoc { path: "x".into() }], 0);
        assert_eq!((out.stop, out.budget.used, out.transcript.entries.len()), (StopReason::BudgetExhausted, 0, 0));
    }

    #[test]
    fn immediate_finish() {
        let out = run(vec![], 3);
        assert_eq!(out.stop, StopReason::BackendFinished);
        assert!(out.poc.is_none());
    }

    #[test]
    fn second_submission_crashes() {
        let out = run(
            vec![
                AgentAction::write_text("a", "hello"),
                AgentAction::SubmitPoc { path: "a".into() },
                AgentAction::write_text("b", "xxBOOMxx"),
                AgentAction::RunCommand {
                    command: "bash submit.sh b".into(),
                },
                AgentAction::Finish,
            ],
            5,
        );
        assert_eq!(out.stop, StopReason::Crash);
        assert_eq!(out.poc.as_deref(), Some(&b"xxBOOMxx"[..]));
        assert_eq!((out.budget.used, out.poc_submission), (2, Some(2)));
        assert!(out.transcript.entries[3].observation.body.starts_with("exit code: 1\n"));
    }

    #[test]
    fn escapes_become_observations() {
        let out = run(vec![AgentAction::write_text("../x", "no")], 1);
        let o = &out.transcript.entries[0].observation;
        assert!(o.error.as_deref().unwrap().contains("escapes the workspace"));
        assert_eq!(out.stop, StopReason::BackendFinished);
    }
}
