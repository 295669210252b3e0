//! Task guidance, the sandboxed workspace and the agent-environment loop.

mod actions;
mod guidance;
mod remote;
mod run;
mod scripted;
mod select;
mod workspace;

use std::path::PathBuf;

use thiserror::Error;

pub use actions::{execute_action, resolve_in_root, ActionPolicy, AgentAction, Observation, Transcript, TranscriptEntry};
pub use guidance::{render_guidance, TaskGuidance, PROMPT_TEMPLATE, README_TEMPLATE};
pub use remote::{parse_action_reply, RemoteBackend, RemoteConfig};
pub use run::{run_agent_loop, BudgetState, LoopFailure, LoopOutcome, ModelBackend, StopReason};
pub use scripted::{ScriptStep, ScriptedBackend};
pub use select::{select_entry, CodeLocation};
pub use workspace::{instantiate_workspace, plan_workspace, SubmitHook, Workspace, WorkspaceLayout};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("report has no entries")]
    EmptyReport,
    #[error("invalid code location `{0}`")]
    InvalidLocation(String),
    #[error("no report entry matches `{location}`; available functions: {}", available.join(", "))]
    NoMatchingEntry { location: String, available: Vec<String> },
    #[error("path `{0}` escapes the workspace")]
    PathEscape(String),
    #[error("command timed out after {seconds:.1} s")]
    CommandTimeout { seconds: f64 },
    #[error("test environment unavailable: {0}")]
    EnvironmentUnavailable(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid script {}: {message}", path.display())]
    Script { path: PathBuf, message: String },
    #[error("transport failure: {0}")]
    TransportFailure(String),
    #[error("authentication rejected: {0}")]
    AuthFailure(String),
    #[error("backend failure: {0}")]
    BackendFailure(String),
}

impl AgentError {
    pub(crate) fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> AgentError {
        let context = context.into();
        move |source| AgentError::Io { context, source }
    }
}
