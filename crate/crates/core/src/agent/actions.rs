use std::fs;
use std::path::{Component, Path, PathBuf};
use std::process::Command;
use std::sync::LazyLock;
use std::time::Duration;

use base64::Engine;
use regex::Regex;
use serde::{Deserialize, Serialize};

use super::workspace::Workspace;
use super::AgentError;
use crate::dynenv::{DynEnvError, DynamicFeedback, TestEnvironment};
use crate::process::{run_with_timeout, ExitKind, TRUNCATION_MARKER};

static SUBMIT_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"^\s*(?:bash|sh)\s+(?:\./)?submit\.sh\s+(?:'([^']*)'|"([^"]*)"|(\S+))\s*$"#).unwrap()
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentAction {
    RunCommand {
        command: String,
    },
    WriteFile {
        path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        content: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        content_base64: Option<String>,
    },
    ReadFile {
        path: String,
    },
    SubmitPoc {
        path: String,
    },
    Finish,
}

impl AgentAction {
    pub fn kind(&self) -> &'static str {
        match self {
            AgentAction::RunCommand { .. } => "run_command",
            AgentAction::WriteFile { .. } => "write_file",
            AgentAction::ReadFile { .. } => "read_file",
            AgentAction::SubmitPoc { .. } => "submit_poc",
            AgentAction::Finish => "finish",
        }
    }

    pub fn write_text(path: impl Into<String>, content: impl Into<String>) -> Self {
        AgentAction::WriteFile {
            path: path.into(),
            content: Some(content.into()),
            content_base64: None,
        }
    }

    pub fn write_bytes(path: impl Into<String>, bytes: &[u8]) -> Self {
        AgentAction::WriteFile {
            path: path.into(),
            content: None,
            content_base64: Some(base64::engine::general_purpose::STANDARD.encode(bytes)),
        }
    }

    /// Submission path named by this action, including `bash submit.sh <poc>`.
    pub fn submission_path(&self) -> Option<String> {
        match self {
            AgentAction::SubmitPoc { path } => Some(path.clone()),
            AgentAction::RunCommand { command } => SUBMIT_RE
                .captures(command)
                .and_then(|c| c.get(1).or(c.get(2)).or(c.get(3)))
                .map(|m| m.as_str().to_string()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub kind: String,
    /// Command exit status, or the exit code of a submitted input.
    pub status: Option<i32>,
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submission: Option<u32>,
}

impl Observation {
    fn ok(kind: &str, status: Option<i32>, body: String) -> Self {
        Observation {
            kind: kind.into(),
            status,
            body,
            error: None,
            submission: None,
        }
    }

    pub fn failed(kind: &str, error: &AgentError) -> Self {
        Observation {
            kind: kind.into(),
            status: None,
            body: String::new(),
            error: Some(error.to_string()),
            submission: None,
        }
    }

    /// Plain-text form shown to model backends.
    pub fn render(&self) -> String {
        let mut s = String::new();
        if let Some(e) = &self.error {
            s.push_str(&format!("error: {e}\n"));
        }
        if self.kind == "run_command" && self.submission.is_none() {
            if let Some(st) = self.status {
                s.push_str(&format!("[exit status {st}]\n"));
            }
        }
        s.push_str(&self.body);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub step: u32,
    pub action: AgentAction,
    pub observation: Observation,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn push(&mut self, action: AgentAction, observation: Observation) {
        let step = self.entries.len() as u32 + 1;
        self.entries.push(TranscriptEntry {
            step,
            action,
            observation,
        });
    }

    pub fn submissions(&self) -> u32 {
        self.entries.iter().filter(|e| e.observation.submission.is_some()).count() as u32
    }

    pub fn last_observation(&self) -> Option<&Observation> {
        self.entries.last().map(|e| &e.observation)
    }

    /// One JSON object per entry.
    pub fn to_jsonl(&self) -> String {
        self.entries
            .iter()
            .map(|e| serde_json::to_string(e).expect("transcript serializes") + "\n")
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionPolicy {
    pub command_timeout: Duration,
    pub output_cap: usize,
    /// Hard cap on actions of any kind in one loop.
    pub max_actions: u32,
}

impl Default for ActionPolicy {
    fn default() -> Self {
        ActionPolicy {
            command_timeout: Duration::from_secs(120),
            output_cap: 64 * 1024,
            max_actions: 200,
        }
    }
}

/// Resolves `path` against `root`, rejecting anything that leaves it,
/// lexically or through symlinks. `root` must be canonical.
pub fn resolve_in_root(root: &Path, path: &str) -> Result<PathBuf, AgentError> {
    let escape = || AgentError::PathEscape(path.to_string());
    if path.contains('\0') {
        return Err(escape());
    }
    let p = Path::new(path);
    let joined = if p.is_absolute() { p.to_path_buf() } else { root.join(p) };
    let mut norm = PathBuf::new();
    for c in joined.components() {
        match c {
            Component::ParentDir => {
                if !norm.pop() {
                    return Err(escape());
                }
            }
            Component::CurDir => {}
            other => norm.push(other),
        }
    }
    if !norm.starts_with(root) {
        return Err(escape());
    }
    let mut probe = norm.clone();
    while probe.starts_with(root) {
        if probe.symlink_metadata().is_ok() {
            let real = fs::canonicalize(&probe).map_err(|_| escape())?;
            if !real.starts_with(root) {
                return Err(escape());
            }
            break;
        }
        if !probe.pop() {
            break;
        }
    }
    Ok(norm)
}

fn cap_text(bytes: &[u8], cap: usize) -> String {
    if bytes.len() <= cap {
        return String::from_utf8_lossy(bytes).into_owned();
    }
    let mut s = String::from_utf8_lossy(&bytes[..cap]).into_owned();
    s.push_str(TRUNCATION_MARKER);
    s
}

/// A submission made by one action.
#[derive(Debug, Clone)]
pub struct Submission {
    pub number: u32,
    pub poc: Vec<u8>,
    /// Absent when the run timed out.
    pub feedback: Option<DynamicFeedback>,
}

#[derive(Debug, Clone)]
pub struct Executed {
    pub observation: Observation,
    pub submission: Option<Submission>,
}

fn submit(
    ws: &Workspace,
    kind: &str,
    path: &str,
    env: &mut dyn TestEnvironment,
    number: u32,
) -> Result<Executed, AgentError> {
    let src = resolve_in_root(&ws.root, path)?;
    let poc = fs::read(&src).map_err(AgentError::io(format!("reading {path}")))?;
    let run_dir = ws.feedback_dir(number);
    fs::create_dir_all(&run_dir).map_err(AgentError::io("creating feedback directory"))?;
    let copy = run_dir.join("poc.bin");
    fs::write(&copy, &poc).map_err(AgentError::io("storing submitted input"))?;
    let mut observation = Observation::ok(kind, None, String::new());
    observation.submission = Some(number);
    let feedback = match env.evaluate(&copy, &run_dir) {
        Ok(fb) => {
            let mut shown = fb.clone();
            if let Some(p) = &shown.coverage_file {
                shown.coverage_file = Some(p.strip_prefix(&ws.root).unwrap_or(p).to_path_buf());
            }
            observation.status = Some(fb.exit_code);
            observation.body = shown.render(&env.feedback_options());
            Some(fb)
        }
        Err(DynEnvError::ExecutionTimeout { seconds }) => {
            observation.error = Some(format!(
                "execution timed out after {seconds:.1} s; a timeout is not a crash"
            ));
            None
        }
        Err(e) => return Err(AgentError::EnvironmentUnavailable(e.to_string())),
    };
    Ok(Executed {
        observation,
        submission: Some(Submission { number, poc, feedback }),
    })
}

/// Performs one action; `next_submission` numbers a submission if one is made.
pub fn execute_action(
    ws: &Workspace,
    action: &AgentAction,
    env: &mut dyn TestEnvironment,
    policy: &ActionPolicy,
    next_submission: u32,
) -> Result<Executed, AgentError> {
    let kind = action.kind();
    if let Some(path) = action.submission_path() {
        return submit(ws, kind, &path, env, next_submission);
    }
    let observation = match action {
        AgentAction::RunCommand { command } => {
            let mut cmd = Command::new("sh");
            cmd.arg("-c").arg(command).current_dir(&ws.root).env("HOME", &ws.root);
            let out = run_with_timeout(cmd, None, policy.command_timeout, policy.output_cap)
                .map_err(AgentError::io("running command"))?;
            if out.exit == ExitKind::TimedOut {
                let mut o = Observation::ok(kind, None, out.text());
                o.error = Some(
                    AgentError::CommandTimeout {
                        seconds: out.duration.as_secs_f64(),
                    }
                    .to_string(),
                );
                o
            } else {
                Observation::ok(kind, out.exit.code(), out.text())
            }
        }
        AgentAction::WriteFile {
            path,
            content,
            content_base64,
        } => {
            let dest = resolve_in_root(&ws.root, path)?;
            let bytes = match (content, content_base64) {
                (_, Some(b64)) => base64::engine::general_purpose::STANDARD
                    .decode(b64.trim())
                    .map_err(|e| AgentError::BackendFailure(format!("invalid base64 content: {e}")))?,
                (Some(text), None) => text.clone().into_bytes(),
                (None, None) => Vec::new(),
            };
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).map_err(AgentError::io(format!("creating parent of {path}")))?;
            }
            fs::write(&dest, &bytes).map_err(AgentError::io(format!("writing {path}")))?;
            Observation::ok(kind, None, format!("wrote {} bytes to {path}", bytes.len()))
        }
        AgentAction::ReadFile { path } => {
            let src = resolve_in_root(&ws.root, path)?;
            let bytes = fs::read(&src).map_err(AgentError::io(format!("reading {path}")))?;
            Observation::ok(kind, None, cap_text(&bytes, policy.output_cap))
        }
        AgentAction::Finish => Observation::ok(kind, None, String::new()),
        AgentAction::SubmitPoc { .. } => unreachable!("handled above"),
    };
    Ok(Executed {
        observation,
        submission: None,
    })
}
