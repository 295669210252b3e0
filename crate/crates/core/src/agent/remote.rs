use std::collections::BTreeMap;
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value as Json};

use super::actions::{AgentAction, Transcript};
use super::guidance::TaskGuidance;
use super::run::ModelBackend;
use super::AgentError;

static BLOCK_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?s)```action:([a-z_]+)([^\n]*)\n(.*?)```").unwrap());
static ATTR_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r#"([a-z_]+)=(?:"([^"]*)"|(\S+))"#).unwrap());

const GRAMMAR: &str = "Reply with exactly one action as a fenced block whose info string is `action:<kind>`:
```action:run_command
<shell command, run in the workspace root>
```
```action:write_file path=<path> [encoding=base64]
<file content>
```
```action:read_file path=<path>
```
```action:submit_poc path=<path>
```
```action:finish
```";

const REASK: &str = "Your reply did not contain exactly one valid action block. Reply again with one fenced block tagged action:<kind>.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemoteConfig {
    /// Base URL; `/chat/completions` is appended.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        RemoteConfig {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: "PAGENT_API_KEY".into(),
            timeout_secs: 300,
            temperature: None,
            max_tokens: None,
        }
    }
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

fn attrs(text: &str) -> BTreeMap<String, String> {
    ATTR_RE
        .captures_iter(text)
        .map(|c| {
            let v = c.get(2).or(c.get(3)).map_or("", |m| m.as_str());
            (c[1].to_string(), v.to_string())
        })
        .collect()
}

/// Extracts the single tagged action block of a reply.
pub fn parse_action_reply(reply: &str) -> Option<AgentAction> {
    let mut blocks = BLOCK_RE.captures_iter(reply);
    let block = blocks.next()?;
    if blocks.next().is_some() {
        return None;
    }
    let a = attrs(&block[2]);
    let body = block[3].strip_suffix('\n').unwrap_or(&block[3]);
    let path = || a.get("path").cloned().or_else(|| Some(body.trim().to_string()).filter(|p| !p.is_empty()));
    Some(match &block[1] {
        "run_command" => AgentAction::RunCommand {
            command: body.to_string(),
        },
        "write_file" => {
            let path = a.get("path")?.clone();
            if a.get("encoding").map(String::as_str) == Some("base64") {
                AgentAction::WriteFile {
                    path,
                    content: None,
                    content_base64: Some(body.split_whitespace().collect()),
                }
            } else {
                AgentAction::write_text(path, body)
            }
        }
        "read_file" => AgentAction::ReadFile { path: path()? },
        "submit_poc" => AgentAction::SubmitPoc { path: path()? },
        "finish" => AgentAction::Finish,
        _ => return None,
    })
}

fn render_action(a: &AgentAction) -> String {
    let quote = |p: &str| if p.contains(' ') { format!("\"{p}\"") } else { p.to_string() };
    match a {
        AgentAction::RunCommand { command } => format!("```action:run_command\n{command}\n```"),
        AgentAction::WriteFile {
            path,
            content,
            content_base64,
        } => match (content, content_base64) {
            (_, Some(b64)) => format!("```action:write_file path={} encoding=base64\n{b64}\n```", quote(path)),
            (c, None) => format!("```action:write_file path={}\n{}\n```", quote(path), c.as_deref().unwrap_or("")),
        },
        AgentAction::ReadFile { path } => format!("```action:read_file path={}\n```", quote(path)),
        AgentAction::SubmitPoc { path } => format!("```action:submit_poc path={}\n```", quote(path)),
        AgentAction::Finish => "```action:finish\n```".into(),
    }
}

fn message(role: &str, content: impl Into<String>) -> Json {
    json!({"role": role, "content": content.into()})
}

/// Chat history for a transcript: the prompt as system message, then
/// actions and observations alternating.
pub(crate) fn transcript_messages(transcript: &Transcript, guidance: &TaskGuidance, remaining: u32) -> Vec<Json> {
    let mut msgs = vec![
        message("system", format!("{}\n\n{GRAMMAR}", guidance.prompt)),
        message("user", "The workspace is ready."),
    ];
    for e in &transcript.entries {
        msgs.push(message("assistant", render_action(&e.action)));
        msgs.push(message("user", e.observation.render()));
    }
    if let Some(last) = msgs.last_mut() {
        let text = last["content"].as_str().unwrap_or_default().to_string();
        last["content"] = Json::String(format!("{text}\n\n[submissions remaining: {remaining}]"));
    }
    msgs
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, AgentError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| AgentError::TransportFailure(e.to_string()))?;
        let api_key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Ok(RemoteBackend { config, client, api_key })
    }

    fn complete(&self, messages: &[Json]) -> Result<String, AgentError> {
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut body = json!({"model": self.config.model, "messages": messages});
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        if let Some(m) = self.config.max_tokens {
            body["max_tokens"] = json!(m);
        }
        let mut req = self.client.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| AgentError::TransportFailure(format!("{url}: {e}")))?;
        let status = resp.status();
        if status == reqwest::StatusCode::UNAUTHORIZED || status == reqwest::StatusCode::FORBIDDEN {
            return Err(AgentError::AuthFailure(format!("{url} answered {status}")));
        }
        let text = resp.text().map_err(|e| AgentError::TransportFailure(e.to_string()))?;
        if !status.is_success() {
            return Err(AgentError::TransportFailure(format!("{url} answered {status}: {text}")));
        }
        let reply: Json = serde_json::from_str(&text)
            .map_err(|e| AgentError::TransportFailure(format!("invalid response body: {e}")))?;
        Ok(reply["choices"][0]["message"]["content"].as_str().unwrap_or_default().to_string())
    }
}

impl ModelBackend for RemoteBackend {
    fn next_action(
        &mut self,
        transcript: &Transcript,
        guidance: &TaskGuidance,
        budget_remaining: u32,
    ) -> Result<AgentAction, AgentError> {
        let mut msgs = transcript_messages(transcript, guidance, budget_remaining);
        let reply = self.complete(&msgs)?;
        if let Some(a) = parse_action_reply(&reply) {
            return Ok(a);
        }
        log::warn!("malformed model reply, asking again");
        msgs.push(message("assistant", reply));
        msgs.push(message("user", REASK));
        let reply = self.complete(&msgs)?;
        Ok(parse_action_reply(&reply).unwrap_or_else(|| {
            log::warn!("second malformed reply, finishing");
            AgentAction::Finish
        }))
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::actions::Observation;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    #[test]
    fn grammar_round_trip() {
        for a in [
            AgentAction::RunCommand {
                command: "ls -la\necho done".into(),
            },
            AgentAction::write_text("a b.txt", "line1\nline2"),
            AgentAction::write_bytes("poc.bin", &[0, 159, 255]),
            AgentAction::ReadFile { path: "README.md".into() },
            AgentAction::SubmitPoc { path: "poc.bin".into() },
            AgentAction::Finish,
        ] {
            let text = format!("thinking...\n{}\nbye", render_action(&a));
            assert_eq!(parse_action_reply(&text), Some(a));
        }
    }

    #[test]
    fn malformed_replies() {
        assert_eq!(parse_action_reply("no block here"), None);
        assert_eq!(parse_action_reply("```bash\nls\n```"), None);
        assert_eq!(parse_action_reply("```action:finish\n```\n```action:finish\n```"), None);
        assert_eq!(parse_action_reply("```action:write_file\nx\n```"), None);
    }

    #[test]
    fn message_layout() {
        let g = TaskGuidance {
            prompt: "P".into(),
            readme: "R".into(),
        };
        let mut t = Transcript::default();
        t.push(
            AgentAction::Finish,
            Observation {
                kind: "finish".into(),
                status: None,
                body: "ok".into(),
                error: None,
                submission: None,
            },
        );
        let m = transcript_messages(&t, &g, 3);
        let roles: Vec<_> = m.iter().map(|x| x["role"].as_str().unwrap()).collect();
        assert_eq!(roles, ["system", "user", "assistant", "user"]);
        assert!(m[0]["content"].as_str().unwrap().starts_with("P\n\n"));
        assert!(m[3]["content"].as_str().unwrap().ends_with("[submissions remaining: 3]"));
    }

    /// Serves canned chat replies, one per connection, and reports request bodies.
    fn mock_server(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Json>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, content) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                tx.send(serde_json::from_slice(&body).unwrap()).unwrap();
                let payload = json!({"choices": [{"message": {"role": "assistant", "content": content}}]}).to_string();
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{payload}",
                    payload.len()
                )
                .unwrap();
            }
        });
        (format!("http://{addr}/v1"), rx)
    }

    fn guidance() -> TaskGuidance {
        TaskGuidance {
            prompt: "P".into(),
            readme: "R".into(),
        }
    }

    fn backend(base_url: String) -> RemoteBackend {
        RemoteBackend::new(RemoteConfig {
            base_url,
            model: "m".into(),
            api_key_env: "PAGENT_TEST_UNSET_KEY".into(),
            timeout_secs: 10,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn mock_reply_is_parsed() {
        let (url, rx) = mock_server(vec![(200, "```action:submit_poc path=poc.bin\n```".into())]);
        let a = backend(url).next_action(&Transcript::default(), &guidance(), 2).unwrap();
        assert_eq!(a, AgentAction::SubmitPoc { path: "poc.bin".into() });
        let req = rx.recv().unwrap();
        assert_eq!(req["model"], "m");
        assert_eq!(req["messages"][0]["role"], "system");
    }

    #[test]
    fn two_malformed_replies_finish() {
        let (url, rx) = mock_server(vec![(200, "hmm".into()), (200, "still no".into())]);
        let a = backend(url).next_action(&Transcript::default(), &guidance(), 1).unwrap();
        assert_eq!(a, AgentAction::Finish);
        rx.recv().unwrap();
        let second = rx.recv().unwrap();
        let msgs = second["messages"].as_array().unwrap();
        assert_eq!(msgs.last().unwrap()["content"], REASK);
    }

    #[test]
    fn auth_and_transport_failures() {
        let (url, _rx) = mock_server(vec![(401, String::new())]);
        assert!(matches!(
            backend(url).next_action(&Transcript::default(), &guidance(), 1),
            Err(AgentError::AuthFailure(_))
        ));
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        assert!(matches!(
            backend(format!("http://127.0.0.1:{port}/v1")).next_action(&Transcript::default(), &guidance(), 1),
            Err(AgentError::TransportFailure(_))
        ));
    }
}
