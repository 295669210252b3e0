use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::agent::{ActionPolicy, RemoteConfig};
use crate::dynenv::{InputMode, SanitizerKind, ToolchainPrefs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    /// Chosen from the vulnerability type when unset.
    pub sanitizer: Option<SanitizerKind>,
    pub coverage: bool,
    pub binary: Option<String>,
    pub input_mode: InputMode,
    pub timeout_secs: f64,
    pub build_timeout_secs: u64,
    pub cache_dir: Option<PathBuf>,
    pub top_n: usize,
    pub toolchain: ToolchainPrefs,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            sanitizer: None,
            coverage: true,
            binary: None,
            input_mode: InputMode::File,
            timeout_secs: 30.0,
            build_timeout_secs: 1800,
            cache_dir: None,
            top_n: 20,
            toolchain: ToolchainPrefs::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub max_actions: u32,
    pub command_timeout_secs: u64,
    pub output_cap: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        let p = ActionPolicy::default();
        AgentSection {
            max_actions: p.max_actions,
            command_timeout_secs: p.command_timeout.as_secs(),
            output_cap: p.output_cap,
        }
    }
}

impl AgentSection {
    pub fn policy(&self) -> ActionPolicy {
        ActionPolicy {
            command_timeout: std::time::Duration::from_secs(self.command_timeout_secs),
            output_cap: self.output_cap,
            max_actions: self.max_actions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendChoice {
    Scripted(PathBuf),
    Remote,
}

impl std::str::FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            Some(("scripted", p)) if !p.is_empty() => Ok(BackendChoice::Scripted(p.into())),
            None if s == "remote" => Ok(BackendChoice::Remote),
            _ => Err(format!("backend must be `scripted:<path>` or `remote`, got `{s}`")),
        }
    }
}

/// Inputs of one pipeline invocation, loaded from TOML and overridden by flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub ir: Vec<PathBuf>,
    pub source: Option<PathBuf>,
    pub patched_source: Option<PathBuf>,
    pub build_script: Option<PathBuf>,
    pub rules: Option<PathBuf>,
    pub location: Option<String>,
    pub entrypoints: Vec<String>,
    pub budget: u32,
    pub backend: Option<String>,
    pub out: PathBuf,
    /// Prefix for operand names in assertions; defaults to the IR path when
    /// a single module is analysed.
    pub module_qualifier: Option<String>,
    pub env: EnvSection,
    pub agent: AgentSection,
    pub remote: RemoteConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            ir: Vec::new(),
            source: None,
            patched_source: None,
            build_script: None,
            rules: None,
            location: None,
            entrypoints: Vec::new(),
            budget: 10,
            backend: None,
            out: PathBuf::from("pagent-out"),
            module_qualifier: None,
            env: EnvSection::default(),
            agent: AgentSection::default(),
            remote: RemoteConfig::default(),
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl RunConfig {
    /// Reads a TOML file; relative paths in it are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.ir.iter_mut().for_each(|p| rebase(base, p));
        for p in [
            &mut cfg.source,
            &mut cfg.patched_source,
            &mut cfg.build_script,
            &mut cfg.rules,
            &mut cfg.env.cache_dir,
        ]
        .into_iter()
        .flatten()
        {
            rebase(base, p);
        }
        rebase(base, &mut cfg.out);
        if let Some(b) = &cfg.backend {
            if let Some(p) = b.strip_prefix("scripted:") {
                let mut p = PathBuf::from(p);
                rebase(base, &mut p);
                cfg.backend = Some(format!("scripted:{}", p.display()));
            }
        }
        Ok(cfg)
    }

    pub fn backend_choice(&self) -> Result<BackendChoice, PipelineError> {
        self.backend
            .as_deref()
            .ok_or_else(|| PipelineError::Config("no backend configured (--backend)".into()))?
            .parse()
            .map_err(PipelineError::Config)
    }

    pub(crate) fn require<'a, T>(&self, v: &'a Option<T>, what: &str) -> Result<&'a T, PipelineError> {
        v.as_ref().ok_or_else(|| PipelineError::Config(format!("missing {what}")))
    }
}
