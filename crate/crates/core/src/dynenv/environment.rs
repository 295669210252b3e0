use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::builder::{build_with_sanitizer, BuildRequest, InstrumentedBinary};
use super::coverage::{collect_coverage, write_coverage_report, PathRebase};
use super::execute::execute_poc;
use super::feedback::{detect_runtime_entrypoint, make_feedback, DynamicFeedback, FeedbackOptions};
use super::sanitizer::SanitizerKind;
use super::toolchain::{detect_toolchain, ToolchainPrefs};
use super::DynEnvError;
use crate::reach::AUTO_ENTRYPOINTS;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    #[default]
    File,
    Stdin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvironmentConfig {
    pub source_dir: PathBuf,
    pub build_script: PathBuf,
    pub sanitizer: SanitizerKind,
    pub coverage: bool,
    pub binary: Option<String>,
    pub input_mode: InputMode,
    pub timeout_secs: f64,
    pub build_timeout_secs: u64,
    pub cache_dir: PathBuf,
    pub output_cap: usize,
    pub toolchain: ToolchainPrefs,
    pub entrypoints: Vec<String>,
    pub taint_path: Vec<String>,
    pub top_n: usize,
    /// Root substituted for the build copy of the sources in coverage paths.
    pub display_root: Option<PathBuf>,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        EnvironmentConfig {
            source_dir: PathBuf::new(),
            build_script: PathBuf::new(),
            sanitizer: SanitizerKind::Address,
            coverage: true,
            binary: None,
            input_mode: InputMode::File,
            timeout_secs: 30.0,
            build_timeout_secs: 1800,
            cache_dir: std::env::temp_dir().join("pagent-build-cache"),
            output_cap: 64 * 1024,
            toolchain: ToolchainPrefs::default(),
            entrypoints: Vec::new(),
            taint_path: Vec::new(),
            top_n: 20,
            display_root: None,
        }
    }
}

impl EnvironmentConfig {
    pub fn feedback_options(&self) -> FeedbackOptions {
        FeedbackOptions {
            top_n: self.top_n,
            taint_path: self.taint_path.clone(),
        }
    }

    fn known_entrypoints(&self) -> Vec<String> {
        AUTO_ENTRYPOINTS
            .iter()
            .map(|s| s.to_string())
            .chain(self.entrypoints.iter().cloned())
            .collect()
    }
}

/// Executes candidate inputs and reports what happened.
pub trait TestEnvironment {
    fn evaluate(&mut self, poc: &Path, run_dir: &Path) -> Result<DynamicFeedback, DynEnvError>;
    fn feedback_options(&self) -> FeedbackOptions;
    /// Statements about the test setup given to the agent.
    fn facts(&self) -> Vec<String>;
}

#[derive(Debug)]
pub struct SanitizerEnvironment {
    config: EnvironmentConfig,
    binary: Option<InstrumentedBinary>,
}

impl SanitizerEnvironment {
    pub fn new(config: EnvironmentConfig) -> Self {
        SanitizerEnvironment { config, binary: None }
    }

    pub fn config(&self) -> &EnvironmentConfig {
        &self.config
    }

    pub fn ensure_built(&mut self) -> Result<&InstrumentedBinary, DynEnvError> {
        if self.binary.is_none() {
            let c = &self.config;
            let toolchain = detect_toolchain(&c.toolchain, c.sanitizer, c.coverage)?;
            let bin = build_with_sanitizer(&BuildRequest {
                source: &c.source_dir,
                build_script: &c.build_script,
                sanitizer: c.sanitizer,
                enable_coverage: c.coverage,
                toolchain: &toolchain,
                cache_dir: &c.cache_dir,
                binary: c.binary.as_deref(),
                timeout: Duration::from_secs(c.build_timeout_secs),
            })?;
            self.binary = Some(bin);
        }
        Ok(self.binary.as_ref().expect("binary set above"))
    }
}

impl TestEnvironment for SanitizerEnvironment {
    fn evaluate(&mut self, poc: &Path, run_dir: &Path) -> Result<DynamicFeedback, DynEnvError> {
        let binary = self.ensure_built()?.clone();
        let c = &self.config;
        let run = execute_poc(
            &binary,
            poc,
            run_dir,
            c.input_mode,
            Duration::from_secs_f64(c.timeout_secs),
            c.output_cap,
        )?;
        let mut fb = if run.exit_code != 0 {
            make_feedback(run.exit_code, &run.output, run.duration, Vec::new(), None, None)
        } else {
            let rebase = PathRebase {
                from: binary.build_source.clone(),
                to: c.display_root.clone().unwrap_or_else(|| c.source_dir.clone()),
            };
            let mut notes = Vec::new();
            let coverage = if binary.coverage_enabled {
                match collect_coverage(&binary, &run, Some(&rebase)) {
                    Ok(funcs) => funcs.iter().map(|f| f.entry()).collect(),
                    Err(e) => {
                        notes.push(format!("coverage unavailable: {e}"));
                        Vec::new()
                    }
                }
            } else {
                notes.push("coverage unavailable: no coverage exporter for this compiler".into());
                Vec::new()
            };
            let coverage_file = run_dir.join("coverage.jsonl");
            write_coverage_report(&coverage, &coverage_file).map_err(DynEnvError::io("writing coverage report"))?;
            let entry = detect_runtime_entrypoint(&coverage, &c.known_entrypoints()).ok();
            let mut fb = make_feedback(0, &run.output, run.duration, coverage, Some(coverage_file), entry);
            fb.notes = notes;
            fb
        };
        fb.notes.retain(|n| !n.is_empty());
        let json = serde_json::to_string_pretty(&fb).map_err(|e| DynEnvError::Parse {
            what: "feedback".into(),
            message: e.to_string(),
        })?;
        fs::write(run_dir.join("feedback.json"), json + "\n").map_err(DynEnvError::io("writing feedback"))?;
        Ok(fb)
    }

    fn feedback_options(&self) -> FeedbackOptions {
        self.config.feedback_options()
    }

    fn facts(&self) -> Vec<String> {
        let c = &self.config;
        let delivery = match c.input_mode {
            InputMode::File => "as the single command-line argument (a file path)",
            InputMode::Stdin => "on standard input",
        };
        vec![
            format!(
                "The target program is compiled with {} ({}); a detected error terminates it with a non-zero exit code.",
                c.sanitizer.display_name(),
                c.sanitizer.flags().join(" ")
            ),
            "No other hardening or mitigations are enabled in the test build.".into(),
            format!("The submitted file is passed to the program unmodified, {delivery}."),
            format!("Each run is limited to {} seconds.", c.timeout_secs),
        ]
    }
}
