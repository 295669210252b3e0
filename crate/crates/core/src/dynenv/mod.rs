//! Instrumented builds, candidate execution, coverage extraction and the
//! feedback handed back to the agent.

mod builder;
mod coverage;
mod environment;
mod execute;
mod feedback;
mod sanitizer;
mod toolchain;

use std::path::PathBuf;

use thiserror::Error;

pub use builder::{build_with_sanitizer, BuildRequest, InstrumentedBinary};
pub use coverage::{
    collect_coverage, coverage_from_gcov_json, coverage_from_llvm_export, format_percent,
    write_coverage_report, CoverageCounts, CoverageEntry, FunctionCoverage, PathRebase,
};
pub use environment::{EnvironmentConfig, InputMode, SanitizerEnvironment, TestEnvironment};
pub use execute::{execute_poc, ProfileData, RawRun};
pub use feedback::{detect_runtime_entrypoint, make_feedback, DynamicFeedback, FeedbackOptions, Profiling};
pub use sanitizer::{assign_sanitizer, SanitizerKind};
pub use toolchain::{detect_toolchain, find_in_path, CompilerFamily, CoverageTool, Toolchain, ToolchainPrefs};

#[derive(Debug, Error)]
pub enum DynEnvError {
    #[error("toolchain missing: {0}")]
    ToolchainMissing(String),
    #[error("build failed: {message} (log: {})", log_path.display())]
    BuildFailed { log_path: PathBuf, message: String },
    #[error("execution timed out after {seconds:.1} s")]
    ExecutionTimeout { seconds: f64 },
    #[error("coverage tool missing: {0}")]
    CoverageToolMissing(String),
    #[error("no profile data: {0}")]
    NoProfileData(String),
    #[error("no known entrypoint was executed")]
    EntrypointNotExecuted,
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {what}: {message}")]
    Parse { what: String, message: String },
}

impl DynEnvError {
    pub fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> DynEnvError {
        let context = context.into();
        move |source| DynEnvError::Io { context, source }
    }
}
