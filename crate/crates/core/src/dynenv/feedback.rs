use std::cmp::Ordering;
use std::fmt::Write;
use std::path::PathBuf;
use std::time::Duration;

use serde::ser::SerializeStruct;
use serde::{Serialize, Serializer};

use super::coverage::{format_percent, CoverageEntry};
use super::DynEnvError;
use crate::reach::base_name;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Profiling {
    pub exec_time_ms: u64,
    /// `(file, function)` of the entrypoint that ran.
    pub runtime_entrypoint: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicFeedback {
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub crash_report: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profiling: Option<Profiling>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage_file: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub coverage: Option<Vec<CoverageEntry>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl Serialize for CoverageEntry {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let round = |p: f64| (p * 100.0).round() / 100.0;
        let mut st = s.serialize_struct("CoverageEntry", 5)?;
        st.serialize_field("file_path", &self.file_path)?;
        st.serialize_field("function_name", &self.function_name)?;
        st.serialize_field("region_coverage", &round(self.region_coverage))?;
        st.serialize_field("line_coverage", &round(self.line_coverage))?;
        st.serialize_field("branch_coverage", &round(self.branch_coverage))?;
        st.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeedbackOptions {
    pub top_n: usize,
    /// Functions of the static call path, listed first in the inline view.
    pub taint_path: Vec<String>,
}

impl Default for FeedbackOptions {
    fn default() -> Self {
        FeedbackOptions {
            top_n: 20,
            taint_path: Vec::new(),
        }
    }
}

/// Function name without a `file:` qualifier or numeric suffix.
fn plain_name(name: &str) -> &str {
    base_name(name.rsplit(':').next().unwrap_or(name))
}

/// Executed entrypoint with the highest region coverage, then lowest file path.
pub fn detect_runtime_entrypoint(
    entries: &[CoverageEntry],
    known: &[String],
) -> Result<(String, String), DynEnvError> {
    entries
        .iter()
        .filter(|e| e.region_coverage > 0.0 && known.iter().any(|k| plain_name(k) == plain_name(&e.function_name)))
        .min_by(|a, b| {
            b.region_coverage
                .partial_cmp(&a.region_coverage)
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.file_path.cmp(&b.file_path))
                .then_with(|| a.function_name.cmp(&b.function_name))
        })
        .map(|e| (e.file_path.clone(), e.function_name.clone()))
        .ok_or(DynEnvError::EntrypointNotExecuted)
}

/// Crash runs carry only the report; clean runs carry profiling and coverage.
pub fn make_feedback(
    exit_code: i32,
    output: &str,
    duration: Duration,
    coverage: Vec<CoverageEntry>,
    coverage_file: Option<PathBuf>,
    entrypoint: Option<(String, String)>,
) -> DynamicFeedback {
    if exit_code != 0 {
        return DynamicFeedback {
            exit_code,
            crash_report: Some(output.to_string()),
            profiling: None,
            coverage_file: None,
            coverage: None,
            notes: Vec::new(),
        };
    }
    DynamicFeedback {
        exit_code,
        crash_report: None,
        profiling: Some(Profiling {
            exec_time_ms: duration.as_millis() as u64,
            runtime_entrypoint: entrypoint,
        }),
        coverage_file,
        coverage: Some(coverage),
        notes: Vec::new(),
    }
}

impl DynamicFeedback {
    pub fn is_crash(&self) -> bool {
        self.exit_code != 0
    }

    /// Entries shown inline: call-path functions in path order, then the
    /// least covered ones.
    pub fn inline_entries<'a>(&'a self, opts: &FeedbackOptions) -> Vec<&'a CoverageEntry> {
        let Some(cov) = &self.coverage else {
            return Vec::new();
        };
        let rank = |e: &CoverageEntry| {
            opts.taint_path
                .iter()
                .position(|t| plain_name(t) == plain_name(&e.function_name))
                .unwrap_or(usize::MAX)
        };
        let mut v: Vec<&CoverageEntry> = cov.iter().collect();
        v.sort_by(|a, b| {
            rank(a)
                .cmp(&rank(b))
                .then_with(|| a.region_coverage.partial_cmp(&b.region_coverage).unwrap_or(Ordering::Equal))
                .then_with(|| a.file_path.cmp(&b.file_path))
                .then_with(|| a.function_name.cmp(&b.function_name))
        });
        v.truncate(opts.top_n);
        v
    }

    pub fn render(&self, opts: &FeedbackOptions) -> String {
        let mut s = format!("exit code: {}\n", self.exit_code);
        if let Some(report) = &self.crash_report {
            s.push_str("crash report:\n");
            s.push_str(report);
            if !report.ends_with('\n') {
                s.push('\n');
            }
            return s;
        }
        if let Some(p) = &self.profiling {
            let _ = writeln!(s, "execution time: {} ms", p.exec_time_ms);
            match &p.runtime_entrypoint {
                Some((file, func)) => {
                    let _ = writeln!(s, "runtime entrypoint: {func} ({file})");
                }
                None => s.push_str("runtime entrypoint: unknown\n"),
            }
        }
        if let Some(path) = &self.coverage_file {
            let _ = writeln!(s, "coverage file: {}", path.display());
        }
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        if let Some(cov) = &self.coverage {
            let shown = self.inline_entries(opts);
            let _ = writeln!(s, "coverage ({} of {} functions):", shown.len(), cov.len());
            for e in shown {
                let _ = writeln!(
                    s,
                    "  {} [{}] region {}% line {}% branch {}%",
                    e.function_name,
                    e.file_path,
                    format_percent(e.region_coverage),
                    format_percent(e.line_coverage),
                    format_percent(e.branch_coverage)
                );
            }
        }
        s
    }
}
