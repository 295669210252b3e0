use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::sanitizer::SanitizerKind;
use super::DynEnvError;

static VERSION_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"version (\d+)\.").unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompilerFamily {
    Clang,
    Gcc,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CoverageTool {
    Llvm { profdata: PathBuf, cov: PathBuf },
    Gcov { gcov: PathBuf },
    None,
}

impl CoverageTool {
    pub fn is_available(&self) -> bool {
        !matches!(self, CoverageTool::None)
    }

    /// Instrumentation flags for compile and link steps.
    pub fn flags(&self) -> &'static [&'static str] {
        match self {
            CoverageTool::Llvm { .. } => &["-fprofile-instr-generate", "-fcoverage-mapping"],
            CoverageTool::Gcov { .. } => &["--coverage"],
            CoverageTool::None => &[],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Toolchain {
    pub family: CompilerFamily,
    pub cc: PathBuf,
    pub cxx: PathBuf,
    pub version: Option<u32>,
    pub coverage: CoverageTool,
}

/// Explicit tool paths; unset entries are searched on `PATH`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToolchainPrefs {
    pub cc: Option<PathBuf>,
    pub cxx: Option<PathBuf>,
    pub llvm_profdata: Option<PathBuf>,
    pub llvm_cov: Option<PathBuf>,
    pub gcov: Option<PathBuf>,
}

pub fn find_in_path(name: &str) -> Option<PathBuf> {
    if name.contains('/') {
        let p = PathBuf::from(name);
        return is_executable(&p).then_some(p);
    }
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|d| d.join(name))
        .find(|p| is_executable(p))
}

fn is_executable(p: &Path) -> bool {
    use std::os::unix::fs::PermissionsExt;
    p.metadata()
        .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
        .unwrap_or(false)
}

fn major_version(tool: &Path) -> Option<u32> {
    let out = Command::new(tool).arg("--version").output().ok()?;
    let text = String::from_utf8_lossy(&out.stdout);
    VERSION_RE.captures(&text)?[1].parse().ok()
}

fn family_of(cc: &Path) -> Option<CompilerFamily> {
    let out = Command::new(cc).arg("--version").output().ok()?;
    if !out.status.success() {
        return None;
    }
    let text = String::from_utf8_lossy(&out.stdout).to_ascii_lowercase();
    Some(if text.contains("clang") {
        CompilerFamily::Clang
    } else {
        CompilerFamily::Gcc
    })
}

fn versioned(base: &str, major: Option<u32>, explicit: &Option<PathBuf>) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return find_in_path(&p.to_string_lossy());
    }
    major
        .and_then(|m| find_in_path(&format!("{base}-{m}")))
        .or_else(|| find_in_path(base))
}

fn coverage_for(family: CompilerFamily, version: Option<u32>, prefs: &ToolchainPrefs) -> CoverageTool {
    match family {
        CompilerFamily::Clang => {
            let profdata = versioned("llvm-profdata", version, &prefs.llvm_profdata);
            let cov = versioned("llvm-cov", version, &prefs.llvm_cov);
            match (profdata, cov) {
                // Raw profiles are only readable by tools of the same release.
                (Some(p), Some(c)) if major_version(&p) == version && major_version(&c) == version => {
                    CoverageTool::Llvm { profdata: p, cov: c }
                }
                _ => CoverageTool::None,
            }
        }
        CompilerFamily::Gcc => match versioned("gcov", version, &prefs.gcov) {
            Some(g) => CoverageTool::Gcov { gcov: g },
            None => CoverageTool::None,
        },
    }
}

fn make(cc: PathBuf, cxx: Option<PathBuf>, family: CompilerFamily, prefs: &ToolchainPrefs) -> Toolchain {
    let version = major_version(&cc);
    let cxx = cxx.unwrap_or_else(|| {
        let name = match family {
            CompilerFamily::Clang => "clang++",
            CompilerFamily::Gcc => "g++",
        };
        find_in_path(name).unwrap_or_else(|| PathBuf::from(name))
    });
    Toolchain {
        family,
        coverage: coverage_for(family, version, prefs),
        cc,
        cxx,
        version,
    }
}

/// Picks a compiler able to build with `sanitizer`, preferring one whose
/// coverage tools are present when `want_coverage` is set.
pub fn detect_toolchain(
    prefs: &ToolchainPrefs,
    sanitizer: SanitizerKind,
    want_coverage: bool,
) -> Result<Toolchain, DynEnvError> {
    if let Some(cc) = &prefs.cc {
        let path = find_in_path(&cc.to_string_lossy())
            .ok_or_else(|| DynEnvError::ToolchainMissing(format!("compiler {} not found", cc.display())))?;
        let family = family_of(&path)
            .ok_or_else(|| DynEnvError::ToolchainMissing(format!("{} does not run", path.display())))?;
        let tc = make(path, prefs.cxx.clone(), family, prefs);
        if sanitizer == SanitizerKind::Memory && tc.family != CompilerFamily::Clang {
            return Err(DynEnvError::ToolchainMissing("MemorySanitizer requires clang".into()));
        }
        return Ok(tc);
    }
    let mut candidates = Vec::new();
    if let Some(clang) = find_in_path("clang") {
        candidates.push(make(clang, prefs.cxx.clone(), CompilerFamily::Clang, prefs));
    }
    if sanitizer != SanitizerKind::Memory {
        if let Some(gcc) = find_in_path("gcc") {
            candidates.push(make(gcc, prefs.cxx.clone(), CompilerFamily::Gcc, prefs));
        }
    }
    if candidates.is_empty() {
        return Err(DynEnvError::ToolchainMissing(format!(
            "no compiler supporting the {sanitizer} sanitizer found on PATH"
        )));
    }
    if want_coverage {
        if let Some(pos) = candidates.iter().position(|t| t.coverage.is_available()) {
            return Ok(candidates.swap_remove(pos));
        }
        log::warn!("no coverage exporter matches an installed compiler; coverage feedback disabled");
    }
    Ok(candidates.swap_remove(0))
}
