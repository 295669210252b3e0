use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use walkdir::WalkDir;

use super::builder::InstrumentedBinary;
use super::environment::InputMode;
use super::toolchain::CoverageTool;
use super::DynEnvError;
use crate::process::run_with_timeout;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ProfileData {
    Llvm { profraw: Vec<PathBuf> },
    Gcov { gcda: Vec<PathBuf> },
}

#[derive(Debug, Clone)]
pub struct RawRun {
    pub exit_code: i32,
    pub output: String,
    pub duration: Duration,
    pub profile: Option<ProfileData>,
    pub run_dir: PathBuf,
}

fn files_with_ext(dir: &Path, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = WalkDir::new(dir)
        .sort_by_file_name()
        .into_iter()
        .filter_map(Result::ok)
        .filter(|e| e.file_type().is_file() && e.path().extension().is_some_and(|x| x == ext))
        .map(|e| e.into_path())
        .collect();
    v.sort();
    v
}

/// Runs the binary on one candidate input inside `run_dir`.
pub fn execute_poc(
    binary: &InstrumentedBinary,
    poc: &Path,
    run_dir: &Path,
    mode: InputMode,
    timeout: Duration,
    output_cap: usize,
) -> Result<RawRun, DynEnvError> {
    if !poc.is_file() {
        return Err(DynEnvError::Io {
            context: format!("candidate input {}", poc.display()),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        });
    }
    fs::create_dir_all(run_dir).map_err(DynEnvError::io(format!("creating {}", run_dir.display())))?;
    let poc = fs::canonicalize(poc).map_err(DynEnvError::io("resolving candidate input"))?;
    let profile_dir = run_dir.join("profile");
    if profile_dir.exists() {
        fs::remove_dir_all(&profile_dir).map_err(DynEnvError::io("clearing profile directory"))?;
    }
    fs::create_dir_all(&profile_dir).map_err(DynEnvError::io("creating profile directory"))?;

    let mut cmd = Command::new(&binary.binary_path);
    cmd.current_dir(run_dir);
    if std::env::var_os("ASAN_OPTIONS").is_none() {
        cmd.env("ASAN_OPTIONS", "detect_leaks=0");
    }
    match &binary.toolchain.coverage {
        CoverageTool::Llvm { .. } => {
            cmd.env("LLVM_PROFILE_FILE", profile_dir.join("run-%p.profraw"));
        }
        CoverageTool::Gcov { .. } => {
            cmd.env("GCOV_PREFIX", &profile_dir).env("GCOV_PREFIX_STRIP", "0");
        }
        CoverageTool::None => {}
    }
    let stdin = match mode {
        InputMode::File => {
            cmd.arg(&poc);
            None
        }
        InputMode::Stdin => Some(File::open(&poc).map_err(DynEnvError::io("opening candidate input"))?),
    };
    let out = run_with_timeout(cmd, stdin, timeout, output_cap).map_err(DynEnvError::io("running target"))?;
    let Some(exit_code) = out.exit.code() else {
        return Err(DynEnvError::ExecutionTimeout {
            seconds: out.duration.as_secs_f64(),
        });
    };
    let profile = if exit_code != 0 {
        None
    } else {
        match &binary.toolchain.coverage {
            CoverageTool::Llvm { .. } => Some(ProfileData::Llvm {
                profraw: files_with_ext(&profile_dir, "profraw"),
            }),
            CoverageTool::Gcov { .. } => Some(ProfileData::Gcov {
                gcda: files_with_ext(&profile_dir, "gcda"),
            }),
            CoverageTool::None => None,
        }
    };
    Ok(RawRun {
        exit_code,
        output: out.text(),
        duration: out.duration,
        profile,
        run_dir: run_dir.to_path_buf(),
    })
}
