use std::fs::{self, File};
use std::io::Write;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use walkdir::WalkDir;

use super::sanitizer::SanitizerKind;
use super::toolchain::{CoverageTool, Toolchain};
use super::DynEnvError;
use crate::fsutil::copy_tree;
use crate::process::run_with_timeout;

const STAMP: &str = "stamp.json";
const LOG_TAIL_LINES: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstrumentedBinary {
    pub binary_path: PathBuf,
    pub sanitizer: SanitizerKind,
    pub coverage_enabled: bool,
    pub build_log_path: PathBuf,
    /// Copy of the source tree the binary was compiled from.
    pub build_source: PathBuf,
    pub toolchain: Toolchain,
}

#[derive(Debug, Clone)]
pub struct BuildRequest<'a> {
    pub source: &'a Path,
    pub build_script: &'a Path,
    pub sanitizer: SanitizerKind,
    pub enable_coverage: bool,
    pub toolchain: &'a Toolchain,
    pub cache_dir: &'a Path,
    /// Binary name under `$OUT`; when unset the single executable there is used.
    pub binary: Option<&'a str>,
    pub timeout: Duration,
}

impl BuildRequest<'_> {
    fn coverage_active(&self) -> bool {
        self.enable_coverage && self.toolchain.coverage.is_available()
    }

    fn cache_key(&self) -> Result<String, DynEnvError> {
        let mut h = Sha256::new();
        for entry in WalkDir::new(self.source).sort_by_file_name() {
            let entry = entry.map_err(|e| DynEnvError::Io {
                context: format!("walking {}", self.source.display()),
                source: e.into(),
            })?;
            if !entry.file_type().is_file() {
                continue;
            }
            let rel = entry.path().strip_prefix(self.source).unwrap_or(entry.path());
            h.update(rel.to_string_lossy().as_bytes());
            h.update([0]);
            h.update(fs::read(entry.path()).map_err(DynEnvError::io(format!("reading {}", entry.path().display())))?);
            h.update([0]);
        }
        let script = fs::read(self.build_script)
            .map_err(DynEnvError::io(format!("reading {}", self.build_script.display())))?;
        h.update(&script);
        h.update(self.sanitizer.as_str());
        h.update([self.coverage_active() as u8]);
        h.update(self.toolchain.cc.to_string_lossy().as_bytes());
        h.update(format!("{:?}", self.toolchain.version));
        h.update(self.binary.unwrap_or(""));
        Ok(hex::encode(&h.finalize()[..12]))
    }

    fn flags(&self) -> Vec<&'static str> {
        let mut flags = vec!["-g", "-O0"];
        flags.extend(self.sanitizer.flags());
        if self.coverage_active() {
            flags.extend(self.toolchain.coverage.flags());
        }
        flags
    }
}

fn is_executable_file(p: &Path) -> bool {
    p.metadata()
        .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
        .unwrap_or(false)
}

fn locate_binary(out: &Path, name: Option<&str>) -> Result<PathBuf, String> {
    if let Some(name) = name {
        let p = out.join(name);
        return if is_executable_file(&p) {
            Ok(p)
        } else {
            Err(format!("expected binary {} was not produced", p.display()))
        };
    }
    let mut found: Vec<PathBuf> = fs::read_dir(out)
        .map_err(|e| e.to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| is_executable_file(p))
        .collect();
    found.sort();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => Err(format!("no executable found in {}", out.display())),
        _ => Err(format!(
            "several executables in {}; set the binary name explicitly",
            out.display()
        )),
    }
}

fn log_tail(log: &Path) -> String {
    let text = fs::read_to_string(log).unwrap_or_default();
    let lines: Vec<&str> = text.lines().collect();
    lines[lines.len().saturating_sub(LOG_TAIL_LINES)..].join("\n")
}

/// Builds the target once per cache key; later calls with identical inputs
/// return the cached binary.
pub fn build_with_sanitizer(req: &BuildRequest<'_>) -> Result<InstrumentedBinary, DynEnvError> {
    if !req.build_script.is_file() {
        return Err(DynEnvError::Io {
            context: format!("build script {}", req.build_script.display()),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        });
    }
    fs::create_dir_all(req.cache_dir).map_err(DynEnvError::io(format!("creating {}", req.cache_dir.display())))?;
    let key = req.cache_key()?;
    let lock = File::create(req.cache_dir.join(format!("{key}.lock"))).map_err(DynEnvError::io("creating build lock"))?;
    lock.lock().map_err(DynEnvError::io("locking build cache"))?;

    let root = req.cache_dir.join(&key);
    let stamp = root.join(STAMP);
    if let Ok(text) = fs::read_to_string(&stamp) {
        if let Ok(bin) = serde_json::from_str::<InstrumentedBinary>(&text) {
            if is_executable_file(&bin.binary_path) {
                log::debug!("reusing cached build {}", root.display());
                return Ok(bin);
            }
        }
    }
    if root.exists() {
        fs::remove_dir_all(&root).map_err(DynEnvError::io(format!("clearing {}", root.display())))?;
    }
    let src = root.join("src");
    let out = root.join("out");
    fs::create_dir_all(&out).map_err(DynEnvError::io(format!("creating {}", out.display())))?;
    copy_tree(req.source, &src).map_err(DynEnvError::io(format!("copying {}", req.source.display())))?;
    let script = root.join("build.sh");
    fs::copy(req.build_script, &script).map_err(DynEnvError::io("copying build script"))?;

    let flags = req.flags().join(" ");
    let log_path = root.join("build.log");
    let mut cmd = Command::new("sh");
    cmd.arg(&script)
        .current_dir(&src)
        .env("CC", &req.toolchain.cc)
        .env("CXX", &req.toolchain.cxx)
        .env("CFLAGS", &flags)
        .env("CXXFLAGS", &flags)
        .env("LDFLAGS", &flags)
        .env("SANITIZER", req.sanitizer.as_str())
        .env("SRC", &src)
        .env("OUT", &out);
    let run = run_with_timeout(cmd, None, req.timeout, 4 << 20)
        .map_err(DynEnvError::io("running build script"))?;
    let mut log = File::create(&log_path).map_err(DynEnvError::io("writing build log"))?;
    writeln!(log, "$ CC={} CFLAGS='{}' sh {}", req.toolchain.cc.display(), flags, script.display())
        .and_then(|_| log.write_all(run.text().as_bytes()))
        .map_err(DynEnvError::io("writing build log"))?;

    let status = run.exit.code();
    if status != Some(0) {
        let message = match status {
            None => format!("build timed out after {} s", req.timeout.as_secs()),
            Some(c) => format!("build script exited with {c}\n{}", log_tail(&log_path)),
        };
        return Err(DynEnvError::BuildFailed { log_path, message });
    }
    let binary_path = locate_binary(&out, req.binary).map_err(|message| DynEnvError::BuildFailed {
        log_path: log_path.clone(),
        message,
    })?;
    let coverage_enabled = req.coverage_active();
    let mut toolchain = req.toolchain.clone();
    if !coverage_enabled {
        toolchain.coverage = CoverageTool::None;
    }
    let bin = InstrumentedBinary {
        binary_path,
        sanitizer: req.sanitizer,
        coverage_enabled,
        build_log_path: log_path,
        build_source: src,
        toolchain,
    };
    let json = serde_json::to_string_pretty(&bin).map_err(|e| DynEnvError::Parse {
        what: "build stamp".into(),
        message: e.to_string(),
    })?;
    fs::write(&stamp, json).map_err(DynEnvError::io("writing build stamp"))?;
    Ok(bin)
}
