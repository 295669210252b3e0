//! Child-process execution with a wall-clock limit and bounded output capture.

use std::fs::File;
use std::io::{Read, Seek, SeekFrom};
use std::os::unix::process::{CommandExt, ExitStatusExt};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

pub const TRUNCATION_MARKER: &str = "\n[... output truncated ...]\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitKind {
    Exited(i32),
    Signaled(i32),
    TimedOut,
}

impl ExitKind {
    /// Shell-style status: the exit code, or 128 + signal number.
    pub fn code(self) -> Option<i32> {
        match self {
            ExitKind::Exited(c) => Some(c),
            ExitKind::Signaled(s) => Some(128 + s),
            ExitKind::TimedOut => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProcOutput {
    pub exit: ExitKind,
    /// Combined stdout and stderr, cut at the capture cap.
    pub output: Vec<u8>,
    pub truncated: bool,
    pub duration: Duration,
}

impl ProcOutput {
    pub fn text(&self) -> String {
        let mut s = String::from_utf8_lossy(&self.output).into_owned();
        if self.truncated {
            s.push_str(TRUNCATION_MARKER);
        }
        s
    }
}

/// Runs `cmd` in its own process group, capturing stdout and stderr into one
/// stream. The whole group is killed once `timeout` elapses.
pub fn run_with_timeout(
    mut cmd: Command,
    stdin: Option<File>,
    timeout: Duration,
    cap: usize,
) -> std::io::Result<ProcOutput> {
    let mut sink = tempfile::tempfile()?;
    cmd.stdout(sink.try_clone()?)
        .stderr(sink.try_clone()?)
        .stdin(stdin.map_or_else(Stdio::null, Stdio::from))
        .process_group(0);
    let start = Instant::now();
    let mut child = cmd.spawn()?;
    let pid = child.id() as libc::pid_t;
    let exit = loop {
        if let Some(status) = child.try_wait()? {
            break match (status.code(), status.signal()) {
                (Some(c), _) => ExitKind::Exited(c),
                (None, Some(s)) => ExitKind::Signaled(s),
                (None, None) => ExitKind::Exited(-1),
            };
        }
        if start.elapsed() >= timeout {
            // SAFETY: signalling our own child's process group.
            unsafe {
                libc::kill(-pid, libc::SIGKILL);
            }
            let _ = child.wait();
            break ExitKind::TimedOut;
        }
        std::thread::sleep(Duration::from_millis(5));
    };
    let duration = start.elapsed();
    // Grandchildren may still hold the sink open; never wait on them.
    unsafe {
        libc::kill(-pid, libc::SIGKILL);
    }
    sink.seek(SeekFrom::Start(0))?;
    let mut output = Vec::new();
    (&mut sink).take(cap as u64 + 1).read_to_end(&mut output)?;
    let truncated = output.len() > cap;
    output.truncate(cap);
    Ok(ProcOutput {
        exit,
        output,
        truncated,
        duration,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sh(script: &str) -> Command {
        let mut c = Command::new("sh");
        c.arg("-c").arg(script);
        c
    }

    #[test]
    fn captures_status_and_output() {
        let out = run_with_timeout(sh("echo hi; echo err >&2; exit 3"), None, Duration::from_secs(5), 1024).unwrap();
        assert_eq!(out.exit, ExitKind::Exited(3));
        assert_eq!(out.text(), "hi\nerr\n");
    }

    #[test]
    fn signals_map_to_128_plus() {
        let out = run_with_timeout(sh("kill -SEGV $$"), None, Duration::from_secs(5), 1024).unwrap();
        assert_eq!(out.exit.code(), Some(139));
    }

    #[test]
    fn timeout_kills_group() {
        let start = Instant::now();
        let out = run_with_timeout(sh("sleep 30 & sleep 30"), None, Duration::from_millis(200), 1024).unwrap();
        assert_eq!(out.exit, ExitKind::TimedOut);
        assert!(start.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn output_is_capped() {
        let out = run_with_timeout(sh("yes | head -c 5000"), None, Duration::from_secs(5), 100).unwrap();
        assert!(out.truncated);
        assert_eq!(out.output.len(), 100);
        assert!(out.text().ends_with(TRUNCATION_MARKER));
    }
}
