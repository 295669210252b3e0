use std::fs;
use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};

use super::actions::Transcript;
use super::guidance::TaskGuidance;
use super::AgentError;
use crate::fsutil::{copy_tree, list_files};

pub const SOURCE_DIR: &str = "src";
pub const README: &str = "README.md";
pub const SUBMIT_SCRIPT: &str = "submit.sh";
pub const FEEDBACK_DIR: &str = "feedback";

/// What the workspace will contain, known before it is populated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkspaceLayout {
    pub root: PathBuf,
    /// Relative paths of every file present before the first turn.
    pub files: Vec<String>,
    /// Facts about the test environment.
    pub facts: Vec<String>,
}

/// Lets `submit.sh` reach the test environment outside the agent loop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmitHook {
    pub program: PathBuf,
    pub env_config: PathBuf,
}

#[derive(Debug)]
pub struct Workspace {
    pub root: PathBuf,
    pub source_path: PathBuf,
    pub readme_path: PathBuf,
    pub submit_script_path: PathBuf,
    pub transcript: Transcript,
}

impl Workspace {
    pub fn feedback_dir(&self, submission: u32) -> PathBuf {
        self.root.join(FEEDBACK_DIR).join(format!("run-{submission}"))
    }
}

/// Reserves a fresh root under `parent` and lists the files it will hold.
pub fn plan_workspace(source: &Path, parent: &Path, facts: Vec<String>) -> Result<WorkspaceLayout, AgentError> {
    fs::create_dir_all(parent).map_err(AgentError::io(format!("creating {}", parent.display())))?;
    let root = tempfile::Builder::new()
        .prefix("workspace-")
        .tempdir_in(parent)
        .map_err(AgentError::io("creating workspace root"))?
        .keep();
    let root = fs::canonicalize(&root).map_err(AgentError::io("resolving workspace root"))?;
    let mut files: Vec<String> = list_files(source)
        .map_err(|e| AgentError::Io {
            context: format!("listing {}", source.display()),
            source: e.into(),
        })?
        .into_iter()
        .map(|f| format!("{SOURCE_DIR}/{f}"))
        .collect();
    files.push(README.into());
    files.push(SUBMIT_SCRIPT.into());
    files.sort();
    Ok(WorkspaceLayout { root, files, facts })
}

fn quote(p: &Path) -> String {
    format!("'{}'", p.to_string_lossy().replace('\'', r"'\''"))
}

fn submit_script(hook: Option<&SubmitHook>) -> String {
    let mut s = String::from(
        "#!/bin/sh\nif [ $# -ne 1 ]; then\n  echo \"usage: bash submit.sh /path/to/poc\" >&2\n  exit 2\nfi\n",
    );
    match hook {
        Some(h) => s.push_str(&format!(
            "root=$(cd \"$(dirname \"$0\")\" && pwd)\nexec {} submit --env {} --run-dir \"$root/{FEEDBACK_DIR}/manual-$$\" \"$1\"\n",
            quote(&h.program),
            quote(&h.env_config)
        )),
        None => s.push_str("echo \"submissions are handled by the agent host\" >&2\nexit 2\n"),
    }
    s
}

/// Copies the sources and writes the README and submission script.
pub fn instantiate_workspace(
    source: &Path,
    guidance: &TaskGuidance,
    layout: &WorkspaceLayout,
    hook: Option<&SubmitHook>,
) -> Result<Workspace, AgentError> {
    let root = &layout.root;
    if fs::read_dir(root).map_err(AgentError::io("reading workspace root"))?.next().is_some() {
        return Err(AgentError::Io {
            context: format!("workspace {}", root.display()),
            source: std::io::Error::from(std::io::ErrorKind::AlreadyExists),
        });
    }
    let source_path = root.join(SOURCE_DIR);
    fs::create_dir_all(&source_path).map_err(AgentError::io("creating source directory"))?;
    copy_tree(source, &source_path).map_err(AgentError::io(format!("copying {}", source.display())))?;
    let readme_path = root.join(README);
    fs::write(&readme_path, &guidance.readme).map_err(AgentError::io("writing README.md"))?;
    let submit_script_path = root.join(SUBMIT_SCRIPT);
    fs::write(&submit_script_path, submit_script(hook)).map_err(AgentError::io("writing submit.sh"))?;
    fs::set_permissions(&submit_script_path, fs::Permissions::from_mode(0o755))
        .map_err(AgentError::io("marking submit.sh executable"))?;
    Ok(Workspace {
        root: root.clone(),
        source_path,
        readme_path,
        submit_script_path,
        transcript: Transcript::default(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::guidance::render_guidance;
    use crate::rules::VulnEntry;

    fn guidance(layout: &WorkspaceLayout) -> TaskGuidance {
        let e = VulnEntry {
            vulnerability_type: "Out-of-Bounds-Vulnerability".into(),
            vulnerable_function: "f".into(),
            entrypoint: "main".into(),
            taint_path: "['main', 'f']".into(),
            vulnerable_program_location: "3".into(),
            template_assertion_violation: "0 <= i <= SIZEOF(b)".into(),
        };
        render_guidance("potential_target_1", &e, layout)
    }

    #[test]
    fn empty_source() {
        let src = tempfile::tempdir().unwrap();
        let parent = tempfile::tempdir().unwrap();
        let layout = plan_workspace(src.path(), parent.path(), vec![]).unwrap();
        assert_eq!(layout.files, ["README.md", "submit.sh"]);
        let ws = instantiate_workspace(src.path(), &guidance(&layout), &layout, None).unwrap();
        assert!(ws.readme_path.is_file() && ws.submit_script_path.is_file());
        assert_eq!(list_files(&ws.root).unwrap(), layout.files);
        assert!(ws.transcript.entries.is_empty());
    }

    #[test]
    fn listing_matches_tree_and_roots_are_fresh() {
        let src = tempfile::tempdir().unwrap();
        fs::create_dir_all(src.path().join("lib/sub")).unwrap();
        fs::write(src.path().join("a.c"), "int a;").unwrap();
        fs::write(src.path().join("lib/sub/b.h"), "").unwrap();
        let parent = tempfile::tempdir().unwrap();
        let l1 = plan_workspace(src.path(), parent.path(), vec![]).unwrap();
        let ws = instantiate_workspace(src.path(), &guidance(&l1), &l1, None).unwrap();
        assert_eq!(list_files(&ws.root).unwrap(), l1.files);
        let l2 = plan_workspace(src.path(), parent.path(), vec![]).unwrap();
        assert_ne!(l1.root, l2.root);
        assert_eq!(fs::read_dir(&l2.root).unwrap().count(), 0);
    }

    #[test]
    fn hook_script_forwards() {
        let s = submit_script(Some(&SubmitHook {
            program: "/opt/pagent".into(),
            env_config: "/out/env.toml".into(),
        }));
        assert!(s.contains("exec '/opt/pagent' submit --env '/out/env.toml'"));
    }
}
