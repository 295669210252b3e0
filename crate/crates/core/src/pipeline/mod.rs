//! End-to-end orchestration: analysis, PoC generation and validation.

mod config;
mod manifest;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use config::{AgentSection, BackendChoice, EnvSection, RunConfig};
pub use manifest::{update_manifest, MANIFEST};

use crate::agent::{
    instantiate_workspace, plan_workspace, render_guidance, run_agent_loop, select_entry, AgentError, BudgetState,
    CodeLocation, LoopOutcome, ModelBackend, RemoteBackend, ScriptedBackend, StopReason, SubmitHook,
};
use crate::dynenv::{assign_sanitizer, DynEnvError, DynamicFeedback, EnvironmentConfig, SanitizerEnvironment, TestEnvironment};
use crate::ir::{link_modules, load_ir_module, IRProgram, IrError};
use crate::reach::{build_call_graph, detect_entrypoints, filter_reachable, mark_dead_code, ReachError, ReachabilityGraph};
use crate::rules::{
    builtin_rules, evaluate_rules, generate_program_facts_with, load_rules_dir, build_report, FactOptions, Rule,
    RuleError, VulnEntry, VulnReport,
};

pub const REPORT: &str = "report.json";
pub const CALLGRAPH: &str = "callgraph.txt";
pub const DROPPED: &str = "dropped.log";
pub const TRANSCRIPT: &str = "transcript.jsonl";
pub const POC: &str = "poc.bin";
pub const PROMPT: &str = "prompt.txt";
pub const GENERATION: &str = "generation.json";
pub const ENV_CONFIG: &str = "env.toml";

/// Exit statuses of the command-line front end.
pub mod exit {
    pub const OK: i32 = 0;
    pub const NO_CRASH: i32 = 1;
    pub const BUDGET_EXHAUSTED: i32 = 10;
    pub const NOT_REPRODUCED: i32 = 11;
    pub const CONFIG: i32 = 20;
    pub const ANALYZE: i32 = 21;
    pub const GENERATE: i32 = 22;
    pub const VALIDATE: i32 = 23;
}

#[derive(Debug, Error)]
pub enum AnalyzeError {
    #[error("{}: {source}", path.display())]
    Ir {
        path: PathBuf,
        #[source]
        source: IrError,
    },
    #[error(transparent)]
    Reach(#[from] ReachError),
    #[error(transparent)]
    Rules(#[from] RuleError),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("analyze: {0}")]
    Analyze(#[from] AnalyzeError),
    #[error("generate: {0}")]
    Generate(#[from] AgentError),
    #[error("validate: {0}")]
    Validate(#[from] DynEnvError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => exit::CONFIG,
            PipelineError::Analyze(_) => exit::ANALYZE,
            PipelineError::Generate(_) => exit::GENERATE,
            PipelineError::Validate(_) | PipelineError::Io { .. } => exit::VALIDATE,
        }
    }

    fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> PipelineError {
        let context = context.into();
        move |source| PipelineError::Io { context, source }
    }
}

fn write(out: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    fs::write(out.join(name), contents).map_err(PipelineError::io(format!("writing {name}")))
}

fn manifest(out: &Path, names: &[&str]) -> Result<(), PipelineError> {
    update_manifest(out, names).map(|_| ()).map_err(PipelineError::io("writing manifest"))
}

#[derive(Debug, Clone)]
pub struct AnalysisOutput {
    pub program: IRProgram,
    pub reach: ReachabilityGraph,
    pub removed: Vec<String>,
    pub report: VulnReport,
}

/// Loads and links the IR, prunes unreachable code and applies the rules.
pub fn analyze(cfg: &RunConfig) -> Result<AnalysisOutput, PipelineError> {
    if cfg.ir.is_empty() {
        return Err(PipelineError::Config("no IR inputs (--ir)".into()));
    }
    let mut modules = Vec::new();
    for path in &cfg.ir {
        let text = fs::read_to_string(path).map_err(PipelineError::io(format!("reading {}", path.display())))?;
        let m = load_ir_module(&text).map_err(|source| AnalyzeError::Ir {
            path: path.clone(),
            source,
        })?;
        modules.push(m);
    }
    let qualifier = cfg
        .module_qualifier
        .clone()
        .or_else(|| (cfg.ir.len() == 1).then(|| cfg.ir[0].to_string_lossy().into_owned()));
    let mut rules = builtin_rules();
    if let Some(dir) = &cfg.rules {
        rules.extend(load_rules_dir(dir).map_err(AnalyzeError::from)?);
    }
    Ok(analyze_program(link_modules(modules), &cfg.entrypoints, qualifier, &rules)?)
}

/// Analysis of an already linked program.
pub fn analyze_program(
    program: IRProgram,
    entrypoints: &[String],
    module_qualifier: Option<String>,
    rules: &[Rule],
) -> Result<AnalysisOutput, AnalyzeError> {
    let entrypoints = detect_entrypoints(&program, entrypoints)?;
    let graph = build_call_graph(&program);
    let reach = filter_reachable(&graph, &entrypoints)?;
    let (pruned, removed) = mark_dead_code(&program, &reach);
    let facts = generate_program_facts_with(&pruned, &FactOptions { module_qualifier });
    let findings = evaluate_rules(&facts, rules);
    let report = build_report(&findings, &reach);
    Ok(AnalysisOutput {
        program,
        reach,
        removed,
        report,
    })
}

/// `analyze` subcommand: writes the report, call graph and drop log.
pub fn cmd_analyze(cfg: &RunConfig) -> Result<AnalysisOutput, PipelineError> {
    fs::create_dir_all(&cfg.out).map_err(PipelineError::io(format!("creating {}", cfg.out.display())))?;
    let a = analyze(cfg)?;
    write(&cfg.out, REPORT, a.report.to_json())?;
    write(&cfg.out, CALLGRAPH, a.reach.graph.dump())?;
    let mut log = String::new();
    for f in &a.removed {
        log.push_str(&format!("unreachable function: {f}\n"));
    }
    log.push_str(&format!("unreachable findings dropped: {}\n", a.report.dropped));
    write(&cfg.out, DROPPED, log)?;
    manifest(&cfg.out, &[REPORT, CALLGRAPH, DROPPED])?;
    Ok(a)
}

fn load_or_analyze(cfg: &RunConfig) -> Result<VulnReport, PipelineError> {
    let path = cfg.out.join(REPORT);
    if path.is_file() {
        let text = fs::read_to_string(&path).map_err(PipelineError::io(format!("reading {}", path.display())))?;
        return VulnReport::from_json(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())));
    }
    Ok(cmd_analyze(cfg)?.report)
}

fn selected(cfg: &RunConfig, report: &VulnReport) -> Result<(String, VulnEntry), PipelineError> {
    let loc: CodeLocation = cfg.require(&cfg.location, "code location (--location)")?.parse()?;
    Ok(select_entry(report, &loc)?)
}

fn env_config(cfg: &RunConfig, source: &Path, entry: Option<&VulnEntry>) -> Result<EnvironmentConfig, PipelineError> {
    let e = &cfg.env;
    let sanitizer = e
        .sanitizer
        .or_else(|| entry.map(|x| assign_sanitizer(&x.vulnerability_type)))
        .unwrap_or_default();
    let build_script = cfg.require(&cfg.build_script, "build script (--build-script)")?;
    let abs = |p: &Path| std::path::absolute(p).map_err(PipelineError::io(format!("resolving {}", p.display())));
    Ok(EnvironmentConfig {
        source_dir: abs(source)?,
        build_script: abs(build_script)?,
        sanitizer,
        coverage: e.coverage,
        binary: e.binary.clone(),
        input_mode: e.input_mode,
        timeout_secs: e.timeout_secs,
        build_timeout_secs: e.build_timeout_secs,
        cache_dir: abs(&e.cache_dir.clone().unwrap_or_else(|| cfg.out.join("build-cache")))?,
        output_cap: cfg.agent.output_cap,
        toolchain: e.toolchain.clone(),
        entrypoints: cfg.entrypoints.clone(),
        taint_path: entry.map(VulnEntry::path_functions).unwrap_or_default(),
        top_n: e.top_n,
        display_root: None,
    })
}

#[derive(Debug, Clone)]
pub struct GenerateOutput {
    pub entry_key: String,
    pub entry: VulnEntry,
    pub workspace: PathBuf,
    pub outcome: LoopOutcome,
}

#[derive(serde::Serialize)]
struct GenerationSummary<'a> {
    entry: &'a str,
    workspace: &'a Path,
    stop: StopReason,
    budget: BudgetState,
    poc_submission: Option<u32>,
}

/// The `pagent` executable for `submit.sh`: `$PAGENT_BIN`, else the running
/// binary when it is the CLI itself.
fn cli_program() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("PAGENT_BIN") {
        return Some(PathBuf::from(p));
    }
    std::env::current_exe()
        .ok()
        .filter(|p| p.file_stem().is_some_and(|s| s == "pagent"))
}

/// `generate` subcommand: prepares the workspace and runs the agent loop.
pub fn cmd_generate(cfg: &RunConfig) -> Result<GenerateOutput, PipelineError> {
    let report = load_or_analyze(cfg)?;
    let (key, entry) = selected(cfg, &report)?;
    let backend_choice = cfg.backend_choice()?;
    let source = cfg.require(&cfg.source, "source directory (--source)")?;
    let mut env_cfg = env_config(cfg, source, Some(&entry))?;
    let mut backend: Box<dyn ModelBackend> = match backend_choice {
        BackendChoice::Scripted(p) => Box::new(ScriptedBackend::load(&p)?),
        BackendChoice::Remote => Box::new(RemoteBackend::new(cfg.remote.clone())?),
    };
    fs::create_dir_all(&cfg.out).map_err(PipelineError::io(format!("creating {}", cfg.out.display())))?;
    let facts = SanitizerEnvironment::new(env_cfg.clone()).facts();
    let layout = plan_workspace(source, &std::path::absolute(&cfg.out).map_err(PipelineError::io("resolving output"))?, facts)?;
    env_cfg.display_root = Some(layout.root.join("src"));
    let env_path = std::path::absolute(cfg.out.join(ENV_CONFIG)).map_err(PipelineError::io("resolving env config"))?;
    let env_toml = toml::to_string(&env_cfg).map_err(|e| PipelineError::Config(e.to_string()))?;
    write(&cfg.out, ENV_CONFIG, env_toml)?;
    let hook = cli_program().map(|program| SubmitHook {
        program,
        env_config: env_path,
    });
    let guidance = render_guidance(&key, &entry, &layout);
    write(&cfg.out, PROMPT, format!("{}\n", guidance.prompt))?;
    let mut ws = instantiate_workspace(source, &guidance, &layout, hook.as_ref())?;
    let mut env = SanitizerEnvironment::new(env_cfg);
    let result = run_agent_loop(
        backend.as_mut(),
        &mut ws,
        &mut env,
        &guidance,
        BudgetState::new(cfg.budget),
        &cfg.agent.policy(),
    );
    let outcome = match result {
        Ok(o) => o,
        Err(f) => {
            write(&cfg.out, TRANSCRIPT, f.transcript.to_jsonl())?;
            manifest(&cfg.out, &[TRANSCRIPT, PROMPT, ENV_CONFIG])?;
            return Err(f.error.into());
        }
    };
    write(&cfg.out, TRANSCRIPT, outcome.transcript.to_jsonl())?;
    let summary = GenerationSummary {
        entry: &key,
        workspace: &ws.root,
        stop: outcome.stop,
        budget: outcome.budget,
        poc_submission: outcome.poc_submission,
    };
    write(&cfg.out, GENERATION, serde_json::to_string_pretty(&summary).expect("summary serializes") + "\n")?;
    let mut names = vec![TRANSCRIPT, PROMPT, ENV_CONFIG, GENERATION];
    if let Some(poc) = &outcome.poc {
        write(&cfg.out, POC, poc)?;
        names.push(POC);
    }
    manifest(&cfg.out, &names)?;
    Ok(GenerateOutput {
        entry_key: key,
        entry,
        workspace: ws.root,
        outcome,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidateTarget {
    PrePatch,
    PostPatch,
}

impl ValidateTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            ValidateTarget::PrePatch => "pre_patch",
            ValidateTarget::PostPatch => "post_patch",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Validation {
    pub feedback: DynamicFeedback,
    /// Agent-facing rendering of the feedback.
    pub message: String,
}

/// `validate` subcommand: builds the chosen tree and runs `poc` once.
pub fn cmd_validate(cfg: &RunConfig, poc: &Path, target: ValidateTarget) -> Result<Validation, PipelineError> {
    let source = match target {
        ValidateTarget::PrePatch => cfg.require(&cfg.source, "source directory (--source)")?,
        ValidateTarget::PostPatch => cfg.require(&cfg.patched_source, "patched source directory (--patched-source)")?,
    };
    let entry = match (&cfg.location, fs::read_to_string(cfg.out.join(REPORT))) {
        (Some(_), Ok(text)) => VulnReport::from_json(&text)
            .ok()
            .and_then(|r| selected(cfg, &r).ok())
            .map(|(_, e)| e),
        _ => None,
    };
    let env_cfg = env_config(cfg, source, entry.as_ref())?;
    let dir = format!("validate-{}", target.as_str());
    let run_dir = std::path::absolute(cfg.out.join(&dir)).map_err(PipelineError::io("resolving run directory"))?;
    let mut env = SanitizerEnvironment::new(env_cfg);
    let fb = env.evaluate(poc, &run_dir)?;
    let mut names = vec![format!("{dir}/feedback.json")];
    if fb.coverage_file.is_some() {
        names.push(format!("{dir}/coverage.jsonl"));
    }
    manifest(&cfg.out, &names.iter().map(String::as_str).collect::<Vec<_>>())?;
    Ok(Validation {
        message: fb.render(&env.feedback_options()),
        feedback: fb,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub analysis: AnalysisOutput,
    pub generation: GenerateOutput,
    pub validation: Option<Validation>,
}

impl RunOutput {
    pub fn exit_code(&self) -> i32 {
        match (&self.generation.outcome.poc, &self.validation) {
            (Some(_), Some(v)) if v.feedback.exit_code != 0 => exit::OK,
            (Some(_), _) => exit::NOT_REPRODUCED,
            (None, _) => exit::BUDGET_EXHAUSTED,
        }
    }
}

/// Full pipeline; stops at the first failing phase.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutput, PipelineError> {
    let analysis = cmd_analyze(cfg)?;
    let generation = cmd_generate(cfg)?;
    let validation = match &generation.outcome.poc {
        Some(_) => Some(cmd_validate(cfg, &cfg.out.join(POC), ValidateTarget::PrePatch)?),
        None => None,
    };
    Ok(RunOutput {
        analysis,
        generation,
        validation,
    })
}
