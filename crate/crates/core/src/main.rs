use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pagent_core::dynenv::{EnvironmentConfig, SanitizerEnvironment, SanitizerKind, TestEnvironment};
use pagent_core::pipeline::{self, exit, PipelineError, RunConfig, ValidateTarget};

#[derive(Parser)]
#[command(name = "pagent", version, about = "Static-analysis-guided PoC generation and validation")]
struct Cli {
    #[command(flatten)]
    common: Common,
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// LLVM IR input (repeatable).
    #[arg(long = "ir", global = true)]
    ir: Vec<PathBuf>,
    #[arg(long, global = true)]
    source: Option<PathBuf>,
    #[arg(long, global = true)]
    patched_source: Option<PathBuf>,
    #[arg(long, global = true)]
    build_script: Option<PathBuf>,
    /// Directory of additional `.dl` rule files.
    #[arg(long, global = true)]
    rules: Option<PathBuf>,
    /// Target location as `function[:line]`.
    #[arg(long, global = true)]
    location: Option<String>,
    /// Extra analysis entrypoint (repeatable).
    #[arg(long = "entrypoint", global = true)]
    entrypoints: Vec<String>,
    /// Maximum number of PoC submissions.
    #[arg(long, global = true)]
    budget: Option<u32>,
    /// `scripted:<path>` or `remote`.
    #[arg(long, global = true)]
    backend: Option<String>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    sanitizer: Option<SanitizerKind>,
    /// Per-execution timeout in seconds.
    #[arg(long, global = true)]
    timeout: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Target {
    #[value(name = "pre_patch", alias = "pre-patch")]
    PrePatch,
    #[value(name = "post_patch", alias = "post-patch")]
    PostPatch,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the vulnerability report from IR.
    Analyze,
    /// Run the agent loop for one report entry.
    Generate,
    /// Execute a PoC against the original or patched tree.
    Validate {
        #[arg(long)]
        poc: PathBuf,
        #[arg(long, value_enum, default_value = "pre_patch")]
        target: Target,
    },
    /// Analyze, generate and validate.
    Run,
    #[command(hide = true)]
    Submit {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        poc: PathBuf,
    },
}

fn config(c: Common) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !c.ir.is_empty() {
        cfg.ir = c.ir;
    }
    if !c.entrypoints.is_empty() {
        cfg.entrypoints = c.entrypoints;
    }
    cfg.source = c.source.or(cfg.source);
    cfg.patched_source = c.patched_source.or(cfg.patched_source);
    cfg.build_script = c.build_script.or(cfg.build_script);
    cfg.rules = c.rules.or(cfg.rules);
    cfg.location = c.location.or(cfg.location);
    cfg.backend = c.backend.or(cfg.backend);
    cfg.budget = c.budget.unwrap_or(cfg.budget);
    cfg.out = c.out.unwrap_or(cfg.out);
    cfg.env.sanitizer = c.sanitizer.or(cfg.env.sanitizer);
    cfg.env.timeout_secs = c.timeout.unwrap_or(cfg.env.timeout_secs);
    Ok(cfg)
}

fn submit(env: PathBuf, run_dir: PathBuf, poc: PathBuf) -> anyhow::Result<i32> {
    let text = std::fs::read_to_string(&env).with_context(|| format!("reading {}", env.display()))?;
    let cfg: EnvironmentConfig = toml::from_str(&text).with_context(|| format!("parsing {}", env.display()))?;
    let mut env = SanitizerEnvironment::new(cfg);
    let fb = env.evaluate(&poc, &run_dir)?;
    print!("{}", fb.render(&env.feedback_options()));
    Ok(if fb.is_crash() { exit::NO_CRASH } else { exit::OK })
}

fn dispatch(cli: Cli) -> anyhow::Result<i32> {
    let cmd = cli.command;
    if let Cmd::Submit { env, run_dir, poc } = cmd {
        return submit(env, run_dir, poc);
    }
    let cfg = config(cli.common)?;
    match cmd {
        Cmd::Analyze => {
            let a = pipeline::cmd_analyze(&cfg)?;
            println!(
                "{} entries ({} unreachable findings dropped) -> {}",
                a.report.len(),
                a.report.dropped,
                cfg.out.join(pipeline::REPORT).display()
            );
            Ok(exit::OK)
        }
        Cmd::Generate => {
            let g = pipeline::cmd_generate(&cfg)?;
            let o = &g.outcome;
            println!(
                "{}: {:?} after {} of {} submissions",
                g.entry_key, o.stop, o.budget.used, o.budget.max_iterations
            );
            Ok(if o.poc.is_some() { exit::OK } else { exit::BUDGET_EXHAUSTED })
        }
        Cmd::Validate { poc, target } => {
            let target = match target {
                Target::PrePatch => ValidateTarget::PrePatch,
                Target::PostPatch => ValidateTarget::PostPatch,
            };
            let v = pipeline::cmd_validate(&cfg, &poc, target)?;
            print!("{}", v.message);
            Ok(if v.feedback.is_crash() { exit::NO_CRASH } else { exit::OK })
        }
        Cmd::Run => {
            let r = pipeline::cmd_run(&cfg)?;
            let o = &r.generation.outcome;
            println!(
                "{}: {:?} after {} submissions; artifacts in {}",
                r.generation.entry_key,
                o.stop,
                o.budget.used,
                cfg.out.display()
            );
            Ok(r.exit_code())
        }
        Cmd::Submit { .. } => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            let code = match e.downcast_ref::<PipelineError>() {
                Some(p) => {
                    eprintln!("error: {p}");
                    p.exit_code()
                }
                None => {
                    eprintln!("error: {e:#}");
                    exit::VALIDATE
                }
            };
            ExitCode::from(code as u8)
        }
    }
}
