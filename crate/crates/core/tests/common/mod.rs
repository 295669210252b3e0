#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Duration;

use pagent_core::agent::{
    instantiate_workspace, plan_workspace, run_agent_loop, ActionPolicy, AgentAction, BudgetState, LoopOutcome,
    ScriptedBackend, TaskGuidance, Workspace,
};
use pagent_core::dynenv::{
    detect_toolchain, make_feedback, CoverageEntry, DynEnvError, DynamicFeedback, FeedbackOptions, SanitizerKind,
    TestEnvironment, ToolchainPrefs,
};
use pagent_core::ir::{load_ir_module, IRProgram, InstrKind};
use pagent_core::reach::{CallGraph, DirectEdge, IndirectEdge};
use pagent_core::rules::{CatPart, Clause, Expr, FactBase, Rule, Term, Value, BUILTIN_RELATIONS};
use rand::rngs::StdRng;
use rand::Rng;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// Whether a sanitizer-capable C compiler is installed.
pub fn sanitizer_toolchain() -> bool {
    detect_toolchain(&ToolchainPrefs::default(), SanitizerKind::Address, false).is_ok()
}

// ---- reachability ----

pub struct RandomGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize, bool)>,
    pub entries: Vec<usize>,
}

pub fn node(i: usize) -> String {
    format!("n{i}")
}

pub fn random_graph(rng: &mut StdRng) -> RandomGraph {
    let n = rng.random_range(1..=20);
    let m = rng.random_range(0..=n * 2);
    let edges = (0..m)
        .map(|_| (rng.random_range(0..n), rng.random_range(0..n), rng.random_bool(0.3)))
        .collect();
    let k = rng.random_range(1..=n.min(3));
    let entries = (0..k).map(|_| rng.random_range(0..n)).collect::<BTreeSet<_>>().into_iter().collect();
    RandomGraph { n, edges, entries }
}

impl RandomGraph {
    pub fn call_graph(&self) -> CallGraph {
        let mut g = CallGraph {
            nodes: (0..self.n).map(node).collect(),
            ..Default::default()
        };
        for (site, &(a, b, indirect)) in self.edges.iter().enumerate() {
            if indirect {
                g.indirect_edges.push(IndirectEdge {
                    caller: node(a),
                    callee: node(b),
                    site,
                    signature: pagent_core::ir::normalize_signature("void ()").unwrap(),
                });
            } else {
                g.direct_edges.push(DirectEdge {
                    caller: node(a),
                    callee: node(b),
                    site,
                });
            }
        }
        g
    }

    pub fn entry_names(&self) -> Vec<String> {
        self.entries.iter().map(|&e| node(e)).collect()
    }

    /// Warshall closure from the entry set.
    pub fn closure_oracle(&self) -> BTreeSet<String> {
        let n = self.n;
        let mut m = vec![vec![false; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            row[i] = true;
        }
        for &(a, b, _) in &self.edges {
            m[a][b] = true;
        }
        for k in 0..n {
            for i in 0..n {
                if m[i][k] {
                    for j in 0..n {
                        if m[k][j] {
                            m[i][j] = true;
                        }
                    }
                }
            }
        }
        (0..n)
            .filter(|&j| self.entries.iter().any(|&e| m[e][j]))
            .map(node)
            .collect()
    }
}

// ---- indirect-call resolution ----

const PARAM_POOL: &[(&str, bool)] = &[
    ("i32", false),
    ("i64", false),
    ("i8", false),
    ("double", false),
    ("ptr", true),
    ("i8*", true),
    ("%struct.S*", true),
    ("i32*", true),
];
const RET_POOL: &[(&str, bool)] = &[("void", false), ("i32", false), ("i1", false), ("ptr", true), ("i8*", true)];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenSig {
    ret: usize,
    params: Vec<usize>,
    variadic: bool,
}

impl GenSig {
    fn random(rng: &mut StdRng) -> Self {
        GenSig {
            ret: rng.random_range(0..RET_POOL.len()),
            params: (0..rng.random_range(0..=3)).map(|_| rng.random_range(0..PARAM_POOL.len())).collect(),
            variadic: rng.random_bool(0.15),
        }
    }

    fn norm(&self) -> (String, Vec<String>, bool) {
        let n = |(t, p): (&str, bool)| if p { "ptr".to_string() } else { t.to_string() };
        (
            n(RET_POOL[self.ret]),
            self.params.iter().map(|&p| n(PARAM_POOL[p])).collect(),
            self.variadic,
        )
    }

    /// Brute-force compatibility on the generated (not parsed) types.
    fn accepts(&self, callee: &GenSig) -> bool {
        let (sr, sp, sv) = self.norm();
        let (cr, cp, cv) = callee.norm();
        match (sv, cv) {
            (false, false) => sr == cr && sp == cp,
            (true, true) => {
                let k = sp.len().min(cp.len());
                sr == cr && sp[..k] == cp[..k]
            }
            _ => false,
        }
    }

    fn ret_text(&self) -> &'static str {
        RET_POOL[self.ret].0
    }

    fn param_types(&self) -> Vec<&'static str> {
        self.params.iter().map(|&p| PARAM_POOL[p].0).collect()
    }
}

fn zero_of(ty: &str) -> &'static str {
    if ty.ends_with('*') || ty == "ptr" {
        "null"
    } else if ty == "double" {
        "0.0"
    } else if ty == "i1" {
        "false"
    } else {
        "0"
    }
}

pub struct RandomFsaProgram {
    pub text: String,
    /// (caller, site rank within caller, callee) expected by brute force.
    pub expected: BTreeSet<(String, usize, String)>,
    pub sites: BTreeMap<String, usize>,
}

pub fn random_fsa_program(rng: &mut StdRng) -> RandomFsaProgram {
    let n = rng.random_range(2..=10);
    let sigs: Vec<GenSig> = (0..n).map(|_| GenSig::random(rng)).collect();
    let defined: Vec<bool> = (0..n).map(|_| rng.random_bool(0.85)).collect();
    let taken: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    let mut text = String::from("%struct.S = type { i32 }\n@slot = global ptr null\n");
    let table: Vec<String> = (0..n).filter(|&i| taken[i]).map(|i| format!("ptr @f{i}")).collect();
    if !table.is_empty() {
        let _ = writeln!(text, "@tab = global [{} x ptr] [{}]", table.len(), table.join(", "));
    }
    let mut expected = BTreeSet::new();
    let mut sites = BTreeMap::new();
    for i in 0..n {
        let sig = &sigs[i];
        let mut params: Vec<String> = sig.param_types().iter().enumerate().map(|(k, t)| format!("{t} %a{k}")).collect();
        if sig.variadic {
            params.push("...".into());
        }
        if !defined[i] {
            let tys: Vec<String> = params.iter().map(|p| p.split(' ').next().unwrap().to_string()).collect();
            let _ = writeln!(text, "declare {} @f{i}({})", sig.ret_text(), tys.join(", "));
            continue;
        }
        let _ = writeln!(text, "define {} @f{i}({}) {{", sig.ret_text(), params.join(", "));
        let nsites = rng.random_range(0..=3);
        for s in 0..nsites {
            let site = if rng.random_bool(0.6) {
                sigs[rng.random_range(0..n)].clone()
            } else {
                GenSig::random(rng)
            };
            let tys = site.param_types();
            let mut args: Vec<String> = tys.iter().map(|t| format!("{t} {}", zero_of(t))).collect();
            let _ = writeln!(text, "  %fp{s} = load ptr, ptr @slot");
            let lhs = if site.ret_text() == "void" { String::new() } else { format!("%r{s} = ") };
            if site.variadic {
                let mut fixed: Vec<&str> = tys.clone();
                fixed.push("...");
                args.push("i32 7".into());
                let _ = writeln!(
                    text,
                    "  {lhs}call {} ({}) %fp{s}({})",
                    site.ret_text(),
                    fixed.join(", "),
                    args.join(", ")
                );
            } else {
                let _ = writeln!(text, "  {lhs}call {} %fp{s}({})", site.ret_text(), args.join(", "));
            }
            for (j, callee) in sigs.iter().enumerate() {
                if defined[j] && taken[j] && site.accepts(callee) {
                    expected.insert((format!("f{i}"), s, format!("f{j}")));
                }
            }
        }
        sites.insert(format!("f{i}"), nsites);
        match sig.ret_text() {
            "void" => text.push_str("  ret void\n}\n"),
            t => {
                let _ = writeln!(text, "  ret {t} {}\n}}", zero_of(t));
            }
        }
    }
    RandomFsaProgram { text, expected, sites }
}

/// Resolved edges keyed by site rank, plus per-function indirect-site counts.
pub fn ranked_edges(
    program: &IRProgram,
    edges: &[IndirectEdge],
) -> (BTreeSet<(String, usize, String)>, BTreeMap<String, usize>) {
    let mut rank: HashMap<(String, usize), usize> = HashMap::new();
    let mut counts = BTreeMap::new();
    for f in program.defined_functions() {
        let ords: Vec<usize> = f
            .instructions
            .iter()
            .filter(|i| i.kind == InstrKind::IndirectCall)
            .map(|i| i.ordinal)
            .collect();
        counts.insert(f.name.clone(), ords.len());
        for (r, o) in ords.into_iter().enumerate() {
            rank.insert((f.name.clone(), o), r);
        }
    }
    let set = edges
        .iter()
        .map(|e| (e.caller.clone(), rank[&(e.caller.clone(), e.site)], e.callee.clone()))
        .collect();
    (set, counts)
}

pub fn parse(text: &str) -> IRProgram {
    load_ir_module(text).unwrap_or_else(|e| panic!("{e}\n{text}"))
}

// ---- datalog ----

const SYMS: &[&str] = &["i0", "i1", "i2", "f0", "f1", "o0", "o1", "o2", "+", "i32"];

pub fn random_fact_base(rng: &mut StdRng) -> FactBase {
    let mut fb = FactBase::with_builtin_relations();
    let total = rng.random_range(0..=200);
    for _ in 0..total {
        let (rel, arity) = BUILTIN_RELATIONS[rng.random_range(0..BUILTIN_RELATIONS.len())];
        let tuple = (0..arity)
            .map(|_| {
                if rng.random_bool(0.2) {
                    Value::Int(rng.random_range(1..=3))
                } else {
                    Value::sym(SYMS[rng.random_range(0..SYMS.len())])
                }
            })
            .collect();
        fb.insert(rel, tuple).unwrap();
    }
    fb
}

type Binding = HashMap<String, Value>;

fn resolve(t: &Term, b: &Binding) -> Option<Value> {
    match t {
        Term::Var(v) => b.get(v).cloned(),
        Term::Const(c) => Some(c.clone()),
        Term::Wildcard => None,
    }
}

fn expr_value(e: &Expr, b: &Binding) -> Option<Value> {
    match e {
        Expr::Term(t) => resolve(t, b),
        Expr::Cat(parts) => {
            let mut s = String::new();
            for p in parts {
                let (CatPart::Term(t) | CatPart::ToString(t)) = p;
                s.push_str(&resolve(t, b)?.to_string());
            }
            Some(Value::Sym(s))
        }
    }
}

fn body_bindings(rule: &Rule, db: &BTreeMap<String, BTreeSet<Vec<Value>>>) -> Vec<Binding> {
    let empty = BTreeSet::new();
    let mut bs: Vec<Binding> = vec![Binding::new()];
    for c in &rule.body {
        let Clause::Atom(a) = c else { continue };
        let mut next = Vec::new();
        for b in &bs {
            'tuples: for t in db.get(&a.relation).unwrap_or(&empty) {
                if t.len() != a.args.len() {
                    continue;
                }
                let mut nb = b.clone();
                for (arg, v) in a.args.iter().zip(t) {
                    match arg {
                        Term::Wildcard => {}
                        Term::Const(c) if c != v => continue 'tuples,
                        Term::Const(_) => {}
                        Term::Var(name) => match nb.get(name) {
                            Some(x) if x != v => continue 'tuples,
                            Some(_) => {}
                            None => {
                                nb.insert(name.clone(), v.clone());
                            }
                        },
                    }
                }
                next.push(nb);
            }
        }
        bs = next;
    }
    let mut out = Vec::new();
    'bindings: for mut b in bs {
        let mut pending: Vec<&Clause> = rule.body.iter().filter(|c| !matches!(c, Clause::Atom(_))).collect();
        while !pending.is_empty() {
            let before = pending.len();
            let mut rest = Vec::new();
            for c in pending {
                match c {
                    Clause::Assign { var, expr } => match (b.get(var).cloned(), expr_value(expr, &b)) {
                        (Some(x), Some(y)) => {
                            if x != y {
                                continue 'bindings;
                            }
                        }
                        (None, Some(y)) => {
                            b.insert(var.clone(), y);
                        }
                        (Some(x), None) => match expr {
                            Expr::Term(Term::Var(w)) => {
                                b.insert(w.clone(), x);
                            }
                            _ => rest.push(c),
                        },
                        (None, None) => rest.push(c),
                    },
                    Clause::NotEqual(l, r) => match (resolve(l, &b), resolve(r, &b)) {
                        (Some(x), Some(y)) => {
                            if x == y {
                                continue 'bindings;
                            }
                        }
                        _ => rest.push(c),
                    },
                    Clause::Atom(_) => unreachable!(),
                }
            }
            if rest.len() == before {
                continue 'bindings;
            }
            pending = rest;
        }
        out.push(b);
    }
    out
}

/// Plain iteration to fixpoint: every rule re-run on the whole database each
/// round; a choice relation admits the smallest new tuple per unseen key.
pub fn naive_fixpoint(facts: &FactBase, rules: &[Rule]) -> BTreeMap<String, BTreeSet<Vec<Value>>> {
    let mut db = facts.relations().clone();
    loop {
        let mut changed = false;
        for rule in rules {
            let candidates: BTreeSet<Vec<Value>> = body_bindings(rule, &db)
                .iter()
                .filter_map(|b| rule.head.args.iter().map(|t| resolve(t, b)).collect::<Option<Vec<_>>>())
                .collect();
            let rel = db.entry(rule.head.relation.clone()).or_default();
            let key = |t: &Vec<Value>, pos: &[usize]| pos.iter().map(|&p| t[p].clone()).collect::<Vec<_>>();
            let mut taken: BTreeSet<Vec<Value>> = match &rule.choice_positions {
                Some(pos) => rel.iter().map(|t| key(t, pos)).collect(),
                None => BTreeSet::new(),
            };
            for t in candidates {
                if rel.contains(&t) {
                    continue;
                }
                if let Some(pos) = &rule.choice_positions {
                    if !taken.insert(key(&t, pos)) {
                        continue;
                    }
                }
                rel.insert(t);
                changed = true;
            }
        }
        if !changed {
            return db;
        }
    }
}

// ---- agent loop ----

/// Crashes on any input containing `BOOM`; clean runs report one coverage entry.
pub struct MarkerEnv {
    pub evaluations: u32,
}

impl TestEnvironment for MarkerEnv {
    fn evaluate(&mut self, poc: &Path, _run_dir: &Path) -> Result<DynamicFeedback, DynEnvError> {
        self.evaluations += 1;
        let bytes = std::fs::read(poc).map_err(DynEnvError::io("reading poc"))?;
        let crash = bytes.windows(4).any(|w| w == b"BOOM");
        let cov = vec![CoverageEntry {
            file_path: "harness.c".into(),
            function_name: "main".into(),
            region_coverage: (bytes.len() % 100) as f64,
            line_coverage: 50.0,
            branch_coverage: 0.0,
        }];
        Ok(make_feedback(
            crash as i32,
            "ERROR: AddressSanitizer: stack-buffer-overflow",
            Duration::from_millis(3),
            cov,
            None,
            Some(("harness.c".into(), "main".into())),
        ))
    }

    fn feedback_options(&self) -> FeedbackOptions {
        FeedbackOptions::default()
    }

    fn facts(&self) -> Vec<String> {
        vec!["inputs are passed as a file path".into()]
    }
}

pub struct LoopRun {
    pub outcome: LoopOutcome,
    pub evaluations: u32,
    pub workspace: Workspace,
    _dir: tempfile::TempDir,
}

pub fn run_script(actions: Vec<AgentAction>, budget: u32) -> LoopRun {
    run_script_with(actions, budget, &ActionPolicy::default())
}

pub fn run_script_with(actions: Vec<AgentAction>, budget: u32, policy: &ActionPolicy) -> LoopRun {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("project");
    std::fs::create_dir(&src).unwrap();
    std::fs::write(src.join("harness.c"), "int main(void) { return 0; }\n").unwrap();
    let layout = plan_workspace(&src, dir.path(), vec![]).unwrap();
    let guidance = TaskGuidance {
        prompt: "find the bug".into(),
        readme: "readme".into(),
    };
    let mut ws = instantiate_workspace(&src, &guidance, &layout, None).unwrap();
    let mut env = MarkerEnv { evaluations: 0 };
    let mut backend = ScriptedBackend::from_actions(actions);
    let outcome = run_agent_loop(
        &mut backend,
        &mut ws,
        &mut env,
        &guidance,
        BudgetState::new(budget),
        policy,
    )
    .unwrap_or_else(|f| panic!("loop failed: {}", f.error));
    LoopRun {
        outcome,
        evaluations: env.evaluations,
        workspace: ws,
        _dir: dir,
    }
}

/// Random write/submit/read script; `crash_p` is the chance a written input
/// contains the crash marker.
pub fn random_script(rng: &mut StdRng, len: usize, crash_p: f64) -> Vec<AgentAction> {
    let mut out = Vec::new();
    for k in 0..len {
        let name = format!("in{}.bin", rng.random_range(0..4));
        match rng.random_range(0..4) {
            0 => out.push(AgentAction::ReadFile { path: "README.md".into() }),
            1 => out.push(AgentAction::SubmitPoc { path: name }),
            _ => {
                let body = if rng.random_bool(crash_p) {
                    format!("xxBOOM{k}")
                } else {
                    format!("benign-{k}-{}", rng.random_range(0..1000))
                };
                out.push(AgentAction::write_text(name.clone(), body));
                out.push(AgentAction::SubmitPoc { path: name });
            }
        }
    }
    out
}

/// Script that never crashes and never finishes on its own.
pub fn benign_script(len: usize) -> Vec<AgentAction> {
    (0..len)
        .flat_map(|k| {
            [
                AgentAction::write_text("poc.bin", format!("benign {k}")),
                AgentAction::SubmitPoc { path: "poc.bin".into() },
            ]
        })
        .collect()
}

// ---- coverage exporter stand-ins ----

fn script(path: &Path, body: &str) {
    use std::os::unix::fs::PermissionsExt;
    std::fs::write(path, format!("#!/bin/sh\n{body}\n")).unwrap();
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o755)).unwrap();
}

/// A binary and finished run whose coverage tools replay a captured export.
pub fn replayed_llvm_run(dir: &Path, export: &Path) -> (pagent_core::dynenv::InstrumentedBinary, pagent_core::dynenv::RawRun) {
    use pagent_core::dynenv::{CompilerFamily, CoverageTool, InstrumentedBinary, ProfileData, RawRun, Toolchain};
    let profdata = dir.join("llvm-profdata");
    let cov = dir.join("llvm-cov");
    script(
        &profdata,
        "while [ $# -gt 0 ]; do if [ \"$1\" = -o ]; then : > \"$2\"; fi; shift; done",
    );
    script(&cov, &format!("cat '{}'", export.display()));
    let run_dir = dir.join("run");
    std::fs::create_dir_all(run_dir.join("profile")).unwrap();
    let raw = run_dir.join("profile/run-1.profraw");
    std::fs::write(&raw, b"").unwrap();
    let binary = InstrumentedBinary {
        binary_path: dir.join("target-bin"),
        sanitizer: SanitizerKind::Address,
        coverage_enabled: true,
        build_log_path: dir.join("build.log"),
        build_source: PathBuf::from("/src"),
        toolchain: Toolchain {
            family: CompilerFamily::Clang,
            cc: "clang".into(),
            cxx: "clang++".into(),
            version: None,
            coverage: CoverageTool::Llvm { profdata, cov },
        },
    };
    let run = RawRun {
        exit_code: 0,
        output: String::new(),
        duration: Duration::from_millis(1),
        profile: Some(ProfileData::Llvm { profraw: vec![raw] }),
        run_dir,
    };
    (binary, run)
}
