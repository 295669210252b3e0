//! Entrypoint detection, call-graph construction with signature-based
//! indirect-call resolution, reachability filtering and call-path extraction.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ir::{IRProgram, InstrKind, SignatureKey};

pub const AUTO_ENTRYPOINTS: &[&str] = &["LLVMFuzzerTestOneInput", "main"];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReachError {
    #[error("no entrypoint found")]
    NoEntrypointFound,
    #[error("unknown entrypoint `{0}`")]
    UnknownEntrypoint(String),
    #[error("`{0}` is not reachable from any entrypoint")]
    TargetUnreachable(String),
    #[error("invalid call path: {0}")]
    InvalidPath(String),
}

/// Name up to the first `.`, so `LLVMFuzzerTestOneInput.70743` maps to
/// `LLVMFuzzerTestOneInput`.
pub fn base_name(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DirectEdge {
    pub caller: String,
    pub callee: String,
    pub site: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndirectEdge {
    pub caller: String,
    pub callee: String,
    pub site: usize,
    pub signature: SignatureKey,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallGraph {
    pub nodes: BTreeSet<String>,
    pub direct_edges: Vec<DirectEdge>,
    pub indirect_edges: Vec<IndirectEdge>,
}

impl CallGraph {
    /// Successor sets over direct and indirect edges.
    pub fn successors(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut succ: BTreeMap<&str, BTreeSet<&str>> =
            self.nodes.iter().map(|n| (n.as_str(), BTreeSet::new())).collect();
        let pairs = self
            .direct_edges
            .iter()
            .map(|e| (&e.caller, &e.callee))
            .chain(self.indirect_edges.iter().map(|e| (&e.caller, &e.callee)));
        for (a, b) in pairs {
            succ.entry(a.as_str()).or_default().insert(b.as_str());
        }
        succ
    }

    pub fn has_edge(&self, caller: &str, callee: &str) -> bool {
        self.direct_edges
            .iter()
            .any(|e| e.caller == caller && e.callee == callee)
            || self
                .indirect_edges
                .iter()
                .any(|e| e.caller == caller && e.callee == callee)
    }

    /// `caller -> callee [direct|indirect]`, one distinct edge per line, sorted.
    pub fn dump(&self) -> String {
        let mut lines = BTreeSet::new();
        for e in &self.direct_edges {
            lines.insert(format!("{} -> {} [direct]", e.caller, e.callee));
        }
        for e in &self.indirect_edges {
            lines.insert(format!("{} -> {} [indirect]", e.caller, e.callee));
        }
        let mut out = String::new();
        for l in lines {
            let _ = writeln!(out, "{l}");
        }
        out
    }

    fn restrict(&self, keep: &BTreeSet<String>) -> CallGraph {
        CallGraph {
            nodes: keep.clone(),
            direct_edges: self
                .direct_edges
                .iter()
                .filter(|e| keep.contains(&e.caller) && keep.contains(&e.callee))
                .cloned()
                .collect(),
            indirect_edges: self
                .indirect_edges
                .iter()
                .filter(|e| keep.contains(&e.caller) && keep.contains(&e.callee))
                .cloned()
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReachabilityGraph {
    pub entrypoints: Vec<String>,
    pub reachable: BTreeSet<String>,
    pub graph: CallGraph,
}

/// User entrypoints first, then every defined fuzz-harness or `main`
/// function in lexicographic order.
pub fn detect_entrypoints(program: &IRProgram, user: &[String]) -> Result<Vec<String>, ReachError> {
    let mut out: Vec<String> = Vec::new();
    for u in user {
        if !out.contains(u) {
            out.push(u.clone());
        }
    }
    let auto: BTreeSet<&str> = program
        .defined_functions()
        .filter(|f| AUTO_ENTRYPOINTS.contains(&base_name(&f.name)))
        .map(|f| f.name.as_str())
        .collect();
    for a in auto {
        if !out.iter().any(|u| u == a) {
            out.push(a.to_string());
        }
    }
    if out.is_empty() {
        return Err(ReachError::NoEntrypointFound);
    }
    Ok(out)
}

/// One edge per indirect call site and compatible, defined, address-taken function.
pub fn resolve_indirect_calls(program: &IRProgram) -> Vec<IndirectEdge> {
    let candidates: Vec<_> = program
        .functions
        .iter()
        .filter(|f| f.is_definition && f.is_address_taken)
        .collect();
    let mut edges = Vec::new();
    for f in program.defined_functions() {
        for i in &f.instructions {
            let (InstrKind::IndirectCall, Some(sig)) = (i.kind, &i.callee_signature) else {
                continue;
            };
            for c in &candidates {
                if sig.call_compatible(&c.signature) {
                    edges.push(IndirectEdge {
                        caller: f.name.clone(),
                        callee: c.name.clone(),
                        site: i.ordinal,
                        signature: sig.clone(),
                    });
                }
            }
        }
    }
    edges.sort();
    edges
}

pub fn build_call_graph(program: &IRProgram) -> CallGraph {
    let mut graph = CallGraph::default();
    let known: BTreeSet<&str> = program.functions.iter().map(|f| f.name.as_str()).collect();
    for f in program.defined_functions() {
        graph.nodes.insert(f.name.clone());
        for i in &f.instructions {
            if let Some(callee) = &i.callee {
                if known.contains(callee.as_str()) {
                    graph.nodes.insert(callee.clone());
                    graph.direct_edges.push(DirectEdge {
                        caller: f.name.clone(),
                        callee: callee.clone(),
                        site: i.ordinal,
                    });
                }
            }
        }
    }
    graph.indirect_edges = resolve_indirect_calls(program);
    graph.direct_edges.sort();
    graph
}

pub fn filter_reachable(graph: &CallGraph, entrypoints: &[String]) -> Result<ReachabilityGraph, ReachError> {
    if let Some(e) = entrypoints.iter().find(|e| !graph.nodes.contains(*e)) {
        return Err(ReachError::UnknownEntrypoint(e.clone()));
    }
    let succ = graph.successors();
    let mut reachable: BTreeSet<String> = BTreeSet::new();
    let mut queue: VecDeque<&str> = VecDeque::new();
    for e in entrypoints {
        if reachable.insert(e.clone()) {
            queue.push_back(e);
        }
    }
    while let Some(n) = queue.pop_front() {
        for s in succ.get(n).into_iter().flatten() {
            if reachable.insert((*s).to_string()) {
                queue.push_back(s);
            }
        }
    }
    Ok(ReachabilityGraph {
        entrypoints: entrypoints.to_vec(),
        graph: graph.restrict(&reachable),
        reachable,
    })
}

/// Drops bodies of unreachable functions, keeping them as declarations.
/// Returns the pruned program and the sorted names whose bodies were removed.
pub fn mark_dead_code(program: &IRProgram, reach: &ReachabilityGraph) -> (IRProgram, Vec<String>) {
    let mut pruned = program.clone();
    let mut removed = Vec::new();
    for f in &mut pruned.functions {
        if f.is_definition && !reach.reachable.contains(&f.name) {
            f.is_definition = false;
            f.instructions.clear();
            removed.push(f.name.clone());
        }
    }
    removed.sort();
    (pruned, removed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaintPath {
    pub functions: Vec<String>,
}

impl TaintPath {
    pub fn entrypoint(&self) -> &str {
        &self.functions[0]
    }

    pub fn target(&self) -> &str {
        self.functions.last().map_or("", String::as_str)
    }

    /// Checks first element, consecutive edges and last element.
    pub fn validate(&self, reach: &ReachabilityGraph, target: &str) -> Result<(), ReachError> {
        let first = self
            .functions
            .first()
            .ok_or_else(|| ReachError::InvalidPath("empty".into()))?;
        if !reach.entrypoints.contains(first) {
            return Err(ReachError::InvalidPath(format!("`{first}` is not an entrypoint")));
        }
        for w in self.functions.windows(2) {
            if !reach.graph.has_edge(&w[0], &w[1]) {
                return Err(ReachError::InvalidPath(format!("no edge {} -> {}", w[0], w[1])));
            }
        }
        if self.target() != target {
            return Err(ReachError::InvalidPath(format!("ends at `{}`", self.target())));
        }
        Ok(())
    }

    /// Python-list rendering used in reports: `['a', 'b']`.
    pub fn to_list_string(&self) -> String {
        let items: Vec<String> = self
            .functions
            .iter()
            .map(|f| format!("'{}'", f.replace('\\', "\\\\").replace('\'', "\\'")))
            .collect();
        format!("[{}]", items.join(", "))
    }
}

/// Shortest entrypoint-to-target path; ties go to the earlier entrypoint, then
/// to the lexicographically smallest next function at each step.
pub fn extract_path(reach: &ReachabilityGraph, target: &str) -> Result<TaintPath, ReachError> {
    if !reach.reachable.contains(target) {
        return Err(ReachError::TargetUnreachable(target.to_string()));
    }
    let succ = reach.graph.successors();
    let mut pred: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (a, bs) in &succ {
        for b in bs {
            pred.entry(b).or_default().push(a);
        }
    }
    let mut dist: BTreeMap<&str, usize> = BTreeMap::new();
    let mut queue = VecDeque::from([target]);
    dist.insert(target, 0);
    while let Some(n) = queue.pop_front() {
        let d = dist[n];
        for p in pred.get(n).into_iter().flatten() {
            if !dist.contains_key(p) {
                dist.insert(p, d + 1);
                queue.push_back(p);
            }
        }
    }
    let start = reach
        .entrypoints
        .iter()
        .filter_map(|e| dist.get(e.as_str()).map(|d| (*d, e.as_str())))
        .min_by_key(|(d, _)| *d)
        .ok_or_else(|| ReachError::TargetUnreachable(target.to_string()))?;
    let mut path = vec![start.1.to_string()];
    let mut cur = start.1;
    let mut d = start.0;
    while d > 0 {
        let next = succ[cur]
            .iter()
            .find(|s| dist.get(**s) == Some(&(d - 1)))
            .expect("BFS layer has a successor");
        path.push(next.to_string());
        cur = next;
        d -= 1;
    }
    Ok(TaintPath { functions: path })
}
