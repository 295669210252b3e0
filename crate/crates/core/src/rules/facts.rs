use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::RuleError;
use crate::ir::{IRFunction, IRInstruction, IRProgram, InstrKind};

/// Atom stored in a relation tuple.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Sym(String),
}

impl Value {
    pub fn sym(s: impl Into<String>) -> Self {
        Value::Sym(s.into())
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(i) => write!(f, "{i}"),
            Value::Sym(s) => f.write_str(s),
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Sym(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Sym(s)
    }
}

impl From<i64> for Value {
    fn from(i: i64) -> Self {
        Value::Int(i)
    }
}

pub type Tuple = Vec<Value>;

/// Relation name to arity for every relation filled from IR.
pub const BUILTIN_RELATIONS: &[(&str, usize)] = &[
    ("instr_func", 2),
    ("instr_pos", 3),
    ("instr_type", 2),
    ("indexaccessinstructions", 3),
    ("int_div", 2),
    ("int_arith", 4),
    ("alloc_site", 2),
    ("stack_alloc", 2),
    ("global_var", 1),
    ("free_site", 2),
    ("load_from", 2),
    ("store_to", 2),
    ("mem_access", 2),
    ("func_defined", 1),
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactBase {
    relations: BTreeMap<String, BTreeSet<Tuple>>,
}

impl FactBase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fact base with every builtin relation present and empty.
    pub fn with_builtin_relations() -> Self {
        let mut fb = Self::default();
        for (name, _) in BUILTIN_RELATIONS {
            fb.relations.insert((*name).to_string(), BTreeSet::new());
        }
        fb
    }

    /// Inserts a tuple, rejecting arity mismatches. Returns whether it was new.
    pub fn insert(&mut self, relation: &str, tuple: Tuple) -> Result<bool, RuleError> {
        let rel = self.relations.entry(relation.to_string()).or_default();
        if let Some(existing) = rel.iter().next() {
            if existing.len() != tuple.len() {
                return Err(RuleError::ArityMismatch {
                    relation: relation.to_string(),
                    expected: existing.len(),
                    found: tuple.len(),
                });
            }
        }
        Ok(rel.insert(tuple))
    }

    pub fn relation(&self, name: &str) -> Option<&BTreeSet<Tuple>> {
        self.relations.get(name)
    }

    pub fn len_of(&self, name: &str) -> usize {
        self.relations.get(name).map_or(0, BTreeSet::len)
    }

    pub fn total(&self) -> usize {
        self.relations.values().map(BTreeSet::len).sum()
    }

    pub fn relations(&self) -> &BTreeMap<String, BTreeSet<Tuple>> {
        &self.relations
    }

    pub(crate) fn relations_mut(&mut self) -> &mut BTreeMap<String, BTreeSet<Tuple>> {
        &mut self.relations
    }

    /// Tab-separated dump, one `relation<TAB>a<TAB>b` line per tuple.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (name, tuples) in &self.relations {
            for t in tuples {
                out.push_str(name);
                for v in t {
                    out.push('\t');
                    out.push_str(&v.to_string());
                }
                out.push('\n');
            }
        }
        out
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FactOptions {
    /// Prefix operand tokens with `<module>:`.
    pub module_qualifier: Option<String>,
}

pub fn instr_id(func: &str, ordinal: usize) -> String {
    format!("{func}#{ordinal}")
}

/// Source-line column for an instruction: its debug line, or
/// `ordinal:N` when it carries no location.
pub fn line_value(instr: &IRInstruction) -> Value {
    if instr.has_position() {
        Value::Int(i64::from(instr.line))
    } else {
        Value::Sym(format!("ordinal:{}", instr.ordinal))
    }
}

struct Tokens<'a> {
    prefix: String,
    func: &'a str,
}

impl Tokens<'_> {
    fn operand(&self, instr: &IRInstruction, raw: &str) -> String {
        if raw.starts_with('@') {
            return format!("{}{raw}", self.prefix);
        }
        if raw.starts_with('%') {
            return format!("{}{}:{raw}", self.prefix, self.func);
        }
        if instr.has_position() {
            format!("{}{}:{}:{}:{raw}", self.prefix, self.func, instr.line, instr.col)
        } else {
            format!("{}{}:#{}:{raw}", self.prefix, self.func, instr.ordinal)
        }
    }

    fn result(&self, instr: &IRInstruction) -> Option<String> {
        instr.result.as_deref().map(|r| self.operand(instr, r))
    }
}

fn arith_symbol(opcode: &str) -> &'static str {
    match opcode {
        "add" => "+",
        "sub" => "-",
        "mul" => "*",
        "shl" => "<<",
        _ => "?",
    }
}

/// Relational facts of every defined function with default options.
pub fn generate_program_facts(program: &IRProgram) -> FactBase {
    generate_program_facts_with(program, &FactOptions::default())
}

pub fn generate_program_facts_with(program: &IRProgram, options: &FactOptions) -> FactBase {
    let mut fb = FactBase::with_builtin_relations();
    let prefix = options
        .module_qualifier
        .as_deref()
        .map(|m| format!("<{m}>:"))
        .unwrap_or_default();
    for g in &program.globals {
        add(&mut fb, "global_var", vec![Value::Sym(format!("{prefix}@{g}"))]);
    }
    for f in program.defined_functions() {
        function_facts(&mut fb, f, &prefix);
    }
    fb
}

fn add(fb: &mut FactBase, rel: &str, tuple: Tuple) {
    fb.insert(rel, tuple).expect("builtin relation arity is fixed");
}

fn function_facts(fb: &mut FactBase, f: &IRFunction, prefix: &str) {
    let tok = Tokens {
        prefix: prefix.to_string(),
        func: &f.name,
    };
    add(fb, "func_defined", vec![Value::sym(&f.name)]);
    for i in &f.instructions {
        let id = Value::Sym(instr_id(&f.name, i.ordinal));
        add(fb, "instr_func", vec![id.clone(), Value::sym(&f.name)]);
        add(fb, "instr_pos", vec![id.clone(), line_value(i), Value::Int(i64::from(i.col))]);
        if let Some(ty) = &i.ty {
            add(fb, "instr_type", vec![id.clone(), Value::sym(ty)]);
        }
        let op = |k: usize| i.operands.get(k).map(|raw| Value::Sym(tok.operand(i, raw)));
        match i.kind {
            InstrKind::IndexAccess => {
                if let (Some(base), Some(index)) = (op(0), i.operands.last().map(|r| tok.operand(i, r))) {
                    add(fb, "indexaccessinstructions", vec![base, Value::Sym(index), id]);
                }
            }
            InstrKind::IntDiv => {
                if let Some(divisor) = op(1) {
                    add(fb, "int_div", vec![divisor, id]);
                }
            }
            InstrKind::IntArith => {
                if let (Some(lhs), Some(rhs)) = (op(0), op(1)) {
                    add(fb, "int_arith", vec![Value::sym(arith_symbol(&i.opcode)), lhs, rhs, id]);
                }
            }
            InstrKind::Alloc => {
                if let Some(res) = tok.result(i) {
                    let rel = if i.callee.is_some() { "alloc_site" } else { "stack_alloc" };
                    add(fb, rel, vec![Value::Sym(res), id]);
                }
            }
            InstrKind::FreeLike => {
                if let Some(ptr) = op(0) {
                    add(fb, "free_site", vec![ptr, id]);
                }
            }
            InstrKind::Load => {
                if let Some(ptr) = op(0) {
                    add(fb, "load_from", vec![ptr.clone(), id.clone()]);
                    add(fb, "mem_access", vec![ptr, id]);
                }
            }
            InstrKind::Store => {
                if let Some(ptr) = op(1) {
                    add(fb, "store_to", vec![ptr.clone(), id.clone()]);
                    add(fb, "mem_access", vec![ptr, id]);
                }
            }
            InstrKind::DirectCall | InstrKind::IndirectCall | InstrKind::Other => {}
        }
    }
}
