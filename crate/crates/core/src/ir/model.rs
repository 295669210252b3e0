use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::signature::SignatureKey;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrKind {
    DirectCall,
    IndirectCall,
    IndexAccess,
    Load,
    Store,
    Alloc,
    FreeLike,
    IntDiv,
    IntArith,
    Other,
}

impl InstrKind {
    pub fn as_str(self) -> &'static str {
        match self {
            InstrKind::DirectCall => "direct_call",
            InstrKind::IndirectCall => "indirect_call",
            InstrKind::IndexAccess => "index_access",
            InstrKind::Load => "load",
            InstrKind::Store => "store",
            InstrKind::Alloc => "alloc",
            InstrKind::FreeLike => "free_like",
            InstrKind::IntDiv => "int_div",
            InstrKind::IntArith => "int_arith",
            InstrKind::Other => "other",
        }
    }
}

/// One recognized instruction.
///
/// `operands` holds textual IR value names in instruction order: for calls the
/// arguments (preceded by the callee value for indirect calls), for
/// `getelementptr` the base followed by the indices, for `store` the value
/// then the pointer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IRInstruction {
    pub kind: InstrKind,
    pub opcode: String,
    pub result: Option<String>,
    pub operands: Vec<String>,
    pub callee: Option<String>,
    pub callee_signature: Option<SignatureKey>,
    /// Operation type for arithmetic, loads and allocations (`i32`, `[8 x i8]`).
    pub ty: Option<String>,
    pub line: u32,
    pub col: u32,
    pub ordinal: usize,
    /// `@symbol` references outside the callee position.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub symbol_refs: Vec<String>,
}

impl IRInstruction {
    pub fn has_position(&self) -> bool {
        self.line != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IRFunction {
    pub name: String,
    pub signature: SignatureKey,
    pub is_definition: bool,
    pub is_address_taken: bool,
    pub instructions: Vec<IRInstruction>,
    pub source_file: Option<String>,
}

/// Origin of a renamed definition after linking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCollision {
    pub name: String,
    pub renamed_to: String,
    pub kept_module: String,
    pub renamed_module: String,
}

/// Whole-program model of one or more linked IR modules.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IRProgram {
    pub functions: Vec<IRFunction>,
    pub module_names: Vec<String>,
    /// Function name to the module that defines it (or declares it, when no
    /// definition exists).
    pub link_table: BTreeMap<String, String>,
    pub collisions: Vec<LinkCollision>,
    /// Global variable names (without `@`).
    pub globals: BTreeSet<String>,
    /// `@symbol` references found in global initializers.
    pub global_refs: BTreeSet<String>,
}

impl IRProgram {
    pub fn function(&self, name: &str) -> Option<&IRFunction> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn defined_functions(&self) -> impl Iterator<Item = &IRFunction> {
        self.functions.iter().filter(|f| f.is_definition)
    }

    pub fn address_taken(&self) -> impl Iterator<Item = &IRFunction> {
        self.functions.iter().filter(|f| f.is_address_taken)
    }

    /// Recomputes `is_address_taken` from instruction and initializer references.
    pub fn recompute_address_taken(&mut self) {
        let mut referenced: BTreeSet<&str> = self.global_refs.iter().map(String::as_str).collect();
        for f in &self.functions {
            for instr in &f.instructions {
                referenced.extend(instr.symbol_refs.iter().map(String::as_str));
            }
        }
        let referenced: BTreeSet<String> = referenced.into_iter().map(str::to_string).collect();
        for f in &mut self.functions {
            f.is_address_taken = referenced.contains(&f.name);
        }
    }

    /// Deterministic one-line-per-instruction summary of the recognized program.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for f in &self.functions {
            let _ = writeln!(
                out,
                "{} {} {} {}{}",
                if f.is_definition { "define" } else { "declare" },
                f.name,
                f.signature,
                f.instructions.len(),
                if f.is_address_taken { " address-taken" } else { "" }
            );
            for i in &f.instructions {
                if i.kind == InstrKind::Other {
                    continue;
                }
                let _ = writeln!(
                    out,
                    "  #{} {} {} [{}] callee={} sig={} @{}:{}",
                    i.ordinal,
                    i.kind.as_str(),
                    i.result.as_deref().unwrap_or("-"),
                    i.operands.join(", "),
                    i.callee.as_deref().unwrap_or("-"),
                    i.callee_signature.as_ref().map_or("-", |s| s.as_str()),
                    i.line,
                    i.col
                );
            }
        }
        out
    }
}
