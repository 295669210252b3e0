//! Program facts, the rule language, its evaluator and report assembly.

mod builtin;
mod dsl;
mod eval;
mod facts;
mod report;

use std::path::Path;

use thiserror::Error;

pub use builtin::{builtin_rules, rule_for_type, BUILTIN_RULES, VULN_TYPES};
pub use dsl::{parse_rules, Atom, CatPart, Clause, ClauseGroup, Expr, Rule, Term};
pub use eval::{evaluate_fixpoint, evaluate_rules, extract_findings, VulnFinding};
pub use facts::{
    generate_program_facts, generate_program_facts_with, instr_id, line_value, FactBase, FactOptions, Tuple, Value,
    BUILTIN_RELATIONS,
};
pub use report::{build_report, canonical_assertion, format_assertion, VulnEntry, VulnReport};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RuleError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax { line: usize, col: usize, message: String },
    #[error("unbound variable ?{0}")]
    UnboundVariable(String),
    #[error("relation `{relation}` has arity {expected}, got a tuple of {found}")]
    ArityMismatch { relation: String, expected: usize, found: usize },
    #[error("cannot read rules from {path}: {message}")]
    Io { path: String, message: String },
}

/// Parses every `*.dl` file of a directory in file-name order.
pub fn load_rules_dir(dir: &Path) -> Result<Vec<Rule>, RuleError> {
    let io = |e: std::io::Error| RuleError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "dl"))
        .collect();
    files.sort();
    let mut rules = Vec::new();
    for f in files {
        let text = std::fs::read_to_string(&f).map_err(io)?;
        rules.extend(parse_rules(&text).map_err(|e| match e {
            RuleError::Syntax { line, col, message } => RuleError::Syntax {
                line,
                col,
                message: format!("{}: {message}", f.display()),
            },
            other => other,
        })?);
    }
    Ok(rules)
}
