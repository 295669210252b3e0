use super::dsl::{parse_rules, Rule};
use super::facts::Value;

/// Rule text shipped with the crate, one seven-column relation per type.
pub const BUILTIN_RULES: &str = include_str!("builtin.dl");

pub const VULN_TYPES: [&str; 12] = [
    "Heap-Buffer-Overflow-Vulnerability",
    "Stack-Buffer-Overflow-Vulnerability",
    "Global-Buffer-Overflow-Vulnerability",
    "Heap-Buffer-Underflow-Vulnerability",
    "Stack-Buffer-Underflow-Vulnerability",
    "Global-Buffer-Underflow-Vulnerability",
    "Division-by-Zero-Vulnerability",
    "Integer-Overflow-Vulnerability",
    "Integer-Underflow-Vulnerability",
    "Out-of-Bounds-Vulnerability",
    "Use-After-Free-Vulnerability",
    "Double-Free-Vulnerability",
];

pub fn builtin_rules() -> Vec<Rule> {
    parse_rules(BUILTIN_RULES).expect("builtin rules parse")
}

/// Rule whose `?type` literal equals `vuln_type`.
pub fn rule_for_type<'a>(rules: &'a [Rule], vuln_type: &str) -> Option<&'a Rule> {
    let want = Value::sym(vuln_type);
    rules.iter().find(|r| r.literal_binding("type") == Some(&want))
}
