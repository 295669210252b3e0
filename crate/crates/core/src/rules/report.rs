use std::collections::{BTreeMap, HashMap};
use std::sync::LazyLock;

use regex::Regex;
use serde::ser::SerializeMap;
use serde::{Deserialize, Serialize, Serializer};

use super::eval::VulnFinding;
use super::RuleError;
use crate::reach::{extract_path, ReachabilityGraph, TaintPath};

static COMPARISON_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s*(<=|>=|!=)\s*").unwrap());
static PLACEHOLDER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\?([A-Za-z_][A-Za-z0-9_]*)").unwrap());

/// Normalizes spacing so every `<=`, `>=` and `!=` has one space on each side.
pub fn canonical_assertion(text: &str) -> String {
    COMPARISON_RE.replace_all(text, " $1 ").into_owned()
}

/// Substitutes `?name` placeholders and normalizes comparison spacing.
pub fn format_assertion(template: &str, bindings: &BTreeMap<String, String>) -> Result<String, RuleError> {
    let mut missing = None;
    let filled = PLACEHOLDER_RE.replace_all(template, |c: &regex::Captures<'_>| match bindings.get(&c[1]) {
        Some(v) => v.clone(),
        None => {
            missing.get_or_insert_with(|| c[1].to_string());
            String::new()
        }
    });
    if let Some(name) = missing {
        return Err(RuleError::UnboundVariable(name));
    }
    Ok(canonical_assertion(&filled))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VulnEntry {
    #[serde(rename = "Vulnerability Type")]
    pub vulnerability_type: String,
    #[serde(rename = "Vulnerable Function")]
    pub vulnerable_function: String,
    #[serde(rename = "Entrypoint")]
    pub entrypoint: String,
    #[serde(rename = "Taint Path")]
    pub taint_path: String,
    #[serde(rename = "Vulnerable Program Location")]
    pub vulnerable_program_location: String,
    #[serde(rename = "Template Assertion Violation")]
    pub template_assertion_violation: String,
}

impl VulnEntry {
    /// Function names of the stringified taint path.
    pub fn path_functions(&self) -> Vec<String> {
        let inner = self.taint_path.trim().trim_start_matches('[').trim_end_matches(']');
        inner
            .split(", ")
            .map(|s| s.trim().trim_matches('\'').to_string())
            .filter(|s| !s.is_empty())
            .collect()
    }
}

/// Ordered `potential_target_<n>` entries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VulnReport {
    pub entries: Vec<(String, VulnEntry)>,
    /// Findings left out because their function is unreachable.
    pub dropped: usize,
}

impl Serialize for VulnReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let mut map = s.serialize_map(Some(self.entries.len()))?;
        for (k, v) in &self.entries {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

const KEY_PREFIX: &str = "potential_target_";

impl VulnReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let map: HashMap<String, VulnEntry> = serde_json::from_str(text)?;
        let mut entries: Vec<(String, VulnEntry)> = map.into_iter().collect();
        entries.sort_by_key(|(k, _)| {
            let n = k.strip_prefix(KEY_PREFIX).and_then(|n| n.parse::<u64>().ok());
            (n.is_none(), n, k.clone())
        });
        Ok(VulnReport { entries, dropped: 0 })
    }

    pub fn get(&self, key: &str) -> Option<&VulnEntry> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, e)| e)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One entry per finding in a reachable function, numbered densely from 1
/// in (type, function, line) order.
pub fn build_report(findings: &[VulnFinding], reach: &ReachabilityGraph) -> VulnReport {
    let mut sorted: Vec<&VulnFinding> = findings.iter().collect();
    sorted.sort();
    let mut paths: HashMap<&str, Option<TaintPath>> = HashMap::new();
    let mut report = VulnReport::default();
    for f in sorted {
        let path = paths
            .entry(f.func.as_str())
            .or_insert_with(|| extract_path(reach, &f.func).ok());
        let Some(path) = path else {
            log::info!("dropping {} in unreachable function {}", f.vuln_type, f.func);
            report.dropped += 1;
            continue;
        };
        let key = format!("{KEY_PREFIX}{}", report.entries.len() + 1);
        report.entries.push((
            key,
            VulnEntry {
                vulnerability_type: f.vuln_type.clone(),
                vulnerable_function: f.func.clone(),
                entrypoint: path.entrypoint().to_string(),
                taint_path: path.to_list_string(),
                vulnerable_program_location: f.line.to_string(),
                template_assertion_violation: f.assertion.clone(),
            },
        ));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reach::{filter_reachable, CallGraph, DirectEdge};
    use crate::rules::facts::Value;

    fn bind(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn assertion_formats() {
        let t = "0 <= ?op2<=SIZEOF(?op1)";
        assert_eq!(
            format_assertion(
                t,
                &bind(&[
                    ("op2", "</tmp/full_project.bc>:evax_bfd_print_dst:126:0:5"),
                    ("op1", "</tmp/full_project.bc>:evax_bfd_print_dst:%106"),
                ])
            )
            .unwrap(),
            "0 <= </tmp/full_project.bc>:evax_bfd_print_dst:126:0:5 <= SIZEOF(</tmp/full_project.bc>:evax_bfd_print_dst:%106)"
        );
        assert_eq!(
            format_assertion(
                t,
                &bind(&[("op2", "get_register_operand:30:0:0"), ("op1", "get_register_operand:%25")])
            )
            .unwrap(),
            "0 <= get_register_operand:30:0:0 <= SIZEOF(get_register_operand:%25)"
        );
        assert_eq!(format_assertion("x != 0", &BTreeMap::new()).unwrap(), "x != 0");
        assert_eq!(
            format_assertion("?a != 0", &BTreeMap::new()),
            Err(RuleError::UnboundVariable("a".into()))
        );
    }

    fn finding(ty: &str, func: &str, line: i64) -> VulnFinding {
        VulnFinding {
            vuln_type: ty.into(),
            func: func.into(),
            line: Value::Int(line),
            instr: format!("{func}#0"),
            assertion: "a".into(),
            op1: "x".into(),
            op2: "y".into(),
        }
    }

    fn reach() -> ReachabilityGraph {
        let g = CallGraph {
            nodes: ["m", "f", "dead"].iter().map(|s| s.to_string()).collect(),
            direct_edges: vec![DirectEdge { caller: "m".into(), callee: "f".into(), site: 0 }],
            indirect_edges: vec![],
        };
        filter_reachable(&g, &["m".to_string()]).unwrap()
    }

    #[test]
    fn unreachable_findings_are_dropped() {
        let fs = vec![finding("B", "f", 3), finding("A", "dead", 1), finding("A", "f", 9)];
        let r = build_report(&fs, &reach());
        assert_eq!(r.dropped, 1);
        let keys: Vec<_> = r.entries.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(keys, ["potential_target_1", "potential_target_2"]);
        let e = r.get("potential_target_1").unwrap();
        assert_eq!(e.vulnerability_type, "A");
        assert_eq!(e.taint_path, "['m', 'f']");
        assert_eq!(e.entrypoint, "m");
        assert_eq!(e.vulnerable_program_location, "9");
        assert_eq!(e.path_functions(), vec!["m", "f"]);
    }

    #[test]
    fn json_round_trip_keeps_numeric_order() {
        let fs: Vec<_> = (1..=11).map(|l| finding("A", "f", l)).collect();
        let r = build_report(&fs, &reach());
        let json = r.to_json();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["potential_target_1"].as_object().unwrap().len(), 6);
        assert!(json.find("potential_target_2\"").unwrap() < json.find("potential_target_10").unwrap());
        let back = VulnReport::from_json(&json).unwrap();
        assert_eq!(back.entries, r.entries);
    }
}
