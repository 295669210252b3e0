use std::fmt;
use std::str::FromStr;

use super::AgentError;
use crate::reach::base_name;
use crate::rules::{VulnEntry, VulnReport};

/// A function name with an optional source line, written `func[:line]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeLocation {
    pub function: String,
    pub line: Option<u64>,
}

impl FromStr for CodeLocation {
    type Err = AgentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let (function, line) = match s.rsplit_once(':') {
            Some((f, l)) if l.chars().all(|c| c.is_ascii_digit()) && !l.is_empty() => {
                (f, Some(l.parse().map_err(|_| AgentError::InvalidLocation(s.into()))?))
            }
            _ => (s, None),
        };
        if function.is_empty() {
            return Err(AgentError::InvalidLocation(s.into()));
        }
        Ok(CodeLocation {
            function: function.to_string(),
            line,
        })
    }
}

impl fmt::Display for CodeLocation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "{}:{l}", self.function),
            None => f.write_str(&self.function),
        }
    }
}

fn matches(entry: &VulnEntry, function: &str) -> bool {
    entry.vulnerable_function == function || base_name(&entry.vulnerable_function) == base_name(function)
}

/// Entry for the location's function, nearest line first, then lowest number.
pub fn select_entry(report: &VulnReport, loc: &CodeLocation) -> Result<(String, VulnEntry), AgentError> {
    if report.is_empty() {
        return Err(AgentError::EmptyReport);
    }
    let distance = |e: &VulnEntry| match (loc.line, e.vulnerable_program_location.parse::<u64>()) {
        (Some(want), Ok(have)) => want.abs_diff(have),
        (Some(_), Err(_)) => u64::MAX,
        (None, _) => 0,
    };
    report
        .entries
        .iter()
        .enumerate()
        .filter(|(_, (_, e))| matches(e, &loc.function))
        .min_by_key(|(i, (_, e))| (distance(e), *i))
        .map(|(_, (k, e))| (k.clone(), e.clone()))
        .ok_or_else(|| {
            let mut available: Vec<String> = report.entries.iter().map(|(_, e)| e.vulnerable_function.clone()).collect();
            available.sort();
            available.dedup();
            AgentError::NoMatchingEntry {
                location: loc.to_string(),
                available,
            }
        })
}
