use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SanitizerKind {
    #[default]
    Address,
    Memory,
    Undefined,
}

impl SanitizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SanitizerKind::Address => "address",
            SanitizerKind::Memory => "memory",
            SanitizerKind::Undefined => "undefined",
        }
    }

    /// Human name used in task instructions.
    pub fn display_name(self) -> &'static str {
        match self {
            SanitizerKind::Address => "AddressSanitizer",
            SanitizerKind::Memory => "MemorySanitizer",
            SanitizerKind::Undefined => "UndefinedBehaviorSanitizer",
        }
    }

    /// Compiler and linker flags enabling this sanitizer.
    pub fn flags(self) -> &'static [&'static str] {
        match self {
            SanitizerKind::Address => &["-fsanitize=address", "-fno-omit-frame-pointer"],
            SanitizerKind::Memory => &["-fsanitize=memory", "-fsanitize-memory-track-origins", "-fno-omit-frame-pointer"],
            SanitizerKind::Undefined => &["-fsanitize=undefined", "-fno-sanitize-recover=all"],
        }
    }

    /// Substring that starts a report from this sanitizer's runtime.
    pub fn report_marker(self) -> &'static str {
        match self {
            SanitizerKind::Address => "ERROR: AddressSanitizer",
            SanitizerKind::Memory => "WARNING: MemorySanitizer",
            SanitizerKind::Undefined => "runtime error:",
        }
    }
}

impl fmt::Display for SanitizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SanitizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "address" | "asan" => Ok(SanitizerKind::Address),
            "memory" | "msan" => Ok(SanitizerKind::Memory),
            "undefined" | "ubsan" => Ok(SanitizerKind::Undefined),
            other => Err(format!("unknown sanitizer `{other}`")),
        }
    }
}

fn normalize(vuln_type: &str) -> String {
    let lower = vuln_type.trim().to_ascii_lowercase().replace(['_', ' '], "-");
    lower.strip_suffix("-vulnerability").unwrap_or(&lower).to_string()
}

/// Sanitizer that detects a vulnerability type; AddressSanitizer by default.
pub fn assign_sanitizer(vuln_type: &str) -> SanitizerKind {
    let t = normalize(vuln_type);
    if t.contains("uninit") {
        return SanitizerKind::Memory;
    }
    const UNDEFINED: &[&str] = &[
        "division-by-zero",
        "divide-by-zero",
        "integer-overflow",
        "integer-underflow",
        "null-deref",
        "null-dereference",
        "null-pointer-dereference",
    ];
    if UNDEFINED.contains(&t.as_str()) {
        return SanitizerKind::Undefined;
    }
    SanitizerKind::Address
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spelled_variants() {
        assert_eq!(assign_sanitizer("Heap-buffer-overflow"), SanitizerKind::Address);
        assert_eq!(assign_sanitizer("Division-by-zero"), SanitizerKind::Undefined);
        assert_eq!(assign_sanitizer("Division-by-Zero-Vulnerability"), SanitizerKind::Undefined);
        assert_eq!(assign_sanitizer("use-of-uninitialized-value"), SanitizerKind::Memory);
        assert_eq!(assign_sanitizer("SomethingNew"), SanitizerKind::Address);
        assert_eq!(assign_sanitizer("Null-Deref"), SanitizerKind::Undefined);
    }

    #[test]
    fn parse_round_trip() {
        for k in [SanitizerKind::Address, SanitizerKind::Memory, SanitizerKind::Undefined] {
            assert_eq!(k.as_str().parse::<SanitizerKind>().unwrap(), k);
        }
        assert!("thread".parse::<SanitizerKind>().is_err());
    }
}
