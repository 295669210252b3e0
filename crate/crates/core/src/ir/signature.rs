use std::fmt;

use serde::{Deserialize, Serialize};

use super::types::{parse_type, IrType};
use super::IrError;

/// Normalized function signature used for indirect-call matching.
///
/// The canonical text is `ret(param,param,...)` with every pointer collapsed
/// to `ptr` and no whitespace, e.g. `i1(ptr,ptr)` or `i32(i32,...)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignatureKey(String);

impl SignatureKey {
    pub(crate) fn from_parts(ret: &IrType, params: &[IrType], variadic: bool) -> Self {
        let ty = IrType::Function {
            ret: Box::new(ret.clone()),
            params: params.to_vec(),
            variadic,
        };
        SignatureKey(ty.to_string())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_variadic(&self) -> bool {
        self.0.ends_with("...)")
    }

    /// Return-type text and fixed parameter texts.
    fn split(&self) -> (&str, Vec<&str>) {
        let open = top_level_open_paren(&self.0).unwrap_or(self.0.len());
        let ret = &self.0[..open];
        let inner = self
            .0
            .get(open + 1..self.0.len().saturating_sub(1))
            .unwrap_or("");
        let params = split_top_level(inner)
            .into_iter()
            .filter(|p| !p.is_empty() && *p != "...")
            .collect();
        (ret, params)
    }

    /// Whether a call through a pointer with signature `self` may reach a
    /// function whose signature is `callee`.
    ///
    /// Non-variadic sites need exact equality. A variadic site matches only
    /// a variadic callee with the same return type whose fixed parameters
    /// are a prefix of the site's (or vice versa).
    pub fn call_compatible(&self, callee: &SignatureKey) -> bool {
        if !self.is_variadic() || !callee.is_variadic() {
            return !self.is_variadic() && !callee.is_variadic() && self == callee;
        }
        let (site_ret, site_params) = self.split();
        let (callee_ret, callee_params) = callee.split();
        if site_ret != callee_ret {
            return false;
        }
        let n = site_params.len().min(callee_params.len());
        site_params[..n] == callee_params[..n]
    }
}

impl fmt::Display for SignatureKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn top_level_open_paren(s: &str) -> Option<usize> {
    let mut depth = 0i32;
    for (i, c) in s.char_indices() {
        match c {
            '[' | '{' | '<' => depth += 1,
            ']' | '}' | '>' => depth -= 1,
            '(' if depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

pub(crate) fn split_top_level(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0i32;
    let mut in_quote = false;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '(' | '[' | '{' | '<' if !in_quote => depth += 1,
            ')' | ']' | '}' | '>' if !in_quote => depth -= 1,
            ',' if depth == 0 && !in_quote => {
                out.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    let tail = s[start..].trim();
    if !tail.is_empty() || !out.is_empty() {
        out.push(tail);
    }
    out
}

/// Normalizes an IR function-type spelling such as `i1 (%struct.bfd*, i8*)`.
pub fn normalize_signature(raw: &str) -> Result<SignatureKey, IrError> {
    match parse_type(raw.trim()) {
        Some(IrType::Function { ret, params, variadic }) => {
            Ok(SignatureKey::from_parts(&ret, &params, variadic))
        }
        _ => Err(IrError::UnparsableType(raw.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn typed_pointer_signature() {
        let key = normalize_signature("i1 (%struct.bfd*, i8*)").unwrap();
        assert_eq!(key.as_str(), "i1(ptr,ptr)");
    }

    #[test]
    fn empty_and_variadic() {
        assert_eq!(normalize_signature("void ()").unwrap().as_str(), "void()");
        assert_eq!(normalize_signature("i32 (i32, ...)").unwrap().as_str(), "i32(i32,...)");
        assert_eq!(normalize_signature("void (...)").unwrap().as_str(), "void(...)");
    }

    #[test]
    fn widths_are_kept() {
        assert_eq!(
            normalize_signature("double (i64, float, ptr addrspace(3))").unwrap().as_str(),
            "double(i64,float,ptr)"
        );
    }

    #[test]
    fn non_function_types_are_rejected() {
        assert!(matches!(normalize_signature("i32"), Err(IrError::UnparsableType(_))));
        assert!(normalize_signature("i32 (i32").is_err());
        assert!(normalize_signature("foo (i32)").is_err());
    }

    #[test]
    fn variadic_prefix_compatibility() {
        let site = normalize_signature("i32 (i8*, ...)").unwrap();
        let printf = normalize_signature("i32 (ptr, ...)").unwrap();
        let longer = normalize_signature("i32 (ptr, i32, ...)").unwrap();
        let fixed = normalize_signature("i32 (ptr)").unwrap();
        let other_ret = normalize_signature("void (ptr, ...)").unwrap();
        assert!(site.call_compatible(&printf));
        assert!(site.call_compatible(&longer));
        assert!(!site.call_compatible(&fixed));
        assert!(!fixed.call_compatible(&printf));
        assert!(!site.call_compatible(&other_ret));
    }

    fn arb_scalar() -> impl Strategy<Value = String> {
        prop_oneof![
            (1u32..=128).prop_map(|w| format!("i{w}")),
            Just("float".to_string()),
            Just("double".to_string()),
            Just("ptr".to_string()),
            Just("%struct.bfd*".to_string()),
            Just("i8 *".to_string()),
            Just("%union.u".to_string()),
        ]
    }

    fn arb_type() -> impl Strategy<Value = String> {
        arb_scalar().prop_recursive(3, 16, 4, |inner| {
            prop_oneof![
                (1u64..64, inner.clone()).prop_map(|(n, t)| format!("[{n} x {t}]")),
                prop::collection::vec(inner.clone(), 1..4)
                    .prop_map(|fs| format!("{{ {} }}", fs.join(", "))),
                inner.prop_map(|t| format!("{t}*")),
            ]
        })
    }

    fn arb_signature() -> impl Strategy<Value = String> {
        (
            prop_oneof![Just("void".to_string()), arb_type()],
            prop::collection::vec(arb_type(), 0..5),
            any::<bool>(),
            " {0,2}",
        )
            .prop_map(|(ret, params, variadic, ws)| {
                let mut ps = params;
                if variadic {
                    ps.push("...".to_string());
                }
                format!("{ret}{ws}({})", ps.join(&format!(",{ws}")))
            })
    }

    proptest! {
        #[test]
        fn normalization_is_total_and_idempotent(raw in arb_signature()) {
            let once = normalize_signature(&raw).unwrap();
            let twice = normalize_signature(once.as_str()).unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert!(!once.as_str().contains(' ') || once.as_str().contains(" x "));
            prop_assert!(!once.as_str().contains('*'));
        }
    }
}
