//! Tolerant parser for the textual LLVM-IR subset consumed by the analyses.
//!
//! Function headers, call sites, `getelementptr`, memory operations, integer
//! arithmetic and `!dbg` locations are recognized; every other instruction is
//! kept as [`InstrKind::Other`] with its value operands.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::LazyLock;

use regex::Regex;

use super::model::{IRFunction, IRInstruction, IRProgram, InstrKind};
use super::signature::{split_top_level, SignatureKey};
use super::types::{is_ident_char, IrType, TypeCursor};
use super::IrError;

static RESULT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^(%(?:"[^"]*"|[-\w.$]+))\s*=\s*(.*)$"#).unwrap());
static DILOCATION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^!(\d+)\s*=\s*(?:distinct\s+)?!DILocation\((.*)\)").unwrap());
static DIFILE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^!(\d+)\s*=\s*(?:distinct\s+)?!DIFile\((.*)\)").unwrap());
static DISUBPROGRAM_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^!(\d+)\s*=\s*(?:distinct\s+)?!DISubprogram\((.*)\)").unwrap());
static FIELD_NUM_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(line|column):\s*(\d+)").unwrap());
static FIELD_STR_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"\b(filename|directory):\s*"((?:[^"\\]|\\.)*)""#).unwrap());
static FIELD_FILE_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\bfile:\s*!(\d+)").unwrap());
static DBG_ATTACH_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"!dbg\s+!(\d+)").unwrap());
static TYPE_DEF_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^%("[^"]*"|[-\w.$]+)\s*=\s*type\b"#).unwrap());
static GLOBAL_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^@("[^"]*"|[-\w.$]+)\s*=\s*(.*)$"#).unwrap());
static MODULE_ID_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^;\s*ModuleID\s*=\s*'([^']*)'").unwrap());
static SOURCE_FILENAME_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r#"^source_filename\s*=\s*"([^"]*)""#).unwrap());

const HEAP_ALLOCATORS: &[&str] = &[
    "malloc",
    "calloc",
    "realloc",
    "reallocarray",
    "aligned_alloc",
    "memalign",
    "valloc",
    "pvalloc",
    "strdup",
    "strndup",
    "_Znwm",
    "_Znam",
    "_Znwj",
    "_Znaj",
    "_ZnwmRKSt9nothrow_t",
    "_ZnamRKSt9nothrow_t",
];

const DEALLOCATORS: &[&str] = &["free", "cfree", "_ZdlPv", "_ZdaPv", "_ZdlPvm", "_ZdaPvm"];

const HEADER_KEYWORDS: &[&str] = &[
    "private",
    "internal",
    "available_externally",
    "linkonce",
    "weak",
    "common",
    "appending",
    "extern_weak",
    "linkonce_odr",
    "weak_odr",
    "external",
    "default",
    "hidden",
    "protected",
    "dllimport",
    "dllexport",
    "dso_local",
    "dso_preemptable",
    "unnamed_addr",
    "local_unnamed_addr",
    "ccc",
    "fastcc",
    "coldcc",
    "tailcc",
    "swiftcc",
    "cc",
    "noundef",
    "zeroext",
    "signext",
    "inreg",
    "noalias",
    "nonnull",
    "dereferenceable",
    "dereferenceable_or_null",
    "align",
    "addrspace",
    "range",
    "nofpclass",
];

const CALL_PREFIX_WORDS: &[&str] = &[
    "fast", "nnan", "ninf", "nsz", "arcp", "contract", "afn", "reassoc", "ccc", "fastcc",
    "coldcc", "tailcc", "swiftcc", "cc", "noundef", "zeroext", "signext", "inreg", "noalias",
    "nonnull", "dereferenceable", "dereferenceable_or_null", "align", "addrspace", "range",
    "nofpclass",
];

pub(crate) fn is_heap_allocator(name: &str) -> bool {
    HEAP_ALLOCATORS.contains(&name)
}

pub(crate) fn is_deallocator(name: &str) -> bool {
    DEALLOCATORS.contains(&name)
}

/// A logical statement: one or more physical lines joined while brackets are open.
struct Statement {
    text: String,
    line: usize,
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            ';' if !in_quote => return &line[..i],
            _ => {}
        }
    }
    line
}

fn bracket_balance(s: &str) -> i32 {
    let mut in_quote = false;
    let mut depth = 0;
    for c in s.chars() {
        match c {
            '"' => in_quote = !in_quote,
            '(' | '[' if !in_quote => depth += 1,
            ')' | ']' if !in_quote => depth -= 1,
            _ => {}
        }
    }
    depth
}

fn statements(text: &str) -> Vec<Statement> {
    let mut out = Vec::new();
    let mut pending: Option<Statement> = None;
    let mut depth = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line = strip_comment(raw).trim();
        if line.is_empty() {
            continue;
        }
        match pending.as_mut() {
            Some(stmt) => {
                stmt.text.push(' ');
                stmt.text.push_str(line);
            }
            None => {
                pending = Some(Statement {
                    text: line.to_string(),
                    line: idx + 1,
                })
            }
        }
        depth += bracket_balance(line);
        if depth <= 0 {
            depth = 0;
            out.extend(pending.take());
        }
    }
    out.extend(pending);
    out
}

#[derive(Default)]
struct DebugInfo {
    locations: HashMap<u32, (u32, u32)>,
    files: HashMap<u32, String>,
    subprogram_files: HashMap<u32, u32>,
}

impl DebugInfo {
    fn collect(stmts: &[Statement]) -> Self {
        let mut info = DebugInfo::default();
        for s in stmts {
            let t = s.text.as_str();
            if !t.starts_with('!') {
                continue;
            }
            if let Some(c) = DILOCATION_RE.captures(t) {
                let id: u32 = c[1].parse().unwrap_or(0);
                let mut line = 0;
                let mut col = 0;
                for f in FIELD_NUM_RE.captures_iter(&c[2]) {
                    let v: u32 = f[2].parse().unwrap_or(0);
                    if &f[1] == "line" {
                        line = v;
                    } else {
                        col = v;
                    }
                }
                info.locations.insert(id, (line, col));
            } else if let Some(c) = DIFILE_RE.captures(t) {
                let id: u32 = c[1].parse().unwrap_or(0);
                let mut filename = String::new();
                let mut directory = String::new();
                for f in FIELD_STR_RE.captures_iter(&c[2]) {
                    if &f[1] == "filename" {
                        filename = f[2].to_string();
                    } else {
                        directory = f[2].to_string();
                    }
                }
                let path = if filename.starts_with('/') || directory.is_empty() {
                    filename
                } else {
                    format!("{}/{}", directory.trim_end_matches('/'), filename)
                };
                info.files.insert(id, path);
            } else if let Some(c) = DISUBPROGRAM_RE.captures(t) {
                let id: u32 = c[1].parse().unwrap_or(0);
                if let Some(f) = FIELD_FILE_RE.captures(&c[2]) {
                    info.subprogram_files.insert(id, f[1].parse().unwrap_or(0));
                }
            }
        }
        info
    }

    fn location(&self, stmt: &str) -> (u32, u32) {
        DBG_ATTACH_RE
            .captures(stmt)
            .and_then(|c| c[1].parse::<u32>().ok())
            .and_then(|id| self.locations.get(&id).copied())
            .unwrap_or((0, 0))
    }

    fn subprogram_file(&self, dbg: u32) -> Option<String> {
        let file = self.subprogram_files.get(&dbg)?;
        self.files.get(file).cloned()
    }
}

fn read_ident(s: &str) -> Option<(String, &str)> {
    if let Some(rest) = s.strip_prefix('"') {
        let end = rest.find('"')?;
        return Some((rest[..end].to_string(), &rest[end + 1..]));
    }
    let len: usize = s
        .chars()
        .take_while(|c| is_ident_char(*c))
        .map(char::len_utf8)
        .sum();
    (len > 0).then(|| (s[..len].to_string(), &s[len..]))
}

/// Index of the closing parenthesis matching an opening one at `open`.
fn matching_paren(s: &str, open: usize) -> Option<usize> {
    let mut depth = 0i32;
    let mut in_quote = false;
    for (i, c) in s[open..].char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '(' if !in_quote => depth += 1,
            ')' if !in_quote => {
                depth -= 1;
                if depth == 0 {
                    return Some(open + i);
                }
            }
            _ => {}
        }
    }
    None
}

fn top_level_at(s: &str) -> Option<usize> {
    let mut in_quote = false;
    let mut depth = 0;
    for (i, c) in s.char_indices() {
        match c {
            '"' => in_quote = !in_quote,
            '(' | '[' | '{' | '<' if !in_quote => depth += 1,
            ')' | ']' | '}' | '>' if !in_quote => depth -= 1,
            '@' if !in_quote && depth == 0 => return Some(i),
            _ => {}
        }
    }
    None
}

/// Skips keyword-like words (and their arguments) listed in `words`.
fn skip_words<'a>(mut s: &'a str, words: &[&str]) -> &'a str {
    loop {
        s = s.trim_start();
        let len: usize = s
            .chars()
            .take_while(|c| c.is_ascii_alphanumeric() || *c == '_')
            .count();
        if len == 0 || !words.contains(&&s[..len]) {
            return s;
        }
        let word = &s[..len];
        s = s[len..].trim_start();
        if s.starts_with('(') {
            match matching_paren(s, 0) {
                Some(end) => s = &s[end + 1..],
                None => return s,
            }
        } else if matches!(word, "align" | "cc") {
            let digits = s.bytes().take_while(u8::is_ascii_digit).count();
            s = &s[digits..];
        }
    }
}

struct Header {
    name: String,
    signature: SignatureKey,
    dbg: Option<u32>,
}

fn malformed(line: usize, message: impl Into<String>) -> IrError {
    IrError::MalformedHeader {
        line,
        message: message.into(),
    }
}

fn parse_header(text: &str, line: usize) -> Result<Header, IrError> {
    let body = text
        .strip_prefix("define")
        .or_else(|| text.strip_prefix("declare"))
        .ok_or_else(|| malformed(line, "expected define or declare"))?;
    let at = top_level_at(body).ok_or_else(|| malformed(line, "missing @name"))?;
    let prefix = skip_words(&body[..at], HEADER_KEYWORDS);
    let mut cursor = TypeCursor::new(prefix);
    let ret = cursor
        .parse_type()
        .ok_or_else(|| malformed(line, format!("cannot parse return type in `{}`", prefix.trim())))?;
    cursor.skip_ws();
    if !cursor.rest().is_empty() {
        return Err(malformed(line, format!("unexpected `{}` before function name", cursor.rest())));
    }
    let (name, after_name) =
        read_ident(&body[at + 1..]).ok_or_else(|| malformed(line, "invalid function name"))?;
    let after_name = after_name.trim_start();
    if !after_name.starts_with('(') {
        return Err(malformed(line, format!("missing parameter list for @{name}")));
    }
    let close = matching_paren(after_name, 0)
        .ok_or_else(|| malformed(line, format!("unterminated parameter list for @{name}")))?;
    let mut params = Vec::new();
    let mut variadic = false;
    for piece in split_top_level(&after_name[1..close]) {
        if piece.is_empty() {
            continue;
        }
        if piece == "..." {
            variadic = true;
            continue;
        }
        let mut c = TypeCursor::new(piece);
        let ty = c
            .parse_type()
            .ok_or_else(|| malformed(line, format!("cannot parse parameter `{piece}` of @{name}")))?;
        params.push(ty);
    }
    let dbg = DBG_ATTACH_RE
        .captures(&after_name[close..])
        .and_then(|c| c[1].parse().ok());
    Ok(Header {
        name,
        signature: SignatureKey::from_parts(&ret, &params, variadic),
        dbg,
    })
}

/// Splits `<type> <value>` and returns both.
fn typed_value(piece: &str) -> Option<(IrType, String)> {
    let mut c = TypeCursor::new(piece);
    let ty = c.parse_type()?;
    c.skip_param_attrs();
    c.skip_ws();
    let value = value_token(c.rest());
    Some((ty, value))
}

fn value_token(s: &str) -> String {
    let s = s.trim();
    if let Some(rest) = s.strip_prefix('%').or_else(|| s.strip_prefix('@')) {
        if let Some((name, _)) = read_ident(rest) {
            return format!("{}{}", &s[..1], name);
        }
    }
    s.to_string()
}

fn symbol_names(s: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = s;
    while let Some(i) = rest.find('@') {
        rest = &rest[i + 1..];
        if let Some((name, tail)) = read_ident(rest) {
            out.push(name);
            rest = tail;
        }
    }
    out
}

fn register_names(s: &str, type_names: &BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::new();
    let mut in_quote = false;
    let mut iter = s.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if c == '"' {
            in_quote = !in_quote;
            continue;
        }
        if in_quote || (c != '%' && c != '@') {
            continue;
        }
        if let Some((name, _)) = read_ident(&s[i + 1..]) {
            if c == '%' && type_names.contains(&name) {
                continue;
            }
            out.push(format!("{c}{name}"));
        }
    }
    out
}

enum CallTarget {
    Symbol(String),
    Register(String),
    Unknown,
}

struct CallSite {
    fnty: Option<IrType>,
    ret: IrType,
    target: CallTarget,
    args: Vec<(IrType, String)>,
}

fn parse_call(rest: &str) -> Option<CallSite> {
    let rest = skip_words(rest, CALL_PREFIX_WORDS);
    let mut c = TypeCursor::new(rest);
    let ty = c.parse_type()?;
    c.skip_ws();
    let (fnty, ret) = match &ty {
        IrType::Function { ret, .. } => (Some(ty.clone()), (**ret).clone()),
        _ => (None, ty),
    };
    let after = c.rest();
    let (target, after_target) = if let Some(r) = after.strip_prefix('@') {
        let (name, tail) = read_ident(r)?;
        (CallTarget::Symbol(name), tail)
    } else if let Some(r) = after.strip_prefix('%') {
        let (name, tail) = read_ident(r)?;
        (CallTarget::Register(format!("%{name}")), tail)
    } else if after.starts_with("asm") {
        return Some(CallSite {
            fnty,
            ret,
            target: CallTarget::Unknown,
            args: Vec::new(),
        });
    } else {
        // Constant expression such as `bitcast (void ()* @f to void (i32)*)`.
        let open = after.find('(')?;
        let close = matching_paren(after, open)?;
        let target = symbol_names(&after[open..close])
            .into_iter()
            .next()
            .map_or(CallTarget::Unknown, CallTarget::Symbol);
        (target, &after[close + 1..])
    };
    let after_target = after_target.trim_start();
    let mut args = Vec::new();
    if after_target.starts_with('(') {
        let close = matching_paren(after_target, 0)?;
        for piece in split_top_level(&after_target[1..close]) {
            if piece.is_empty() {
                continue;
            }
            match typed_value(piece) {
                Some(arg) => args.push(arg),
                None => args.push((IrType::Metadata, value_token(piece))),
            }
        }
    }
    Some(CallSite {
        fnty,
        ret,
        target,
        args,
    })
}

fn is_constant(token: &str) -> bool {
    !(token.starts_with('%') || token.starts_with('@'))
}

fn strip_attachments(text: &str) -> String {
    let pieces = split_top_level(text);
    let kept: Vec<&str> = pieces
        .into_iter()
        .filter(|p| !p.starts_with('!'))
        .collect();
    kept.join(", ")
}

struct InstrContext<'a> {
    type_names: &'a BTreeSet<String>,
    debug: &'a DebugInfo,
}

fn blank_instr(ordinal: usize, opcode: &str, result: Option<String>, pos: (u32, u32)) -> IRInstruction {
    IRInstruction {
        kind: InstrKind::Other,
        opcode: opcode.to_string(),
        result,
        operands: Vec::new(),
        callee: None,
        callee_signature: None,
        ty: None,
        line: pos.0,
        col: pos.1,
        ordinal,
        symbol_refs: Vec::new(),
    }
}

fn parse_instruction(stmt: &str, ordinal: usize, ctx: &InstrContext<'_>) -> IRInstruction {
    let pos = ctx.debug.location(stmt);
    let clean = strip_attachments(stmt);
    let (result, body) = match RESULT_RE.captures(&clean) {
        Some(c) => (Some(value_token(&c[1])), c[2].to_string()),
        None => (None, clean.clone()),
    };
    let mut body = body.trim();
    for prefix in ["tail ", "musttail ", "notail "] {
        if let Some(r) = body.strip_prefix(prefix) {
            body = r.trim_start();
        }
    }
    let opcode_len = body
        .chars()
        .take_while(|c| c.is_ascii_alphanumeric() || *c == '_' || *c == '.')
        .count();
    let opcode = &body[..opcode_len];
    let rest = body[opcode_len..].trim_start();
    let mut instr = blank_instr(ordinal, opcode, result, pos);

    let mut callee_symbol: Option<String> = None;
    let recognized = match opcode {
        "call" | "invoke" | "callbr" => parse_call(rest).map(|site| {
            let arg_tokens: Vec<String> = site.args.iter().map(|(_, v)| v.clone()).collect();
            match site.target {
                CallTarget::Symbol(name) => {
                    callee_symbol = Some(name.clone());
                    instr.operands = arg_tokens;
                    if name.starts_with("llvm.") {
                        instr.kind = InstrKind::Other;
                    } else {
                        instr.kind = if is_heap_allocator(&name) {
                            InstrKind::Alloc
                        } else if is_deallocator(&name) {
                            InstrKind::FreeLike
                        } else {
                            InstrKind::DirectCall
                        };
                        instr.callee = Some(name);
                    }
                }
                CallTarget::Register(reg) => {
                    let sig = match &site.fnty {
                        Some(IrType::Function { ret, params, variadic }) => {
                            SignatureKey::from_parts(ret, params, *variadic)
                        }
                        _ => {
                            let params: Vec<IrType> =
                                site.args.iter().map(|(t, _)| t.clone()).collect();
                            SignatureKey::from_parts(&site.ret, &params, false)
                        }
                    };
                    instr.kind = InstrKind::IndirectCall;
                    instr.callee_signature = Some(sig);
                    instr.operands = std::iter::once(reg).chain(arg_tokens).collect();
                }
                CallTarget::Unknown => {
                    instr.operands = arg_tokens;
                }
            }
        }),
        "getelementptr" => {
            let rest = skip_words(rest, &["inbounds", "nuw", "nusw", "inrange"]);
            let pieces = split_top_level(rest);
            (|| {
                let source = crate::ir::types::parse_type(pieces.first()?)?;
                let (_, base) = typed_value(pieces.get(1)?)?;
                let mut indices = Vec::new();
                for p in pieces.iter().skip(2) {
                    let p = skip_words(p, &["inrange"]);
                    indices.push(typed_value(p)?.1);
                }
                let field_access =
                    source.is_struct_like() && indices.len() >= 2 && indices.iter().all(|i| is_constant(i));
                instr.kind = if indices.is_empty() || field_access {
                    InstrKind::Other
                } else {
                    InstrKind::IndexAccess
                };
                instr.ty = Some(source.to_string());
                instr.operands = std::iter::once(base).chain(indices).collect();
                Some(())
            })()
        }
        "load" => {
            let rest = skip_words(rest, &["atomic", "volatile"]);
            let pieces = split_top_level(rest);
            (|| {
                let ty = crate::ir::types::parse_type(pieces.first()?)?;
                let (_, ptr) = typed_value(pieces.get(1)?)?;
                instr.kind = InstrKind::Load;
                instr.ty = Some(ty.to_string());
                instr.operands = vec![ptr];
                Some(())
            })()
        }
        "store" => {
            let rest = skip_words(rest, &["atomic", "volatile"]);
            let pieces = split_top_level(rest);
            (|| {
                let (ty, value) = typed_value(pieces.first()?)?;
                let (_, ptr) = typed_value(pieces.get(1)?)?;
                instr.kind = InstrKind::Store;
                instr.ty = Some(ty.to_string());
                instr.operands = vec![value, ptr];
                Some(())
            })()
        }
        "alloca" => {
            let rest = skip_words(rest, &["inalloca"]);
            let pieces = split_top_level(rest);
            (|| {
                let ty = crate::ir::types::parse_type(pieces.first()?)?;
                instr.kind = InstrKind::Alloc;
                instr.ty = Some(ty.to_string());
                if let Some(count) = pieces.get(1).filter(|p| !p.starts_with("align")) {
                    instr.operands = vec![typed_value(count)?.1];
                }
                Some(())
            })()
        }
        "add" | "sub" | "mul" | "shl" | "sdiv" | "udiv" | "srem" | "urem" => {
            let rest = skip_words(rest, &["nuw", "nsw", "exact", "disjoint"]);
            let pieces = split_top_level(rest);
            (|| {
                let (ty, lhs) = typed_value(pieces.first()?)?;
                let rhs = value_token(pieces.get(1)?);
                if !ty.is_integer() {
                    return None;
                }
                instr.kind = if matches!(opcode, "sdiv" | "udiv" | "srem" | "urem") {
                    InstrKind::IntDiv
                } else {
                    InstrKind::IntArith
                };
                instr.ty = Some(ty.to_string());
                instr.operands = vec![lhs, rhs];
                Some(())
            })()
        }
        _ => None,
    };
    if recognized.is_none() {
        instr.kind = InstrKind::Other;
        instr.callee = None;
        instr.callee_signature = None;
        if instr.operands.is_empty() {
            instr.operands = register_names(rest, ctx.type_names);
        }
    }

    let mut refs = symbol_names(&body[opcode_len..]);
    if let Some(callee) = &callee_symbol {
        if let Some(i) = refs.iter().position(|r| r == callee) {
            refs.remove(i);
        }
    }
    instr.symbol_refs = refs;
    instr
}

fn module_name(text: &str) -> String {
    for line in text.lines().take(16) {
        let line = line.trim();
        if let Some(c) = MODULE_ID_RE.captures(line) {
            return c[1].to_string();
        }
        if let Some(c) = SOURCE_FILENAME_RE.captures(line) {
            return c[1].to_string();
        }
    }
    "module".to_string()
}

/// Parses one textual IR module, naming it after its `ModuleID` or
/// `source_filename` line.
pub fn load_ir_module(text: &str) -> Result<IRProgram, IrError> {
    load_ir_module_named(&module_name(text), text)
}

/// Parses one textual IR module under an explicit module name.
pub fn load_ir_module_named(name: &str, text: &str) -> Result<IRProgram, IrError> {
    if text.trim().is_empty() {
        return Err(IrError::EmptyInput);
    }
    let stmts = statements(text);
    let debug = DebugInfo::collect(&stmts);
    let type_names: BTreeSet<String> = stmts
        .iter()
        .filter_map(|s| TYPE_DEF_RE.captures(&s.text))
        .map(|c| c[1].trim_matches('"').to_string())
        .collect();
    let ctx = InstrContext {
        type_names: &type_names,
        debug: &debug,
    };

    let mut functions: Vec<IRFunction> = Vec::new();
    let mut globals = BTreeSet::new();
    let mut global_refs = BTreeSet::new();
    let mut iter = stmts.iter();
    while let Some(stmt) = iter.next() {
        let t = stmt.text.as_str();
        if t.starts_with("define") {
            let brace = t.rfind('{');
            let header_text = brace.map_or(t, |b| &t[..b]);
            let header = parse_header(header_text.trim(), stmt.line)?;
            let mut instructions = Vec::new();
            // A body may share the header line: `define void @f() { ret void }`.
            let inline_body = brace.map(|b| t[b + 1..].trim()).unwrap_or("");
            let mut closed = false;
            let mut body_lines: Vec<String> = Vec::new();
            if !inline_body.is_empty() {
                let inner = inline_body.strip_suffix('}').map(str::trim);
                closed = inner.is_some();
                let inner = inner.unwrap_or(inline_body);
                if !inner.is_empty() {
                    body_lines.push(inner.to_string());
                }
            }
            if !closed {
                for body in iter.by_ref() {
                    if body.text == "}" {
                        closed = true;
                        break;
                    }
                    body_lines.push(body.text.clone());
                }
            }
            if !closed {
                return Err(malformed(stmt.line, format!("unterminated body of @{}", header.name)));
            }
            for line in body_lines {
                if is_label(&line) {
                    continue;
                }
                let ordinal = instructions.len();
                instructions.push(parse_instruction(&line, ordinal, &ctx));
            }
            let source_file = header.dbg.and_then(|d| debug.subprogram_file(d));
            functions.push(IRFunction {
                name: header.name,
                signature: header.signature,
                is_definition: true,
                is_address_taken: false,
                instructions,
                source_file,
            });
        } else if t.starts_with("declare") {
            let header = parse_header(t, stmt.line)?;
            functions.push(IRFunction {
                name: header.name,
                signature: header.signature,
                is_definition: false,
                is_address_taken: false,
                instructions: Vec::new(),
                source_file: None,
            });
        } else if let Some(c) = GLOBAL_RE.captures(t) {
            let gname = c[1].trim_matches('"').to_string();
            global_refs.extend(symbol_names(&c[2]).into_iter().filter(|n| *n != gname));
            let kind_words = strip_attachments(&c[2]);
            if !kind_words.contains(" alias ") && !kind_words.starts_with("alias ") {
                globals.insert(gname);
            }
        }
    }

    merge_duplicate_declarations(&mut functions);
    add_implicit_declarations(&mut functions);

    let mut link_table = BTreeMap::new();
    for f in &functions {
        link_table.insert(f.name.clone(), name.to_string());
    }
    let mut program = IRProgram {
        functions,
        module_names: vec![name.to_string()],
        link_table,
        collisions: Vec::new(),
        globals,
        global_refs,
    };
    program.recompute_address_taken();
    Ok(program)
}

fn is_label(line: &str) -> bool {
    let Some(head) = line.strip_suffix(':') else {
        return false;
    };
    let head = head.trim();
    !head.is_empty()
        && (head.chars().all(is_ident_char) || (head.starts_with('"') && head.ends_with('"')))
}

/// Keeps the definition when a name is both declared and defined.
fn merge_duplicate_declarations(functions: &mut Vec<IRFunction>) {
    let defined: BTreeSet<String> = functions
        .iter()
        .filter(|f| f.is_definition)
        .map(|f| f.name.clone())
        .collect();
    let mut seen = BTreeSet::new();
    functions.retain(|f| {
        if !f.is_definition && defined.contains(&f.name) {
            return false;
        }
        seen.insert((f.name.clone(), f.is_definition))
    });
}

/// Gives every called-but-undeclared symbol a declaration entry.
fn add_implicit_declarations(functions: &mut Vec<IRFunction>) {
    let known: BTreeSet<String> = functions.iter().map(|f| f.name.clone()).collect();
    let mut missing: BTreeMap<String, SignatureKey> = BTreeMap::new();
    for f in functions.iter() {
        for i in &f.instructions {
            if let Some(callee) = &i.callee {
                if !known.contains(callee) {
                    missing.entry(callee.clone()).or_insert_with(|| {
                        SignatureKey::from_parts(&IrType::Void, &[], true)
                    });
                }
            }
        }
    }
    for (name, signature) in missing {
        functions.push(IRFunction {
            name,
            signature,
            is_definition: false,
            is_address_taken: false,
            instructions: Vec::new(),
            source_file: None,
        });
    }
}
